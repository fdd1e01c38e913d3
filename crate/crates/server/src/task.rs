//! One task of the protocol: rounds of select, broadcast, local training and
//! aggregation, then generator training and the feature matrix.

use fedgtg_losses::HyperParams;
use fedgtg_models::{derive_seed, GeneratorConfig, ModelState};
use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{
    aggregate, compute_efm, sample_weights, select_clients, train_data_generator, train_feature_generator, Broadcast,
    ClientPool, ClientUpdate, GeneratorBudget, LocalReport, PreviousTaskBundle, Result, RoundReport, RunLog,
    ServerError,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub rounds: usize,
    pub participation: f64,
    pub generator: GeneratorConfig,
    pub budget: GeneratorBudget,
    pub hp: HyperParams,
    pub efm_samples: usize,
    /// Train both generators and the feature matrix at the end of each task
    /// and require them from the second task on. Off for baselines.
    pub twin_generators: bool,
    /// Train selected clients concurrently. Results do not depend on it.
    pub parallel: bool,
    pub seed: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            rounds: 100,
            participation: 1.0,
            generator: GeneratorConfig::default(),
            budget: GeneratorBudget::default(),
            hp: HyperParams::cifar(),
            efm_samples: 1024,
            twin_generators: true,
            parallel: false,
            seed: 0,
        }
    }
}

impl ServerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(ServerError::Config("rounds must be at least 1".into()));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(ServerError::Config(format!("participation {} outside (0, 1]", self.participation)));
        }
        if self.efm_samples == 0 {
            return Err(ServerError::Config("efm_samples must be at least 1".into()));
        }
        self.budget.validate()?;
        self.hp.validate()?;
        Ok(())
    }
}

/// Server state carried between tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    pub global: ModelState,
    /// Present once a task has finished with generator training.
    pub previous: Option<PreviousTaskBundle>,
}

#[derive(Debug, Clone)]
pub struct TaskOutcome {
    pub state: ServerState,
    pub rounds: Vec<RoundReport>,
    pub client_reports: Vec<LocalReport>,
    pub data_gen_losses: Vec<f64>,
    pub feat_gen_losses: Vec<f64>,
}

/// Observes the aggregated global model at the end of every round.
pub type Evaluator<'a> = dyn Fn(&ModelState) -> Option<f64> + Sync + 'a;

fn head_for_task(global: &ModelState, classes: &[usize]) -> Result<ModelState> {
    let fresh: Vec<usize> = classes.iter().copied().filter(|c| !global.known_classes.contains(c)).collect();
    if !fresh.is_empty() && fresh.len() != classes.len() {
        return Err(ServerError::Contract(format!("task classes {classes:?} are partly known")));
    }
    Ok(global.extend_head(&fresh)?)
}

/// Runs task `task_id` on `classes` starting from `state`.
///
/// The head is extended with any classes it does not know yet.
/// `state.previous` is broadcast unchanged in every round; with
/// `cfg.twin_generators` it must be present from the second task on. When
/// `make_bundle` is also set, both generators are trained against the final
/// global model and the feature matrix is computed; the result becomes the
/// next task's bundle.
#[allow(clippy::too_many_arguments)]
pub fn run_task(
    pool: &dyn ClientPool,
    task_id: usize,
    classes: &[usize],
    state: ServerState,
    cfg: &ServerConfig,
    make_bundle: bool,
    evaluate: Option<&Evaluator<'_>>,
    mut log: Option<&mut RunLog>,
) -> Result<TaskOutcome> {
    cfg.validate()?;
    if task_id == 0 {
        return Err(ServerError::Contract("task ids start at 1".into()));
    }
    let previous = if task_id >= 2 { state.previous } else { None };
    if cfg.twin_generators && task_id >= 2 && previous.is_none() {
        return Err(ServerError::Contract(format!("task {task_id} needs the previous task's artifacts")));
    }
    let mut global = head_for_task(&state.global, classes)?;
    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut client_reports = Vec::new();

    for round_id in 0..cfg.rounds {
        let selected = select_clients(
            pool.n_clients(),
            cfg.participation,
            derive_seed(cfg.seed, &format!("select.{task_id}.{round_id}")),
        )?;
        let broadcast = Broadcast {
            task_id,
            round_id,
            global: global.clone(),
            current_classes: classes.to_vec(),
            previous: previous.clone(),
        };
        let train = |&id: &usize| -> Result<ClientUpdate> {
            let seed = derive_seed(cfg.seed, &format!("client.{task_id}.{round_id}.{id}"));
            let update = pool.train(id, &broadcast, seed)?;
            if update.client_id != id {
                return Err(ServerError::Client {
                    client_id: id,
                    message: format!("answered as client {}", update.client_id),
                });
            }
            Ok(update)
        };
        let updates: Vec<ClientUpdate> = if cfg.parallel {
            selected.par_iter().map(train).collect::<Result<_>>()?
        } else {
            selected.iter().map(train).collect::<Result<_>>()?
        };

        let counts: Vec<usize> = updates.iter().map(|u| u.n_samples).collect();
        let weights = sample_weights(&counts)?;
        let models: Vec<ModelState> = updates.iter().map(|u| u.model.clone()).collect();
        global = aggregate(&models, &weights)?;

        let report = RoundReport {
            task_id,
            round_id,
            selected_clients: selected,
            aggregate_weights: weights,
            global_eval_accuracy: evaluate.and_then(|f| f(&global)),
        };
        debug!("task {task_id} round {round_id}: accuracy {:?}", report.global_eval_accuracy);
        if let Some(log) = log.as_deref_mut() {
            for u in &updates {
                log.append("client", &u.report)?;
            }
            log.append("round", &report)?;
        }
        client_reports.extend(updates.into_iter().map(|u| u.report));
        rounds.push(report);
    }

    let mut outcome = TaskOutcome {
        state: ServerState {
            global: global.clone(),
            previous: None,
        },
        rounds,
        client_reports,
        data_gen_losses: Vec::new(),
        feat_gen_losses: Vec::new(),
    };
    if make_bundle && cfg.twin_generators {
        info!("task {task_id}: training generators");
        let gen_seed = derive_seed(cfg.seed, &format!("generators.{task_id}"));
        let n_current = classes.len();
        let data = train_data_generator(&global, &cfg.generator, &cfg.budget, &cfg.hp, n_current, gen_seed)?;
        let feat = train_feature_generator(&global, &cfg.generator, &cfg.budget, &cfg.hp, n_current, gen_seed)?;
        let efm = compute_efm(
            &feat.generator,
            &global,
            cfg.efm_samples,
            task_id,
            derive_seed(cfg.seed, &format!("efm.{task_id}")),
        )?;
        outcome.data_gen_losses = data.losses;
        outcome.feat_gen_losses = feat.losses;
        outcome.state.previous = Some(PreviousTaskBundle {
            prev_global: global,
            data_gen: data.generator,
            feat_gen: feat.generator,
            efm,
        });
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use fedgtg_models::ArchConfig;

    use super::*;

    /// Shifts every parameter by a client- and seed-dependent amount.
    struct ShiftPool {
        n: usize,
        bundles_seen: AtomicUsize,
    }

    impl ClientPool for ShiftPool {
        fn n_clients(&self) -> usize {
            self.n
        }

        fn train(&self, client_id: usize, b: &Broadcast, seed: u64) -> Result<ClientUpdate> {
            if b.previous.is_some() {
                self.bundles_seen.fetch_add(1, Ordering::SeqCst);
            }
            let mut model = b.global.clone();
            let shift = (client_id as f64 + 1.0) * 1e-3 + (seed % 7) as f64 * 1e-4;
            model.params.values_mut().for_each(|t| t.mapv_inplace(|v| v + shift));
            Ok(ClientUpdate {
                client_id,
                model,
                n_samples: 10 * (client_id + 1),
                report: LocalReport {
                    client_id,
                    task_id: b.task_id,
                    round_id: b.round_id,
                    ..Default::default()
                },
            })
        }
    }

    fn pool(n: usize) -> ShiftPool {
        ShiftPool {
            n,
            bundles_seen: AtomicUsize::new(0),
        }
    }

    fn start() -> ServerState {
        let arch = ArchConfig::small_cnn([3, 8, 8], vec![2], 4);
        ServerState {
            global: ModelState::init_backbone(&arch, &[0, 1], 3).unwrap(),
            previous: None,
        }
    }

    fn cfg(rounds: usize) -> ServerConfig {
        ServerConfig {
            rounds,
            generator: GeneratorConfig {
                noise_dim: Some(6),
                base_channels: 4,
                hidden: 8,
                ..Default::default()
            },
            budget: GeneratorBudget {
                steps: 2,
                batch_size: 8,
                lr: 1e-3,
            },
            efm_samples: 16,
            ..Default::default()
        }
    }

    #[test]
    fn single_client_round_returns_that_clients_model() {
        let p = pool(1);
        let s = start();
        let out = run_task(&p, 1, &[0, 1], s.clone(), &cfg(1), false, None, None).unwrap();
        let b = Broadcast {
            task_id: 1,
            round_id: 0,
            global: s.global,
            current_classes: vec![0, 1],
            previous: None,
        };
        let expected = p.train(0, &b, derive_seed(0, "client.1.0.0")).unwrap().model;
        assert_eq!(out.state.global, expected);
        assert_eq!(out.rounds[0].aggregate_weights, vec![1.0]);
    }

    #[test]
    fn first_task_broadcasts_no_bundle_and_later_tasks_do() {
        let p = pool(3);
        let first = run_task(&p, 1, &[0, 1], start(), &cfg(2), true, None, None).unwrap();
        assert_eq!(p.bundles_seen.load(Ordering::SeqCst), 0);
        let bundle = first.state.previous.clone().unwrap();
        assert_eq!(bundle.prev_global, first.state.global);
        assert!(bundle.efm.check().is_ok());
        assert_eq!(first.data_gen_losses.len(), 2);

        let second = run_task(&p, 2, &[2, 3], first.state, &cfg(2), false, None, None).unwrap();
        assert_eq!(p.bundles_seen.load(Ordering::SeqCst), 6);
        assert_eq!(second.state.global.known_classes, vec![0, 1, 2, 3]);
        assert!(second.state.previous.is_none());
        for r in &second.rounds {
            assert!((r.aggregate_weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn later_task_without_bundle_needs_generators_off() {
        assert!(run_task(&pool(1), 2, &[2], start(), &cfg(1), false, None, None).is_err());
        let baseline = ServerConfig {
            twin_generators: false,
            ..cfg(1)
        };
        let p = pool(1);
        let out = run_task(&p, 2, &[2], start(), &baseline, true, None, None).unwrap();
        assert!(out.state.previous.is_none());
        assert_eq!(p.bundles_seen.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn parallel_and_sequential_rounds_agree() {
        let p = pool(4);
        let mut c = cfg(3);
        c.participation = 0.5;
        let seq = run_task(&p, 1, &[0, 1], start(), &c, false, None, None).unwrap();
        c.parallel = true;
        let par = run_task(&p, 1, &[0, 1], start(), &c, false, None, None).unwrap();
        assert_eq!(seq.state.global.digest(), par.state.global.digest());
        assert_eq!(seq.rounds, par.rounds);
    }

    #[test]
    fn rounds_are_logged_with_evaluations() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        let mut log = RunLog::open(&path).unwrap();
        let eval = |_: &ModelState| Some(0.25);
        let out = run_task(&pool(2), 1, &[0, 1], start(), &cfg(2), false, Some(&eval), Some(&mut log)).unwrap();
        assert!(out.rounds.iter().all(|r| r.global_eval_accuracy == Some(0.25)));
        assert_eq!(crate::read_records(&path, "round").unwrap().len(), 2);
        assert_eq!(crate::read_records(&path, "client").unwrap().len(), 4);
    }
}
