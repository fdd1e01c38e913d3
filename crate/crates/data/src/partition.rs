//! Label-skewed client partitioning with a per-class Dirichlet prior.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::{DataError, ImageSet, Result, TaskSpec};

/// The slice of one task's training set held privately by one client.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub task_id: usize,
    pub examples: ImageSet,
    /// Positions of `examples` within the task's training set.
    pub positions: Vec<usize>,
}

impl ClientShard {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// One Dirichlet(`alpha`, ..., `alpha`) draw over `k` outcomes.
pub(crate) fn dirichlet(alpha: f64, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.into_iter().map(|g| g / total).collect()
    } else {
        // Every gamma underflowed (tiny alpha): the limit is a random vertex.
        let mut p = vec![0.0; k];
        p[rng.random_range(0..k)] = 1.0;
        p
    }
}

/// Integer allocation of `total` items proportional to `weights`, rounding by
/// largest remainder (ties go to the lower index). Sums to `total` exactly.
pub(crate) fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let quotas: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Splits `task.train` across `n_clients`.
///
/// For every class (in `task.class_ids` order) the class's samples are
/// shuffled, a Dirichlet(`alpha`) vector over clients is drawn, and the
/// samples are dealt out in largest-remainder proportions. Shards may be
/// empty. Each shard lists its samples in task order.
pub fn partition_lda(task: &TaskSpec, n_clients: usize, alpha: f64, seed: u64) -> Result<Vec<ClientShard>> {
    if n_clients == 0 {
        return Err(DataError::Config("partition needs at least one client".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(DataError::Config(format!("Dirichlet alpha must be positive, got {alpha}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut owned: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    for &class in &task.class_ids {
        let mut members = task.train.positions_of(&[class]);
        members.shuffle(&mut rng);
        let p = if n_clients == 1 {
            vec![1.0]
        } else {
            dirichlet(alpha, n_clients, &mut rng)
        };
        let counts = largest_remainder(&p, members.len());
        let mut rest = members.as_slice();
        for (client, &count) in counts.iter().enumerate() {
            let (head, tail) = rest.split_at(count);
            owned[client].extend_from_slice(head);
            rest = tail;
        }
    }
    Ok(owned
        .into_iter()
        .enumerate()
        .map(|(client_id, mut positions)| {
            positions.sort_unstable();
            ClientShard {
                client_id,
                task_id: task.task_id,
                examples: task.train.subset(&positions),
                positions,
            }
        })
        .collect())
}
