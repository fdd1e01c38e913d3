//! Classifier state: feature extractor plus a head with one row per class.

use std::collections::BTreeSet;

use fedgtg_autograd::{Graph, ParamMap, Sgd, Tensor, Var};
use ndarray::{concatenate, Array1, Array2, Array4, Axis, Ix1, Ix2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arch::ArchConfig;
use crate::init::Init;
use crate::layers::{self, apply_running_updates, Binding, Declarations, Mode, Trace};
use crate::{ModelError, Result};

pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

/// Which parameters become trainable leaves when bound to a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trainable {
    All,
    HeadOnly,
    Frozen,
}

impl Trainable {
    fn admits(self, name: &str) -> bool {
        match self {
            Trainable::All => true,
            Trainable::HeadOnly => name.starts_with("head."),
            Trainable::Frozen => false,
        }
    }
}

/// Head logits, plus the head positions of a requested class mask.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub logits: Array2<f64>,
    pub mask: Option<Vec<usize>>,
}

/// Feature extractor and incremental linear head.
///
/// Head row `j` scores class `known_classes[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub arch: ArchConfig,
    pub params: ParamMap,
    pub buffers: ParamMap,
    pub known_classes: Vec<usize>,
    pub feature_dim: usize,
    pub seed: u64,
}

impl ModelState {
    /// Seeded initialization with one head row per entry of `initial_classes`.
    pub fn init_backbone(arch: &ArchConfig, initial_classes: &[usize], seed: u64) -> Result<Self> {
        arch.validate()?;
        if initial_classes.is_empty() {
            return Err(ModelError::Contract("a model needs at least one class".into()));
        }
        let (params, buffers) = Declarations::of(&arch.layers()).materialize(seed);
        let d = arch.feature_dim();
        let mut model = Self {
            arch: arch.clone(),
            params,
            buffers,
            known_classes: Vec::new(),
            feature_dim: d,
            seed,
        };
        model.params.insert(HEAD_WEIGHT.into(), Tensor::zeros(ndarray::IxDyn(&[0, d])));
        model.params.insert(HEAD_BIAS.into(), Tensor::zeros(ndarray::IxDyn(&[0])));
        model.extend_head(initial_classes)
    }

    pub fn n_classes(&self) -> usize {
        self.known_classes.len()
    }

    fn head_row(&self, class: usize) -> Array1<f64> {
        let bound = 1.0 / (self.feature_dim as f64).sqrt();
        Init::Uniform { bound }
            .sample(&[self.feature_dim], self.seed, &format!("head.row.{class}"))
            .into_dimensionality::<Ix1>()
            .unwrap()
    }

    /// Appends one seeded head row (zero bias) per new class. Every existing
    /// parameter is left bit-identical.
    pub fn extend_head(&self, new_class_ids: &[usize]) -> Result<Self> {
        let mut seen: BTreeSet<usize> = self.known_classes.iter().copied().collect();
        for &c in new_class_ids {
            if !seen.insert(c) {
                return Err(ModelError::Contract(format!("class {c} is already in the head")));
            }
        }
        let mut out = self.clone();
        if new_class_ids.is_empty() {
            return Ok(out);
        }
        let w = self.head_weight();
        let rows: Vec<Array1<f64>> = new_class_ids.iter().map(|&c| self.head_row(c)).collect();
        let views: Vec<_> = rows.iter().map(|r| r.view().insert_axis(Axis(0))).collect();
        let added = concatenate(Axis(0), &views).unwrap();
        let w = concatenate(Axis(0), &[w.view(), added.view()]).unwrap();
        let mut b = self.head_bias().to_vec();
        b.extend(std::iter::repeat_n(0.0, new_class_ids.len()));
        out.params.insert(HEAD_WEIGHT.into(), w.into_dyn());
        out.params.insert(HEAD_BIAS.into(), Array1::from(b).into_dyn());
        out.known_classes.extend_from_slice(new_class_ids);
        Ok(out)
    }

    pub fn head_weight(&self) -> Array2<f64> {
        self.params[HEAD_WEIGHT].clone().into_dimensionality::<Ix2>().unwrap()
    }

    pub fn head_bias(&self) -> Array1<f64> {
        self.params[HEAD_BIAS].clone().into_dimensionality::<Ix1>().unwrap()
    }

    /// Head positions of `classes`, in the given order.
    pub fn head_positions(&self, classes: &[usize]) -> Result<Vec<usize>> {
        classes
            .iter()
            .map(|c| {
                self.known_classes
                    .iter()
                    .position(|k| k == c)
                    .ok_or_else(|| ModelError::Contract(format!("class {c} is not known to the model")))
            })
            .collect()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let expected = self.arch.input_shape();
        if shape.len() != 4 || shape[1..] != expected {
            return Err(ModelError::Contract(format!(
                "input batch {shape:?} does not match [n, {}, {}, {}]",
                expected[0], expected[1], expected[2]
            )));
        }
        Ok(())
    }

    /// Eval-mode features `[n, feature_dim]`.
    pub fn forward_features(&self, batch: &Array4<f64>) -> Result<Array2<f64>> {
        self.check_input(batch.shape())?;
        if batch.shape()[0] == 0 {
            return Ok(Array2::zeros((0, self.feature_dim)));
        }
        let g = Graph::new();
        let b = self.bind(&g, Trainable::Frozen);
        let f = self.features(&b, g.constant(batch.clone().into_dyn()), Mode::Eval, &mut Trace::new());
        Ok(f.value().as_ref().clone().into_dimensionality::<Ix2>().unwrap())
    }

    /// Logits over every known class. With `class_mask`, the head positions of
    /// those classes are returned alongside for the caller's softmax.
    pub fn forward_head(&self, features: &Array2<f64>, class_mask: Option<&[usize]>) -> Result<HeadOutput> {
        if features.ncols() != self.feature_dim {
            return Err(ModelError::Contract(format!(
                "features of width {} for a head of width {}",
                features.ncols(),
                self.feature_dim
            )));
        }
        let mask = class_mask.map(|m| self.head_positions(m)).transpose()?;
        let logits = features.dot(&self.head_weight().t()) + &self.head_bias();
        Ok(HeadOutput { logits, mask })
    }

    /// Eval-mode logits for an image batch.
    pub fn logits(&self, batch: &Array4<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_head(&self.forward_features(batch)?, None)?.logits)
    }

    pub fn batch_norm_names(&self) -> Vec<String> {
        Declarations::of(&self.arch.layers()).batch_norms
    }

    /// Running `(mean, variance)` of every batch-norm layer, in forward order.
    pub fn bn_statistics(&self) -> Vec<(Array1<f64>, Array1<f64>)> {
        self.batch_norm_names()
            .iter()
            .map(|n| {
                let get = |s: &str| {
                    self.buffers[&format!("{n}.{s}")]
                        .clone()
                        .into_dimensionality::<Ix1>()
                        .unwrap()
                };
                (get("running_mean"), get("running_var"))
            })
            .collect()
    }

    pub fn bind<'g>(&self, graph: &'g Graph, trainable: Trainable) -> Binding<'g> {
        Binding::new(graph, &self.params, |n| trainable.admits(n))
    }

    /// Extractor forward on the tape.
    pub fn features<'g>(&self, b: &Binding<'g>, x: Var<'g>, mode: Mode, trace: &mut Trace<'g>) -> Var<'g> {
        layers::forward(&self.arch.layers(), x, b, &self.buffers, mode, trace)
    }

    /// Head forward on the tape: `[n, d] -> [n, q]`.
    pub fn head<'g>(&self, b: &Binding<'g>, features: Var<'g>) -> Var<'g> {
        features.linear(&b.var(HEAD_WEIGHT), &b.var(HEAD_BIAS))
    }

    /// Folds a train-mode trace into the running statistics.
    pub fn absorb(&mut self, trace: &Trace<'_>) {
        apply_running_updates(&mut self.buffers, &trace.updates);
    }

    pub fn sgd_step(&mut self, opt: &Sgd, grads: &ParamMap) {
        opt.step(&mut self.params, grads);
    }

    /// Parameter names of the extractor (everything except the head).
    pub fn extractor_param_names(&self) -> Vec<String> {
        self.params.keys().filter(|k| !k.starts_with("head.")).cloned().collect()
    }

    /// SHA-256 over class list, parameters and buffers.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.known_classes {
            h.update((*c as u64).to_le_bytes());
        }
        hash_map(&mut h, &self.params);
        hash_map(&mut h, &self.buffers);
        hex::encode(h.finalize())
    }
}

pub(crate) fn hash_map(h: &mut Sha256, map: &ParamMap) {
    for (name, t) in map {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        for &d in t.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for v in t.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
}

/// SHA-256 of a single parameter map, for order-independent keys.
pub fn param_digest(map: &ParamMap) -> String {
    let mut h = Sha256::new();
    hash_map(&mut h, map);
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use fedgtg_autograd::Graph;
    use ndarray::{arr1, arr2, Array4};
    use proptest::prelude::*;

    use super::*;

    fn arch() -> ArchConfig {
        ArchConfig::small_cnn([3, 8, 8], vec![4, 6], 5)
    }

    fn images(n: usize, seed: u64) -> Array4<f64> {
        let t = Init::Uniform { bound: 1.0 }.sample(&[n, 3, 8, 8], seed, "x");
        t.into_dimensionality().unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = ModelState::init_backbone(&arch(), &[0, 1], 4).unwrap();
        let b = ModelState::init_backbone(&arch(), &[0, 1], 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, ModelState::init_backbone(&arch(), &[0, 1], 5).unwrap());
    }

    #[test]
    fn two_classes_give_two_logits() {
        let m = ModelState::init_backbone(&arch(), &[3, 7], 0).unwrap();
        assert_eq!(m.logits(&images(1, 0)).unwrap().shape(), &[1, 2]);
        assert_eq!(m.forward_features(&images(2, 0)).unwrap().shape(), &[2, 5]);
    }

    #[test]
    fn empty_class_list_is_rejected() {
        assert!(matches!(
            ModelState::init_backbone(&arch(), &[], 0),
            Err(ModelError::Contract(_))
        ));
    }

    #[test]
    fn wrong_input_shape_is_a_contract_violation() {
        let m = ModelState::init_backbone(&arch(), &[0], 0).unwrap();
        let bad = Array4::zeros((1, 3, 4, 4));
        assert!(matches!(m.forward_features(&bad), Err(ModelError::Contract(_))));
    }

    #[test]
    fn extend_head_appends_rows() {
        let m = ModelState::init_backbone(&arch(), &[0, 1], 0).unwrap();
        let e = m.extend_head(&[2, 3]).unwrap();
        assert_eq!(e.n_classes(), 4);
        assert_eq!(e.head_weight().slice(ndarray::s![..2, ..]), m.head_weight());
        for (k, v) in &m.params {
            if !k.starts_with("head.") {
                assert_eq!(&e.params[k], v);
            }
        }
        assert_eq!(m.extend_head(&[]).unwrap(), m);
        assert!(matches!(m.extend_head(&[1]), Err(ModelError::Contract(_))));
        assert!(matches!(m.extend_head(&[5, 5]), Err(ModelError::Contract(_))));
    }

    #[test]
    fn head_rows_do_not_depend_on_extension_order() {
        let once = ModelState::init_backbone(&arch(), &[0, 1, 2], 9).unwrap();
        let stepwise = ModelState::init_backbone(&arch(), &[0], 9)
            .unwrap()
            .extend_head(&[1])
            .unwrap()
            .extend_head(&[2])
            .unwrap();
        assert_eq!(once, stepwise);
    }

    #[test]
    fn old_logits_survive_a_large_extension() {
        let m = ModelState::init_backbone(&arch(), &[0, 1], 2).unwrap();
        let x = images(3, 1);
        let before = m.logits(&x).unwrap();
        let after = m.extend_head(&(2..10).collect::<Vec<_>>()).unwrap().logits(&x).unwrap();
        assert_eq!(after.slice(ndarray::s![.., ..2]), before);
    }

    #[test]
    fn head_is_an_affine_map() {
        let mut m = ModelState::init_backbone(&ArchConfig::small_cnn([3, 8, 8], vec![4], 3), &[0, 1], 0).unwrap();
        m.params.insert(HEAD_WEIGHT.into(), arr2(&[[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]]).into_dyn());
        m.params.insert(HEAD_BIAS.into(), arr1(&[0.0, 0.0]).into_dyn());
        let out = m.forward_head(&arr2(&[[0.5, -1.0, 2.0]]), None).unwrap();
        // [0.5 - 2 + 6, -0.5 - 0.5 + 0]
        assert_eq!(out.logits, arr2(&[[4.5, -1.0]]));
        let zero = m.forward_head(&Array2::zeros((1, 3)), None).unwrap();
        assert!(zero.logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_mask_matches_unmasked_call_and_unknown_mask_fails() {
        let m = ModelState::init_backbone(&arch(), &[4, 2], 0).unwrap();
        let f = m.forward_features(&images(2, 3)).unwrap();
        let plain = m.forward_head(&f, None).unwrap();
        let masked = m.forward_head(&f, Some(&[4, 2])).unwrap();
        assert_eq!(plain.logits, masked.logits);
        assert_eq!(masked.mask, Some(vec![0, 1]));
        assert!(matches!(m.forward_head(&f, Some(&[9])), Err(ModelError::Contract(_))));
    }

    #[test]
    fn fresh_statistics_are_standard() {
        let m = ModelState::init_backbone(&arch(), &[0], 0).unwrap();
        let stats = m.bn_statistics();
        assert_eq!(stats.len(), 2);
        for (mean, var) in stats {
            assert!(mean.iter().all(|&v| v == 0.0));
            assert!(var.iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn train_forward_moves_running_mean_by_momentum() {
        let mut m = ModelState::init_backbone(&arch(), &[0], 0).unwrap();
        let x = Array4::from_elem((4, 3, 8, 8), 0.7);
        let g = Graph::new();
        let b = m.bind(&g, Trainable::Frozen);
        let mut trace = Trace::new();
        m.features(&b, g.constant(x.into_dyn()), Mode::Train, &mut trace);
        // The first batch-norm sees conv0(x); its batch mean is the input mean.
        let batch_mean = trace.stats[0].mean.value().as_ref().clone();
        m.absorb(&trace);
        let (mean, _) = &m.bn_statistics()[0];
        for (r, b) in mean.iter().zip(batch_mean.iter()) {
            assert!((r - crate::layers::BN_MOMENTUM * b).abs() < 1e-15);
        }
    }

    #[test]
    fn digest_tracks_every_parameter() {
        let m = ModelState::init_backbone(&arch(), &[0], 0).unwrap();
        let mut n = m.clone();
        assert_eq!(m.digest(), n.digest());
        n.buffers.get_mut("features.bn0.running_var").unwrap()[[0]] += 1e-12;
        assert_ne!(m.digest(), n.digest());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn eval_features_do_not_depend_on_batch_company(seed in any::<u64>(), n in 2usize..5) {
            let m = ModelState::init_backbone(&arch(), &[0, 1], seed).unwrap();
            let x = images(n, seed);
            let batched = m.forward_features(&x).unwrap();
            for i in 0..n {
                let single = m.forward_features(&x.slice(ndarray::s![i..i + 1, .., .., ..]).to_owned()).unwrap();
                for (a, b) in single.row(0).iter().zip(batched.row(i).iter()) {
                    prop_assert!((a - b).abs() < 1e-5);
                }
            }
        }
    }
}
