//! Noise-to-image and noise-to-feature generators.

use fedgtg_autograd::{Graph, ParamMap, Tensor, Var};
use ndarray::{Array2, ArrayD, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::layers::{self, Binding, Declarations, Layer, Mode, Trace};
use crate::model::{hash_map, ModelState};
use crate::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    /// Noise to images shaped like the teacher's input.
    Data,
    /// Noise to vectors of the teacher's feature width.
    Feature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Noise width; `None` means `max(100, q)`.
    pub noise_dim: Option<usize>,
    /// Channels after the data generator's first dense layer.
    pub base_channels: usize,
    /// Hidden width of the feature generator.
    pub hidden: usize,
    pub leaky_slope: f64,
    /// Data-generator outputs lie in `[-output_bound, output_bound]`.
    pub output_bound: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            noise_dim: None,
            base_channels: 128,
            hidden: 512,
            leaky_slope: 0.2,
            output_bound: 2.5,
        }
    }
}

impl GeneratorConfig {
    pub fn noise_dim_for(&self, q: usize) -> usize {
        self.noise_dim.unwrap_or(q.max(100))
    }
}

/// A generator and the frozen classifier it was trained against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorState {
    pub kind: GeneratorKind,
    pub config: GeneratorConfig,
    pub params: ParamMap,
    pub buffers: ParamMap,
    pub noise_dim: usize,
    /// `[c, h, w]` for images, `[d]` for features.
    pub output_shape: Vec<usize>,
    pub teacher: ModelState,
    pub seed: u64,
}

fn data_layers(cfg: &GeneratorConfig, noise_dim: usize, image: [usize; 3]) -> Result<Vec<Layer>> {
    let [channels, h, w] = image;
    let blocks = if h.max(w) > 32 { 3 } else { 2 };
    let (ih, iw) = (h >> blocks, w >> blocks);
    if ih == 0 || iw == 0 || ih << blocks != h || iw << blocks != w {
        return Err(ModelError::Config(format!(
            "{h}x{w} images are not reachable by {blocks} doublings"
        )));
    }
    let ch = cfg.base_channels;
    if ch < 2 {
        return Err(ModelError::Config("data generator needs at least 2 base channels".into()));
    }
    let mut layers = vec![
        Layer::Linear {
            name: "gen.fc".into(),
            in_dim: noise_dim,
            out_dim: ch * ih * iw,
        },
        Layer::Reshape(vec![ch, ih, iw]),
    ];
    let mut in_ch = ch;
    for b in 0..blocks {
        let out_ch = if b + 1 == blocks { ch / 2 } else { ch };
        layers.extend([
            Layer::Upsample2,
            Layer::Conv {
                name: format!("gen.block{b}.conv"),
                in_ch,
                out_ch,
                kernel: 3,
                stride: 1,
                padding: 1,
                bias: false,
            },
            Layer::BatchNorm {
                name: format!("gen.block{b}.bn"),
                channels: out_ch,
            },
            Layer::LeakyRelu(cfg.leaky_slope),
        ]);
        in_ch = out_ch;
    }
    layers.push(Layer::Conv {
        name: "gen.out".into(),
        in_ch,
        out_ch: channels,
        kernel: 3,
        stride: 1,
        padding: 1,
        bias: true,
    });
    layers.push(Layer::Tanh(cfg.output_bound));
    Ok(layers)
}

fn feature_layers(cfg: &GeneratorConfig, noise_dim: usize, d: usize) -> Vec<Layer> {
    let h = cfg.hidden;
    vec![
        Layer::Linear {
            name: "gen.fc1".into(),
            in_dim: noise_dim,
            out_dim: h,
        },
        Layer::LeakyRelu(cfg.leaky_slope),
        Layer::Linear {
            name: "gen.fc2".into(),
            in_dim: h,
            out_dim: h,
        },
        Layer::LeakyRelu(cfg.leaky_slope),
        Layer::Linear {
            name: "gen.fc3".into(),
            in_dim: h,
            out_dim: d,
        },
    ]
}

impl GeneratorState {
    fn init(kind: GeneratorKind, cfg: &GeneratorConfig, teacher: &ModelState, seed: u64) -> Result<Self> {
        let q = teacher.n_classes();
        let noise_dim = cfg.noise_dim_for(q);
        if noise_dim < q {
            return Err(ModelError::Config(format!(
                "noise_dim {noise_dim} is smaller than the {q} known classes"
            )));
        }
        let output_shape = match kind {
            GeneratorKind::Data => teacher.arch.input_shape().to_vec(),
            GeneratorKind::Feature => vec![teacher.feature_dim],
        };
        let mut state = Self {
            kind,
            config: cfg.clone(),
            params: ParamMap::new(),
            buffers: ParamMap::new(),
            noise_dim,
            output_shape,
            teacher: teacher.clone(),
            seed,
        };
        let (params, buffers) = Declarations::of(&state.layers()?).materialize(seed);
        state.params = params;
        state.buffers = buffers;
        Ok(state)
    }

    pub fn init_data_generator(cfg: &GeneratorConfig, teacher: &ModelState, seed: u64) -> Result<Self> {
        Self::init(GeneratorKind::Data, cfg, teacher, seed)
    }

    pub fn init_feature_generator(cfg: &GeneratorConfig, teacher: &ModelState, seed: u64) -> Result<Self> {
        Self::init(GeneratorKind::Feature, cfg, teacher, seed)
    }

    /// Number of classes labels are drawn from.
    pub fn q(&self) -> usize {
        self.teacher.n_classes()
    }

    pub fn layers(&self) -> Result<Vec<Layer>> {
        match self.kind {
            GeneratorKind::Data => {
                let s = &self.output_shape;
                data_layers(&self.config, self.noise_dim, [s[0], s[1], s[2]])
            }
            GeneratorKind::Feature => Ok(feature_layers(&self.config, self.noise_dim, self.output_shape[0])),
        }
    }

    pub fn bind<'g>(&self, graph: &'g Graph, trainable: bool) -> Binding<'g> {
        Binding::new(graph, &self.params, |_| trainable)
    }

    /// Forward on the tape: `[n, noise_dim] -> [n, ..output_shape]`.
    pub fn forward<'g>(&self, b: &Binding<'g>, z: Var<'g>, mode: Mode, trace: &mut Trace<'g>) -> Var<'g> {
        let layers = self.layers().expect("layers validated at init");
        layers::forward(&layers, z, b, &self.buffers, mode, trace)
    }

    /// Eval-mode output for a noise batch.
    pub fn generate(&self, noise: &Array2<f64>) -> Result<ArrayD<f64>> {
        if noise.ncols() != self.noise_dim {
            return Err(ModelError::Contract(format!(
                "noise width {} for a generator expecting {}",
                noise.ncols(),
                self.noise_dim
            )));
        }
        let g = Graph::new();
        let b = self.bind(&g, false);
        let out = self.forward(&b, g.constant(noise.clone().into_dyn()), Mode::Eval, &mut Trace::new());
        Ok(out.value().as_ref().clone())
    }

    /// `batch` eval-mode samples labelled from their noise.
    pub fn sample(&self, batch: usize, seed: u64) -> Result<SyntheticBatch> {
        let (noise, labels) = sample_noise_labels(batch, self.q(), self.noise_dim, seed)?;
        Ok(SyntheticBatch {
            payload: self.generate(&noise)?,
            labels,
        })
    }

    /// SHA-256 over generator parameters and buffers (not the teacher).
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        hash_map(&mut h, &self.params);
        hash_map(&mut h, &self.buffers);
        hex::encode(h.finalize())
    }
}

/// Generated inputs with labels in `[0, q)` (head positions of the teacher).
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBatch {
    /// `[n, c, h, w]` images or `[n, d]` features.
    pub payload: Tensor,
    pub labels: Vec<usize>,
}

impl SyntheticBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn check(&self, q: usize) -> Result<()> {
        if self.payload.shape().first() != Some(&self.labels.len()) {
            return Err(ModelError::Contract(format!(
                "payload {:?} for {} labels",
                self.payload.shape(),
                self.labels.len()
            )));
        }
        if let Some(l) = self.labels.iter().find(|&&l| l >= q) {
            return Err(ModelError::Contract(format!("label {l} outside [0, {q})")));
        }
        Ok(())
    }
}

/// Standard-normal noise `[batch, noise_dim]` and labels
/// `argmax(noise[i, ..q])`.
pub fn sample_noise_labels(batch: usize, q: usize, noise_dim: usize, seed: u64) -> Result<(Array2<f64>, Vec<usize>)> {
    if q == 0 {
        return Err(ModelError::Contract("labels need at least one class".into()));
    }
    if noise_dim < q {
        return Err(ModelError::Contract(format!(
            "noise_dim {noise_dim} cannot carry {q} label coordinates"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Array2::from_shape_simple_fn((batch, noise_dim), || StandardNormal.sample(&mut rng));
    let labels = noise_labels(&noise, q);
    Ok((noise, labels))
}

/// Argmax over the first `q` coordinates of each row (first index on ties).
pub fn noise_labels(noise: &Array2<f64>, q: usize) -> Vec<usize> {
    noise
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for j in 1..q {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
