//! Feature-extractor architectures.

use serde::{Deserialize, Serialize};

use crate::layers::{Declarations, Layer};
use crate::{ModelError, Result};

fn yes() -> bool {
    true
}

/// Declarative description of a feature extractor. The classification head
/// is not part of the architecture; it grows with the known classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ArchConfig {
    /// `[conv3x3 -> batch-norm -> relu -> maxpool]` per entry of `channels`,
    /// then flatten, a dense layer to `feature_dim`, and relu.
    SmallCnn {
        input: [usize; 3],
        channels: Vec<usize>,
        feature_dim: usize,
        #[serde(default = "yes")]
        batch_norm: bool,
    },
    /// CIFAR-style ResNet-18 (3x3 stem, four stages of two basic blocks,
    /// global average pooling). The feature width is `8 * width`.
    Resnet18 { input: [usize; 3], width: usize },
}

impl ArchConfig {
    pub fn small_cnn(input: [usize; 3], channels: Vec<usize>, feature_dim: usize) -> Self {
        ArchConfig::SmallCnn {
            input,
            channels,
            feature_dim,
            batch_norm: true,
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            ArchConfig::SmallCnn { .. } => "small-cnn",
            ArchConfig::Resnet18 { .. } => "resnet18",
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        match self {
            ArchConfig::SmallCnn { input, .. } | ArchConfig::Resnet18 { input, .. } => *input,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            ArchConfig::SmallCnn { feature_dim, .. } => *feature_dim,
            ArchConfig::Resnet18 { width, .. } => 8 * width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [c, h, w] = self.input_shape();
        if c == 0 || h == 0 || w == 0 {
            return Err(ModelError::Config(format!("empty input shape {:?}", self.input_shape())));
        }
        match self {
            ArchConfig::SmallCnn {
                channels, feature_dim, ..
            } => {
                if channels.is_empty() || channels.contains(&0) || *feature_dim == 0 {
                    return Err(ModelError::Config(format!(
                        "small-cnn needs non-zero channels and feature_dim, got {channels:?} / {feature_dim}"
                    )));
                }
                if h >> channels.len() == 0 || w >> channels.len() == 0 {
                    return Err(ModelError::Config(format!(
                        "{h}x{w} input is too small for {} pooling stages",
                        channels.len()
                    )));
                }
            }
            ArchConfig::Resnet18 { width, .. } => {
                if *width == 0 {
                    return Err(ModelError::Config("resnet18 width must be positive".into()));
                }
            }
        }
        if Declarations::of(&self.layers()).batch_norms.is_empty() {
            return Err(ModelError::Config(format!(
                "{} has no batch-norm layers; generator training matches their statistics",
                self.id()
            )));
        }
        Ok(())
    }

    /// The extractor as a layer list; parameter names start with `features.`.
    pub fn layers(&self) -> Vec<Layer> {
        match self {
            ArchConfig::SmallCnn {
                input,
                channels,
                feature_dim,
                batch_norm,
            } => small_cnn(*input, channels, *feature_dim, *batch_norm),
            ArchConfig::Resnet18 { input, width } => resnet18(input[0], *width),
        }
    }
}

fn conv(name: String, in_ch: usize, out_ch: usize, kernel: usize, stride: usize, bias: bool) -> Layer {
    Layer::Conv {
        name,
        in_ch,
        out_ch,
        kernel,
        stride,
        padding: kernel / 2,
        bias,
    }
}

fn bn(name: String, channels: usize) -> Layer {
    Layer::BatchNorm { name, channels }
}

fn small_cnn(input: [usize; 3], channels: &[usize], feature_dim: usize, batch_norm: bool) -> Vec<Layer> {
    let [mut in_ch, mut h, mut w] = input;
    let mut layers = Vec::new();
    for (i, &out_ch) in channels.iter().enumerate() {
        layers.push(conv(format!("features.conv{i}"), in_ch, out_ch, 3, 1, !batch_norm));
        if batch_norm {
            layers.push(bn(format!("features.bn{i}"), out_ch));
        }
        layers.push(Layer::Relu);
        layers.push(Layer::MaxPool2);
        in_ch = out_ch;
        h /= 2;
        w /= 2;
    }
    layers.push(Layer::Flatten);
    layers.push(Layer::Linear {
        name: "features.fc".into(),
        in_dim: in_ch * h * w,
        out_dim: feature_dim,
    });
    layers.push(Layer::Relu);
    layers
}

fn basic_block(prefix: &str, in_ch: usize, out_ch: usize, stride: usize) -> Vec<Layer> {
    let body = vec![
        conv(format!("{prefix}.conv1"), in_ch, out_ch, 3, stride, false),
        bn(format!("{prefix}.bn1"), out_ch),
        Layer::Relu,
        conv(format!("{prefix}.conv2"), out_ch, out_ch, 3, 1, false),
        bn(format!("{prefix}.bn2"), out_ch),
    ];
    let shortcut = if stride != 1 || in_ch != out_ch {
        vec![
            conv(format!("{prefix}.shortcut.conv"), in_ch, out_ch, 1, stride, false),
            bn(format!("{prefix}.shortcut.bn"), out_ch),
        ]
    } else {
        Vec::new()
    };
    vec![Layer::Residual { body, shortcut }, Layer::Relu]
}

fn resnet18(in_ch: usize, width: usize) -> Vec<Layer> {
    let mut layers = vec![
        conv("features.conv1".into(), in_ch, width, 3, 1, false),
        bn("features.bn1".into(), width),
        Layer::Relu,
    ];
    let mut ch = width;
    for (stage, mult) in [1, 2, 4, 8].into_iter().enumerate() {
        let out = width * mult;
        for block in 0..2 {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            layers.extend(basic_block(&format!("features.layer{}.{block}", stage + 1), ch, out, stride));
            ch = out;
        }
    }
    layers.push(Layer::GlobalAvgPool);
    layers
}
