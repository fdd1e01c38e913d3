//! Procedural test-set corruptions with five severity levels each.
//!
//! All transforms act on normalized images and never touch labels. Severity
//! parameters (normalized-pixel units where relevant):
//!
//! | kind             | 1    | 2    | 3    | 4    | 5    | parameter                      |
//! |------------------|------|------|------|------|------|--------------------------------|
//! | `gaussian_noise` | 0.16 | 0.24 | 0.32 | 0.36 | 0.40 | noise standard deviation       |
//! | `gaussian_blur`  | 0.4  | 0.6  | 0.7  | 0.8  | 1.0  | kernel sigma (pixels)          |
//! | `contrast`       | 0.75 | 0.5  | 0.4  | 0.3  | 0.15 | factor toward per-image mean   |
//! | `pixelate`       | 0.95 | 0.9  | 0.85 | 0.75 | 0.65 | resolution scale before upsize |

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayViewMut2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{DataError, Result, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    GaussianBlur,
    Contrast,
    Pixelate,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 4] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::GaussianBlur,
        CorruptionKind::Contrast,
        CorruptionKind::Pixelate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::GaussianNoise => "gaussian_noise",
            Self::GaussianBlur => "gaussian_blur",
            Self::Contrast => "contrast",
            Self::Pixelate => "pixelate",
        }
    }

    fn table(self) -> [f64; 5] {
        match self {
            Self::GaussianNoise => [0.16, 0.24, 0.32, 0.36, 0.40],
            Self::GaussianBlur => [0.4, 0.6, 0.7, 0.8, 1.0],
            Self::Contrast => [0.75, 0.5, 0.4, 0.3, 0.15],
            Self::Pixelate => [0.95, 0.9, 0.85, 0.75, 0.65],
        }
    }

    /// Parameter value at which the transform is the identity.
    pub fn identity_parameter(self) -> f64 {
        match self {
            Self::GaussianNoise | Self::GaussianBlur => 0.0,
            Self::Contrast | Self::Pixelate => 1.0,
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| DataError::Config(format!("unsupported corruption `{s}`")))
    }
}

/// A corruption kind at a severity level `1..=5`, or at an explicit
/// parameter value (used for identity and extreme-strength probes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter_override: Option<f64>,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8) -> Result<Self> {
        if !(1..=5).contains(&severity) {
            return Err(DataError::Config(format!("severity {severity} outside 1..=5")));
        }
        Ok(Self {
            kind,
            severity,
            parameter_override: None,
        })
    }

    pub fn with_parameter(kind: CorruptionKind, parameter: f64) -> Self {
        Self {
            kind,
            severity: 0,
            parameter_override: Some(parameter),
        }
    }

    pub fn identity(kind: CorruptionKind) -> Self {
        Self::with_parameter(kind, kind.identity_parameter())
    }

    pub fn parse(kind: &str, severity: u8) -> Result<Self> {
        Self::new(kind.parse()?, severity)
    }

    pub fn parameter(&self) -> Result<f64> {
        match self.parameter_override {
            Some(p) => Ok(p),
            None if (1..=5).contains(&self.severity) => Ok(self.kind.table()[self.severity as usize - 1]),
            None => Err(DataError::Config(format!("severity {} outside 1..=5", self.severity))),
        }
    }

    pub fn label(&self) -> String {
        match self.parameter_override {
            Some(p) => format!("{}@{p}", self.kind),
            None => format!("{}-{}", self.kind, self.severity),
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let z: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= z);
    k
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m >= n { period - m } else { m }) as usize
}

fn blur_plane(mut plane: ArrayViewMut2<'_, f32>, kernel: &[f64]) {
    let (h, w) = plane.dim();
    let r = (kernel.len() / 2) as isize;
    let src = plane.mapv(f64::from);
    let mut tmp = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            tmp[[y, x]] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * src[[y, reflect(x as isize + k as isize - r, w)]])
                .sum();
        }
    }
    for y in 0..h {
        for x in 0..w {
            let v: f64 = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[[reflect(y as isize + k as isize - r, h), x]])
                .sum();
            plane[[y, x]] = v as f32;
        }
    }
}

/// Averages blocks defined by `floor(i * small / n)` and writes each block
/// mean back to its pixels (box downsample + nearest upsample).
fn pixelate_plane(mut plane: ArrayViewMut2<'_, f32>, scale: f64) {
    let (h, w) = plane.dim();
    let sh = ((h as f64 * scale).round() as usize).clamp(1, h);
    let sw = ((w as f64 * scale).round() as usize).clamp(1, w);
    let mut sum = Array2::<f64>::zeros((sh, sw));
    let mut cnt = Array2::<f64>::zeros((sh, sw));
    for y in 0..h {
        for x in 0..w {
            let (by, bx) = (y * sh / h, x * sw / w);
            sum[[by, bx]] += f64::from(plane[[y, x]]);
            cnt[[by, bx]] += 1.0;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let (by, bx) = (y * sh / h, x * sw / w);
            plane[[y, x]] = (sum[[by, bx]] / cnt[[by, bx]]) as f32;
        }
    }
}

fn contrast_plane(mut plane: ArrayViewMut2<'_, f32>, factor: f64) {
    let mean = plane.iter().map(|&v| f64::from(v)).sum::<f64>() / plane.len() as f64;
    plane.mapv_inplace(|v| ((f64::from(v) - mean) * factor + mean) as f32);
}

/// Copy of `task` with its test images corrupted per `spec`.
///
/// Noise draws are seeded from the task id and the spec, so repeated calls
/// agree.
pub fn corrupt_test_set(task: &TaskSpec, spec: &CorruptionSpec) -> Result<TaskSpec> {
    let p = spec.parameter()?;
    let mut out = task.clone();
    let images = &mut out.test.images;
    let (n, c, _, _) = images.dim();
    match spec.kind {
        CorruptionKind::GaussianNoise => {
            if p < 0.0 {
                return Err(DataError::Config(format!("noise sigma {p} < 0")));
            }
            if p > 0.0 {
                let seed = (task.task_id as u64) << 32 | u64::from(spec.severity) << 8 | 1;
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ p.to_bits());
                let normal = Normal::new(0.0, p).unwrap();
                images.mapv_inplace(|v| (f64::from(v) + normal.sample(&mut rng)) as f32);
            }
        }
        CorruptionKind::GaussianBlur => {
            if p < 0.0 {
                return Err(DataError::Config(format!("blur sigma {p} < 0")));
            }
            if p > 0.0 {
                let k = gaussian_kernel(p);
                for i in 0..n {
                    for ch in 0..c {
                        blur_plane(images.slice_mut(s![i, ch, .., ..]), &k);
                    }
                }
            }
        }
        CorruptionKind::Contrast => {
            for i in 0..n {
                for ch in 0..c {
                    contrast_plane(images.slice_mut(s![i, ch, .., ..]), p);
                }
            }
        }
        CorruptionKind::Pixelate => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(DataError::Config(format!("pixelate scale {p} outside (0, 1]")));
            }
            for i in 0..n {
                for ch in 0..c {
                    pixelate_plane(images.slice_mut(s![i, ch, .., ..]), p);
                }
            }
        }
    }
    Ok(out)
}
