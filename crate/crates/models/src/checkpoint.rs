//! Versioned JSON checkpoints.
//!
//! Floats are written with round-trip precision, so a checkpoint reloads
//! bit-exactly.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{GeneratorState, ModelError, ModelState, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Types that can be stored as checkpoints.
pub trait Checkpoint: Serialize + DeserializeOwned {
    const KIND: &'static str;
}

impl Checkpoint for ModelState {
    const KIND: &'static str = "model";
}

impl Checkpoint for GeneratorState {
    const KIND: &'static str = "generator";
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    format_version: u32,
    kind: &'static str,
    body: &'a T,
}

#[derive(Deserialize)]
struct EnvelopeIn<T> {
    format_version: u32,
    kind: String,
    body: T,
}

pub fn encode<T: Checkpoint>(value: &T) -> Result<String> {
    Ok(serde_json::to_string(&EnvelopeOut {
        format_version: CHECKPOINT_VERSION,
        kind: T::KIND,
        body: value,
    })?)
}

pub fn decode<T: Checkpoint>(text: &str) -> Result<T> {
    #[derive(Deserialize)]
    struct Header {
        format_version: u32,
        kind: String,
    }
    let header: Header = serde_json::from_str(text)?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(ModelError::Format(format!(
            "version {} (expected {CHECKPOINT_VERSION})",
            header.format_version
        )));
    }
    if header.kind != T::KIND {
        return Err(ModelError::Format(format!("a {} checkpoint, expected {}", header.kind, T::KIND)));
    }
    let env: EnvelopeIn<T> = serde_json::from_str(text)?;
    debug_assert_eq!((env.format_version, env.kind.as_str()), (CHECKPOINT_VERSION, T::KIND));
    Ok(env.body)
}

pub fn save<T: Checkpoint>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| ModelError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, encode(value)?).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load<T: Checkpoint>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&text)
}

#[cfg(test)]
mod tests {
    use fedgtg_autograd::Graph;
    use ndarray::Array4;

    use super::*;
    use crate::{ArchConfig, GeneratorConfig, Mode, Trace, Trainable};

    fn trained_model() -> ModelState {
        let arch = ArchConfig::small_cnn([3, 8, 8], vec![4], 5);
        let mut m = ModelState::init_backbone(&arch, &[0, 1], 3).unwrap();
        let x = Array4::from_shape_fn((3, 3, 8, 8), |(n, c, y, x)| ((n * 7 + c * 3 + y * x) as f64).sin());
        let g = Graph::new();
        let b = m.bind(&g, Trainable::Frozen);
        let mut trace = Trace::new();
        m.features(&b, g.constant(x.into_dyn()), Mode::Train, &mut trace);
        m.absorb(&trace);
        m
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let m = trained_model();
        let back: ModelState = decode(&encode(&m).unwrap()).unwrap();
        assert_eq!(back.digest(), m.digest());
        assert_eq!(back.bn_statistics(), m.bn_statistics());
        assert_eq!(back, m);
    }

    #[test]
    fn generator_round_trip_through_a_file() {
        let m = trained_model();
        let cfg = GeneratorConfig {
            hidden: 8,
            ..Default::default()
        };
        let g = GeneratorState::init_feature_generator(&cfg, &m, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/gf.json");
        save(&g, &path).unwrap();
        assert_eq!(load::<GeneratorState>(&path).unwrap(), g);
    }

    #[test]
    fn kind_and_version_are_checked() {
        let m = trained_model();
        let text = encode(&m).unwrap();
        assert!(matches!(decode::<GeneratorState>(&text), Err(ModelError::Format(_))));
        let bumped = text.replacen("\"format_version\":1", "\"format_version\":99", 1);
        assert!(matches!(decode::<ModelState>(&bumped), Err(ModelError::Format(_))));
    }
}
