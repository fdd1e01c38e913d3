//! In-memory image datasets and loaders for the standard archive layouts.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::synthetic::SyntheticSpec;
use crate::{DataError, Result};

/// Labeled images stored `[n, c, h, w]` in `f32`.
///
/// `source_indices[i]` is the position of image `i` in the split it was
/// drawn from, which lets manifests refer to samples without copying pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub images: Array4<f32>,
    pub labels: Vec<usize>,
    pub source_indices: Vec<usize>,
}

impl ImageSet {
    pub fn new(images: Array4<f32>, labels: Vec<usize>) -> Self {
        assert_eq!(images.shape()[0], labels.len(), "one label per image");
        let source_indices = (0..labels.len()).collect();
        Self {
            images,
            labels,
            source_indices,
        }
    }

    pub fn empty(image_shape: [usize; 3]) -> Self {
        let [c, h, w] = image_shape;
        Self::new(Array4::zeros((0, c, h, w)), Vec::new())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// Rows `positions` (positions into this set, not source indices).
    pub fn subset(&self, positions: &[usize]) -> Self {
        Self {
            images: self.images.select(Axis(0), positions),
            labels: positions.iter().map(|&i| self.labels[i]).collect(),
            source_indices: positions.iter().map(|&i| self.source_indices[i]).collect(),
        }
    }

    /// Positions of every sample whose label is in `classes`.
    pub fn positions_of(&self, classes: &[usize]) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| classes.contains(&self.labels[i]))
            .collect()
    }

    /// Images `positions` widened to `f64`, ready for a forward pass.
    pub fn batch(&self, positions: &[usize]) -> Array4<f64> {
        self.images.select(Axis(0), positions).mapv(f64::from)
    }

    pub fn all_f64(&self) -> Array4<f64> {
        self.images.mapv(f64::from)
    }

    /// Appends `other` (same image shape) after `self`.
    pub fn concat(&self, other: &ImageSet) -> Self {
        let images = ndarray::concatenate(Axis(0), &[self.images.view(), other.images.view()])
            .expect("image shapes must match");
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let mut source_indices = self.source_indices.clone();
        source_indices.extend_from_slice(&other.source_indices);
        Self {
            images,
            labels,
            source_indices,
        }
    }
}

/// Per-channel affine normalization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    /// Channel statistics of `set` (population standard deviation).
    pub fn fit(set: &ImageSet) -> Self {
        let channels = set.image_shape()[0];
        let mut mean = Vec::with_capacity(channels);
        let mut std = Vec::with_capacity(channels);
        for c in 0..channels {
            let plane = set.images.slice(s![.., c, .., ..]);
            let n = plane.len().max(1) as f64;
            let m = plane.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
            let var = plane.iter().map(|&v| (f64::from(v) - m).powi(2)).sum::<f64>() / n;
            mean.push(m as f32);
            std.push(var.sqrt().max(1e-6) as f32);
        }
        Self { mean, std }
    }

    pub fn apply(&self, set: &mut ImageSet) {
        for (c, (m, sd)) in self.mean.iter().zip(&self.std).enumerate() {
            set.images
                .slice_mut(s![.., c, .., ..])
                .mapv_inplace(|v| (v - m) / sd);
        }
    }
}

/// A classification dataset with fixed train/test splits.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub n_classes: usize,
    pub train: ImageSet,
    pub test: ImageSet,
    /// Set once [`Dataset::normalized`] has been applied.
    pub normalization: Option<Normalization>,
}

impl Dataset {
    pub fn image_shape(&self) -> [usize; 3] {
        self.train.image_shape()
    }

    /// Normalizes both splits with channel statistics of the train split.
    pub fn normalized(mut self) -> Self {
        if self.normalization.is_some() {
            return self;
        }
        let norm = Normalization::fit(&self.train);
        norm.apply(&mut self.train);
        norm.apply(&mut self.test);
        self.normalization = Some(norm);
        self
    }

    /// Keeps classes `0..k`.
    pub fn first_classes(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.n_classes {
            return Err(DataError::Config(format!(
                "class subset of {k} from a {}-class dataset",
                self.n_classes
            )));
        }
        let classes: Vec<usize> = (0..k).collect();
        let train = self.train.subset(&self.train.positions_of(&classes));
        let test = self.test.subset(&self.test.positions_of(&classes));
        Ok(Self {
            name: format!("{}[0..{k}]", self.name),
            n_classes: k,
            train,
            test,
            normalization: self.normalization.clone(),
        })
    }
}

/// Where and how to find a dataset by name.
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Root containing `cifar-10-batches-bin/`, `cifar-100-binary/` or
    /// `tiny-imagenet-200/`.
    pub data_dir: Option<PathBuf>,
    /// Used by the procedural `synthetic-*` datasets.
    pub synthetic: SyntheticSpec,
}

/// Loads `name` in raw `[0, 1]` pixel scale (not normalized).
///
/// Known names: `cifar10`, `cifar100`, `tiny-imagenet`, and `synthetic`
/// (procedural, no files needed).
pub fn load_dataset(name: &str, opts: &LoadOptions) -> Result<Dataset> {
    let dir = || {
        opts.data_dir
            .clone()
            .ok_or_else(|| DataError::Config(format!("dataset `{name}` needs a data directory")))
    };
    match name {
        "cifar10" => load_cifar10(&dir()?.join("cifar-10-batches-bin")),
        "cifar100" => load_cifar100(&dir()?.join("cifar-100-binary")),
        "tiny-imagenet" => load_tiny_imagenet(&dir()?.join("tiny-imagenet-200")),
        "synthetic" => Ok(opts.synthetic.generate()),
        other => Err(DataError::UnknownDataset(other.to_string())),
    }
}

const CIFAR_PIXELS: usize = 3 * 32 * 32;

/// Parses CIFAR binary records: `label_bytes` header bytes (the last one is
/// the label) followed by 3072 channel-planar pixels.
fn parse_cifar_records(path: &Path, label_bytes: usize, out: &mut Vec<f32>, labels: &mut Vec<usize>) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    let record = label_bytes + CIFAR_PIXELS;
    if bytes.is_empty() || bytes.len() % record != 0 {
        return Err(DataError::Format {
            path: path.to_path_buf(),
            reason: format!("length {} is not a multiple of the {record}-byte record", bytes.len()),
        });
    }
    for rec in bytes.chunks_exact(record) {
        labels.push(rec[label_bytes - 1] as usize);
        out.extend(rec[label_bytes..].iter().map(|&b| f32::from(b) / 255.0));
    }
    Ok(())
}

fn to_set(pixels: Vec<f32>, labels: Vec<usize>, shape: [usize; 3]) -> ImageSet {
    let [c, h, w] = shape;
    let images = Array4::from_shape_vec((labels.len(), c, h, w), pixels).expect("pixel count");
    ImageSet::new(images, labels)
}

fn check_labels(path: &Path, labels: &[usize], n_classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= n_classes) {
        Some(bad) => Err(DataError::Format {
            path: path.to_path_buf(),
            reason: format!("label {bad} outside 0..{n_classes}"),
        }),
        None => Ok(()),
    }
}

pub fn load_cifar10(dir: &Path) -> Result<Dataset> {
    let (mut px, mut lb) = (Vec::new(), Vec::new());
    for i in 1..=5 {
        parse_cifar_records(&dir.join(format!("data_batch_{i}.bin")), 1, &mut px, &mut lb)?;
    }
    check_labels(dir, &lb, 10)?;
    let train = to_set(px, lb, [3, 32, 32]);
    let (mut px, mut lb) = (Vec::new(), Vec::new());
    parse_cifar_records(&dir.join("test_batch.bin"), 1, &mut px, &mut lb)?;
    check_labels(dir, &lb, 10)?;
    Ok(Dataset {
        name: "cifar10".into(),
        n_classes: 10,
        train,
        test: to_set(px, lb, [3, 32, 32]),
        normalization: None,
    })
}

pub fn load_cifar100(dir: &Path) -> Result<Dataset> {
    let split = |file: &str| -> Result<ImageSet> {
        let (mut px, mut lb) = (Vec::new(), Vec::new());
        let path = dir.join(file);
        parse_cifar_records(&path, 2, &mut px, &mut lb)?;
        check_labels(&path, &lb, 100)?;
        Ok(to_set(px, lb, [3, 32, 32]))
    };
    Ok(Dataset {
        name: "cifar100".into(),
        n_classes: 100,
        train: split("train.bin")?,
        test: split("test.bin")?,
        normalization: None,
    })
}

fn read_rgb64(path: &Path) -> Result<Vec<f32>> {
    let img = image::open(path)
        .map_err(|e| DataError::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .to_rgb8();
    if img.dimensions() != (64, 64) {
        return Err(DataError::Format {
            path: path.to_path_buf(),
            reason: format!("expected 64x64, got {:?}", img.dimensions()),
        });
    }
    let mut planar = vec![0.0f32; 3 * 64 * 64];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            planar[c * 4096 + y as usize * 64 + x as usize] = f32::from(p[c]) / 255.0;
        }
    }
    Ok(planar)
}

/// `tiny-imagenet-200` layout: `wnids.txt`, `train/<wnid>/images/*`,
/// `val/val_annotations.txt` + `val/images/*`. The validation split serves as
/// the test split.
pub fn load_tiny_imagenet(dir: &Path) -> Result<Dataset> {
    let wnids_path = dir.join("wnids.txt");
    let wnids: Vec<String> = fs::read_to_string(&wnids_path)
        .map_err(|e| DataError::io(&wnids_path, e))?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    let class_of = |w: &str| wnids.iter().position(|x| x == w);

    let (mut px, mut lb) = (Vec::new(), Vec::new());
    for (k, wnid) in wnids.iter().enumerate() {
        let img_dir = dir.join("train").join(wnid).join("images");
        let mut files: Vec<PathBuf> = fs::read_dir(&img_dir)
            .map_err(|e| DataError::io(&img_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        files.sort();
        for f in files {
            px.extend(read_rgb64(&f)?);
            lb.push(k);
        }
    }
    let train = to_set(px, lb, [3, 64, 64]);

    let ann_path = dir.join("val").join("val_annotations.txt");
    let ann = fs::read_to_string(&ann_path).map_err(|e| DataError::io(&ann_path, e))?;
    let (mut px, mut lb) = (Vec::new(), Vec::new());
    for line in ann.lines().filter(|l| !l.trim().is_empty()) {
        let mut cols = line.split('\t');
        let (Some(file), Some(wnid)) = (cols.next(), cols.next()) else {
            return Err(DataError::Format {
                path: ann_path.clone(),
                reason: format!("bad annotation line `{line}`"),
            });
        };
        let k = class_of(wnid).ok_or_else(|| DataError::Format {
            path: ann_path.clone(),
            reason: format!("unknown wnid `{wnid}`"),
        })?;
        px.extend(read_rgb64(&dir.join("val").join("images").join(file))?);
        lb.push(k);
    }
    Ok(Dataset {
        name: "tiny-imagenet".into(),
        n_classes: wnids.len(),
        train,
        test: to_set(px, lb, [3, 64, 64]),
        normalization: None,
    })
}
