//! Image classification datasets: IDX ingestion and a synthetic generator.

pub mod idx;

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const VALID_FRACTION: f64 = 0.2;

/// Images in `[0, 1]` (`N x C x H x W`), labels and a train/valid split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub source: String,
    pub seed: u64,
    pub shape: Vec<usize>,
    pub classes: usize,
    pub train: usize,
    pub valid: usize,
    pub class_counts: Vec<usize>,
}

/// Seeded shuffle of `0..n` cut into `(train, valid)`.
pub fn split_indices(n: usize, valid_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_valid = (valid_fraction * n as f64).round() as usize;
    let valid = idx.split_off(n - n_valid);
    (idx, valid)
}

impl Dataset {
    pub fn new(images: Tensor<f64>, labels: Vec<usize>, classes: usize, seed: u64) -> Result<Self> {
        let [n, _, _, _] = images.nchw("dataset")?;
        if labels.len() != n {
            return Err(Error::Config(format!("{n} images but {} labels", labels.len())));
        }
        if classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Config(format!("label {bad} outside [0, {classes})")));
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("pixel values must lie in [0, 1]".into()));
        }
        let (train, valid) = split_indices(n, VALID_FRACTION, seed);
        Ok(Dataset {
            images,
            labels,
            classes,
            train,
            valid,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]`.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Images and labels of the given examples, in order.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f64>, Vec<usize>) {
        let [c, h, w] = self.image_shape();
        let per = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (Tensor::new(vec![indices.len(), c, h, w], data).expect("batch shape"), labels)
    }

    /// Dataset restricted to the training examples, re-split for bilevel search.
    pub fn train_subset(&self, valid_fraction: f64, seed: u64) -> Dataset {
        let (train, valid) = split_indices(self.train.len(), valid_fraction, seed);
        Dataset {
            train: train.iter().map(|&i| self.train[i]).collect(),
            valid: valid.iter().map(|&i| self.train[i]).collect(),
            ..self.clone()
        }
    }

    pub fn manifest(&self, source: &str, seed: u64) -> Manifest {
        Manifest {
            source: source.into(),
            seed,
            shape: self.images.shape().to_vec(),
            classes: self.classes,
            train: self.train.len(),
            valid: self.valid.len(),
            class_counts: self.class_counts(),
        }
    }

    /// Parses IDX images (`N x H x W`) and labels; pixels are scaled by 1/255.
    pub fn from_idx_bytes(images: &[u8], labels: &[u8], seed: u64) -> Result<Self> {
        let img = idx::parse(images, idx::IMAGES_MAGIC)?;
        let lab = idx::parse(labels, idx::LABELS_MAGIC)?;
        let (n, h, w) = (img.dims[0], img.dims[1], img.dims[2]);
        if lab.dims[0] != n {
            return Err(Error::Config(format!("{n} images but {} labels", lab.dims[0])));
        }
        let labels: Vec<usize> = lab.data.iter().map(|&l| l as usize).collect();
        let classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
        let pixels = img.data.iter().map(|&p| p as f64 / 255.0).collect();
        Dataset::new(Tensor::new(vec![n, 1, h, w], pixels)?, labels, classes, seed)
    }

    pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>, seed: u64) -> Result<Self> {
        let read = |p: &Path| std::fs::read(p).map_err(|e| Error::io(p, e));
        Self::from_idx_bytes(&read(images.as_ref())?, &read(labels.as_ref())?, seed)
    }

    /// Encodes single-channel images as IDX (pixels rounded to bytes).
    pub fn to_idx_bytes(&self) -> Result<(Vec<u8>, Vec<u8>)> {
        let [c, h, w] = self.image_shape();
        if c != 1 {
            return Err(Error::Config(format!("IDX export needs 1 channel, got {c}")));
        }
        if self.classes > 256 {
            return Err(Error::Config("IDX labels are single bytes".into()));
        }
        let images = idx::IdxArray {
            dims: vec![self.len(), h, w],
            data: self.images.data().iter().map(|&p| (p * 255.0).round() as u8).collect(),
        };
        let labels = idx::IdxArray {
            dims: vec![self.len()],
            data: self.labels.iter().map(|&l| l as u8).collect(),
        };
        Ok((idx::encode(idx::IMAGES_MAGIC, &images), idx::encode(idx::LABELS_MAGIC, &labels)))
    }

    pub fn save_idx(&self, images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
        let (i, l) = self.to_idx_bytes()?;
        let write = |p: &Path, b: &[u8]| std::fs::write(p, b).map_err(|e| Error::io(p, e));
        write(images.as_ref(), &i)?;
        write(labels.as_ref(), &l)
    }
}

/// Parameters of the synthetic oriented-grating task.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub classes: usize,
    pub n: usize,
    pub image_size: usize,
    /// Standard deviation of the additive pixel noise.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 4,
            n: 1000,
            image_size: 28,
            noise: 0.6,
        }
    }
}

/// Class `c` is a sinusoidal grating at orientation `pi * c / classes` with
/// random frequency and phase, plus Gaussian noise, clipped to `[0, 1]`.
/// Example `i` has label `i % classes`.
pub fn synth_classification(cfg: &SynthConfig, seed: u64) -> Result<Dataset> {
    if cfg.classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {}", cfg.classes)));
    }
    if cfg.n == 0 || cfg.image_size == 0 {
        return Err(Error::Config("dataset size and image size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
    let s = cfg.image_size;
    let mut data = Vec::with_capacity(cfg.n * s * s);
    let mut labels = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let label = i % cfg.classes;
        let theta = PI * label as f64 / cfg.classes as f64 + rng.gen_range(-0.1..0.1);
        let cycles = rng.gen_range(2.0..4.0);
        let phase = rng.gen_range(0.0..2.0 * PI);
        let (dx, dy) = (theta.cos(), theta.sin());
        for y in 0..s {
            for x in 0..s {
                let u = (x as f64 * dx + y as f64 * dy) / s as f64;
                let v = 0.5 + 0.35 * (2.0 * PI * cycles * u + phase).sin() + noise.sample(&mut rng);
                data.push(v.clamp(0.0, 1.0));
            }
        }
        labels.push(label);
    }
    Dataset::new(Tensor::new(vec![cfg.n, 1, s, s], data)?, labels, cfg.classes, seed)
}
