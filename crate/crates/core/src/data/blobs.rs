//! Synthetic transfer sets.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{invalid, Result};
use crate::infoflow::LabelBatch;
use crate::rng::{keyed, Stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Gaussian clusters in `dim` dimensions. Class `c` is centred on
/// `±separation/√2 · e_{c mod dim}` (sign flips every `dim` classes), so the
/// first `min(classes, dim)` centres are exactly `separation` apart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub n_per_class: usize,
    pub classes: usize,
    pub dim: usize,
    pub sigma: f64,
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_separation() -> f64 {
    4.0
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return invalid(format!("blob sigma must be positive, got {}", self.sigma));
        }
        if self.classes < 1 || self.n_per_class < 1 || self.dim < 1 {
            return invalid("blob classes, dim and n_per_class must be positive");
        }
        if self.classes > 2 * self.dim {
            return invalid(format!("{} classes need dim ≥ {}", self.classes, self.classes.div_ceil(2)));
        }
        Ok(())
    }

    pub fn center(&self, class: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        let sign = if (class / self.dim).is_multiple_of(2) { 1.0 } else { -1.0 };
        c[class % self.dim] = sign * self.separation / std::f64::consts::SQRT_2;
        c
    }

    /// Samples are interleaved by class; each split draws its own noise.
    pub fn generate<T: Scalar>(&self, split: Split) -> Result<Dataset<T>> {
        self.validate()?;
        let mut rng = keyed(self.seed, Stream::Data, &[split as u64]);
        let noise = Normal::new(0.0, self.sigma).map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;
        let n = self.n_per_class * self.classes;
        let centers: Vec<Vec<f64>> = (0..self.classes).map(|c| self.center(c)).collect();
        let mut data = Vec::with_capacity(n * self.dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % self.classes;
            data.extend(centers[c].iter().map(|&m| T::c(m + noise.sample(&mut rng))));
            labels.push(c);
        }
        Dataset::new(Tensor::new(&[n, self.dim], data)?, Some(LabelBatch::new(labels, self.classes)?), split)
    }
}

pub fn make_blobs<T: Scalar>(n_per_class: usize, classes: usize, dim: usize, sigma: f64, seed: u64) -> Result<Dataset<T>> {
    BlobSpec { n_per_class, classes, dim, sigma, separation: default_separation(), seed }.generate(Split::Train)
}

/// Small images built from per-class prototypes. Each prototype is a sum
/// of Gaussian bumps per channel; a sample is its class prototype shifted
/// by up to `jitter` pixels, rescaled, blended with a random other
/// prototype (weight up to `max_mix`) and corrupted by pixel noise.
/// Prototypes depend only on `task_seed`, so train and test splits and
/// different run seeds share the same task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageBlobSpec {
    pub n_per_class: usize,
    pub classes: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_size")]
    pub size: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default = "default_jitter")]
    pub jitter: usize,
    #[serde(default = "default_mix")]
    pub max_mix: f64,
    #[serde(default = "default_bumps")]
    pub bumps: usize,
    #[serde(default)]
    pub task_seed: u64,
    #[serde(default)]
    pub seed: u64,
}

fn default_channels() -> usize {
    3
}
fn default_size() -> usize {
    16
}
fn default_noise() -> f64 {
    0.5
}
fn default_jitter() -> usize {
    2
}
fn default_mix() -> f64 {
    0.4
}
fn default_bumps() -> usize {
    3
}

impl ImageBlobSpec {
    pub fn new(n_per_class: usize, classes: usize) -> Self {
        Self {
            n_per_class,
            classes,
            channels: default_channels(),
            size: default_size(),
            noise: default_noise(),
            jitter: default_jitter(),
            max_mix: default_mix(),
            bumps: default_bumps(),
            task_seed: 0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.n_per_class < 1 || self.channels < 1 || self.size < 4 || self.bumps < 1 {
            return invalid("image blobs need ≥2 classes, ≥1 sample per class, ≥1 channel, ≥1 bump and size ≥4");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) || !(0.0..1.0).contains(&self.max_mix) {
            return invalid("image blob noise must be ≥0 and max_mix in [0, 1)");
        }
        if 2 * self.jitter >= self.size {
            return invalid("jitter must be smaller than half the image size");
        }
        Ok(())
    }

    pub fn sample_shape(&self) -> [usize; 3] {
        [self.channels, self.size, self.size]
    }

    /// `classes × (C·S·S)` prototypes.
    pub fn prototypes(&self) -> Vec<Vec<f64>> {
        let s = self.size as f64;
        (0..self.classes)
            .map(|c| {
                let mut rng = keyed(self.task_seed, Stream::Data, &[0x9_0707, c as u64]);
                let mut img = vec![0.0; self.channels * self.size * self.size];
                for ch in 0..self.channels {
                    for _ in 0..self.bumps {
                        let (cy, cx) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
                        let width = rng.random_range(0.1 * s..0.3 * s);
                        let amp = if rng.random::<bool>() { 1.0 } else { -1.0 } * rng.random_range(0.5..1.0);
                        for y in 0..self.size {
                            for x in 0..self.size {
                                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                                img[(ch * self.size + y) * self.size + x] += amp * (-d2 / (2.0 * width * width)).exp();
                            }
                        }
                    }
                }
                img
            })
            .collect()
    }

    pub fn generate<T: Scalar>(&self, split: Split) -> Result<Dataset<T>> {
        self.validate()?;
        let protos = self.prototypes();
        let (ch, s) = (self.channels, self.size);
        let plen = ch * s * s;
        let n = self.n_per_class * self.classes;
        let pixel = Normal::new(0.0, self.noise.max(f64::MIN_POSITIVE)).map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;
        let j = self.jitter as i64;
        let mut data = Vec::with_capacity(n * plen);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % self.classes;
            let mut rng = keyed(self.seed, Stream::Data, &[split as u64, i as u64]);
            let (dy, dx) = (rng.random_range(-j..=j), rng.random_range(-j..=j));
            let gain = rng.random_range(0.8..1.2);
            let other = (c + 1 + rng.random_range(0..self.classes - 1)) % self.classes;
            let mix = rng.random_range(0.0..=self.max_mix);
            for chn in 0..ch {
                for y in 0..s as i64 {
                    for x in 0..s as i64 {
                        let (sy, sx) = (y - dy, x - dx);
                        let inside = (0..s as i64).contains(&sy) && (0..s as i64).contains(&sx);
                        let base = if inside {
                            let at = (chn * s + sy as usize) * s + sx as usize;
                            (1.0 - mix) * protos[c][at] + mix * protos[other][at]
                        } else {
                            0.0
                        };
                        let noise = if self.noise > 0.0 { pixel.sample(&mut rng) } else { 0.0 };
                        data.push(T::c(gain * base + noise));
                    }
                }
            }
            labels.push(c);
        }
        Dataset::new(Tensor::new(&[n, ch, s, s], data)?, Some(LabelBatch::new(labels, self.classes)?), split)
    }
}

pub fn make_image_blobs<T: Scalar>(spec: &ImageBlobSpec, split: Split) -> Result<Dataset<T>> {
    spec.generate(split)
}
