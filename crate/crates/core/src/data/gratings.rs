//! Oriented sinusoidal gratings: one orientation per class, random phase
//! and frequency per sample. Gradient orientation separates the classes
//! while raw pixel similarity barely does.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{invalid, Error, Result};
use crate::infoflow::LabelBatch;
use crate::rng::{keyed, Stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GratingSpec {
    pub n_per_class: usize,
    pub classes: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_size")]
    pub size: usize,
    /// Spatial periods (pixels) are drawn uniformly from this range.
    #[serde(default = "default_period")]
    pub period: (f64, f64),
    /// Maximum orientation jitter, as a fraction of the class spacing.
    #[serde(default = "default_angle_jitter")]
    pub angle_jitter: f64,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_channels() -> usize {
    3
}
fn default_size() -> usize {
    8
}
fn default_period() -> (f64, f64) {
    (3.0, 6.0)
}
fn default_angle_jitter() -> f64 {
    0.2
}
fn default_noise() -> f64 {
    0.2
}

impl GratingSpec {
    pub fn new(n_per_class: usize, classes: usize) -> Self {
        Self {
            n_per_class,
            classes,
            channels: default_channels(),
            size: default_size(),
            period: default_period(),
            angle_jitter: default_angle_jitter(),
            noise: default_noise(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.n_per_class < 1 || self.channels < 1 || self.size < 4 {
            return invalid("gratings need ≥2 classes, ≥1 sample per class, ≥1 channel and size ≥4");
        }
        let (lo, hi) = self.period;
        if !(lo >= 2.0 && hi >= lo && hi.is_finite()) {
            return invalid("grating period range must satisfy 2 ≤ low ≤ high");
        }
        if !(0.0..0.5).contains(&self.angle_jitter) || !(self.noise >= 0.0 && self.noise.is_finite()) {
            return invalid("angle_jitter must be in [0, 0.5) and noise ≥ 0");
        }
        Ok(())
    }

    pub fn sample_shape(&self) -> [usize; 3] {
        [self.channels, self.size, self.size]
    }

    /// Class orientations evenly cover [0, π).
    pub fn orientation(&self, class: usize) -> f64 {
        PI * class as f64 / self.classes as f64
    }

    pub fn generate<T: Scalar>(&self, split: Split) -> Result<Dataset<T>> {
        self.validate()?;
        let (ch, s) = (self.channels, self.size);
        let n = self.n_per_class * self.classes;
        let pixel = Normal::new(0.0, self.noise.max(f64::MIN_POSITIVE)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let spacing = PI / self.classes as f64;
        let mut data = Vec::with_capacity(n * ch * s * s);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % self.classes;
            let mut rng = keyed(self.seed, Stream::Data, &[0x6_7a7e, split as u64, i as u64]);
            let theta = self.orientation(c) + self.angle_jitter * spacing * rng.random_range(-1.0..=1.0);
            let period = if self.period.1 > self.period.0 { rng.random_range(self.period.0..self.period.1) } else { self.period.0 };
            let phase = rng.random_range(0.0..2.0 * PI);
            let (ux, uy) = (theta.cos(), theta.sin());
            let gains: Vec<f64> = (0..ch).map(|_| rng.random_range(0.5..1.0)).collect();
            for gain in gains {
                for y in 0..s {
                    for x in 0..s {
                        let t = 2.0 * PI * (x as f64 * ux + y as f64 * uy) / period + phase;
                        let noise = if self.noise > 0.0 { pixel.sample(&mut rng) } else { 0.0 };
                        data.push(T::c(gain * t.sin() + noise));
                    }
                }
            }
            labels.push(c);
        }
        Dataset::new(Tensor::new(&[n, ch, s, s], data)?, Some(LabelBatch::new(labels, self.classes)?), split)
    }
}
