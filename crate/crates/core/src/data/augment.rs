//! Per-sample image augmentation, keyed by `(seed, epoch, sample index)` so
//! the result does not depend on batch composition or worker order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::rng::{keyed, Stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSpec {
    #[serde(default = "half")]
    pub hflip_prob: f64,
    #[serde(default = "four")]
    pub crop_padding: usize,
    /// Maximum absolute rotation in degrees; off when `None`.
    #[serde(default)]
    pub rotation_deg: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn half() -> f64 {
    0.5
}
fn four() -> usize {
    4
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self { hflip_prob: half(), crop_padding: four(), rotation_deg: None, seed: 0 }
    }
}

impl AugmentSpec {
    pub fn identity() -> Self {
        Self { hflip_prob: 0.0, crop_padding: 0, rotation_deg: None, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return invalid(format!("hflip_prob {} outside [0, 1]", self.hflip_prob));
        }
        if let Some(r) = self.rotation_deg {
            if !(r >= 0.0 && r.is_finite()) {
                return invalid(format!("rotation_deg must be a non-negative angle, got {r}"));
            }
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.hflip_prob == 0.0 && self.crop_padding == 0 && self.rotation_deg.is_none_or(|r| r == 0.0)
    }
}

/// Random decisions for one sample, drawn in a fixed order: flip, crop
/// row offset, crop column offset, rotation angle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Draw {
    pub flip: bool,
    pub dy: usize,
    pub dx: usize,
    pub angle_deg: f64,
}

impl Draw {
    pub fn sample(spec: &AugmentSpec, epoch: u64, index: u64) -> Self {
        let mut rng = keyed(spec.seed, Stream::Augment, &[epoch, index]);
        let flip = rng.random::<f64>() < spec.hflip_prob;
        let span = 2 * spec.crop_padding;
        let dy = rng.random_range(0..=span);
        let dx = rng.random_range(0..=span);
        let angle_deg = match spec.rotation_deg {
            Some(r) if r > 0.0 => rng.random_range(-r..=r),
            _ => 0.0,
        };
        Self { flip, dy, dx, angle_deg }
    }
}

/// Augments one `C×H×W` image in place of a copy.
pub fn augment_image<T: Scalar>(image: &[T], shape: [usize; 3], spec: &AugmentSpec, draw: Draw) -> Vec<T> {
    let [c, h, w] = shape;
    let mut img = image.to_vec();
    if draw.angle_deg != 0.0 {
        img = rotate(&img, shape, draw.angle_deg);
    }
    if draw.flip {
        for plane in img.chunks_exact_mut(h * w) {
            for row in plane.chunks_exact_mut(w) {
                row.reverse();
            }
        }
    }
    let p = spec.crop_padding;
    if p == 0 {
        return img;
    }
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..h {
            // Source row in the unpadded image; out of range reads zero padding.
            let Some(sy) = (y + draw.dy).checked_sub(p).filter(|&sy| sy < h) else { continue };
            for x in 0..w {
                if let Some(sx) = (x + draw.dx).checked_sub(p).filter(|&sx| sx < w) {
                    out[(ch * h + y) * w + x] = img[(ch * h + sy) * w + sx];
                }
            }
        }
    }
    out
}

/// Bilinear rotation about the image centre with zero fill.
fn rotate<T: Scalar>(img: &[T], [c, h, w]: [usize; 3], angle_deg: f64) -> Vec<T> {
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = vec![T::zero(); img.len()];
    for y in 0..h {
        for x in 0..w {
            let (ry, rx) = (y as f64 - cy, x as f64 - cx);
            // Inverse map: where does output pixel (y, x) come from.
            let sy = cos * ry - sin * rx + cy;
            let sx = sin * ry + cos * rx + cx;
            let (y0, x0) = (sy.floor(), sx.floor());
            let (fy, fx) = (sy - y0, sx - x0);
            for ch in 0..c {
                let at = |yy: f64, xx: f64| -> f64 {
                    if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
                        0.0
                    } else {
                        img[(ch * h + yy as usize) * w + xx as usize].to_f64_lossy()
                    }
                };
                let v = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1.0))
                    + fy * ((1.0 - fx) * at(y0 + 1.0, x0) + fx * at(y0 + 1.0, x0 + 1.0));
                out[(ch * h + y) * w + x] = T::c(v);
            }
        }
    }
    out
}

/// Augments an `N×C×H×W` batch whose rows are dataset samples `indices`.
pub fn augment<T: Scalar>(batch: &Tensor<T>, indices: &[usize], epoch: usize, spec: &AugmentSpec) -> Result<Tensor<T>> {
    spec.validate()?;
    if batch.ndim() != 4 {
        return shape_err(format!("augment needs N×C×H×W images, got {:?}", batch.shape()));
    }
    if indices.len() != batch.rows() {
        return shape_err("one index per sample required");
    }
    let s = batch.shape();
    let shape = [s[1], s[2], s[3]];
    let mut data = Vec::with_capacity(batch.len());
    for (i, &index) in indices.iter().enumerate() {
        let draw = Draw::sample(spec, epoch as u64, index as u64);
        data.extend(augment_image(batch.row(i), shape, spec, draw));
    }
    Tensor::new(s, data)
}
