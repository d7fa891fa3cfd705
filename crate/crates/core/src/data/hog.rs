//! Histogram-of-oriented-gradients features on a coarse cell grid.

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{invalid, shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Rec. 601 luma weights.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HogSpec {
    #[serde(default = "two_by_two")]
    pub cells: (usize, usize),
    #[serde(default = "nine")]
    pub orientation_bins: usize,
    /// Orientations over 360° instead of 180°.
    #[serde(default)]
    pub signed: bool,
    /// L2-normalize the concatenated histogram.
    #[serde(default = "yes")]
    pub normalize: bool,
}

fn two_by_two() -> (usize, usize) {
    (2, 2)
}
fn nine() -> usize {
    9
}
fn yes() -> bool {
    true
}

impl Default for HogSpec {
    fn default() -> Self {
        Self { cells: two_by_two(), orientation_bins: nine(), signed: false, normalize: true }
    }
}

impl HogSpec {
    pub fn validate(&self) -> Result<()> {
        if self.orientation_bins < 2 {
            return invalid("HoG needs at least two orientation bins");
        }
        if self.cells.0 == 0 || self.cells.1 == 0 {
            return invalid("HoG cell grid must be non-empty");
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.cells.0 * self.cells.1 * self.orientation_bins
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Luma of a `C×H×W` image; single-channel images pass through.
pub fn grayscale<T: Scalar>(image: &[T], channels: usize, h: usize, w: usize) -> Result<Vec<T>> {
    match channels {
        1 => Ok(image.to_vec()),
        3 => Ok((0..h * w)
            .map(|p| LUMA.iter().enumerate().map(|(c, &k)| T::c(k) * image[c * h * w + p]).sum())
            .collect()),
        _ => shape_err(format!("grayscale needs 1 or 3 channels, got {channels}")),
    }
}

/// HoG of a grayscale `h×w` image. Gradients use the centred `[-1, 0, 1]`
/// filter with edge replication, each pixel votes its magnitude into one
/// orientation bin of its cell, and the concatenated histogram is
/// L2-normalized. A constant image gives the zero vector.
pub fn hog_extract<T: Scalar>(image: &[T], h: usize, w: usize, spec: &HogSpec) -> Result<Vec<T>> {
    spec.validate()?;
    let (cy, cx) = spec.cells;
    if image.len() != h * w {
        return shape_err(format!("image has {} pixels, expected {h}×{w}", image.len()));
    }
    if !h.is_multiple_of(cy) || !w.is_multiple_of(cx) {
        return shape_err(format!("{h}×{w} image does not split into a {cy}×{cx} cell grid"));
    }
    let bins = spec.orientation_bins;
    let range = if spec.signed { 360.0 } else { 180.0 };
    let px = |y: usize, x: usize| image[y * w + x].to_f64_lossy();
    let mut hist = vec![0.0f64; spec.len()];
    for y in 0..h {
        for x in 0..w {
            let gx = px(y, (x + 1).min(w - 1)) - px(y, x.saturating_sub(1));
            let gy = px((y + 1).min(h - 1), x) - px(y.saturating_sub(1), x);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let angle = gy.atan2(gx).to_degrees().rem_euclid(range);
            let bin = ((angle / range * bins as f64) as usize).min(bins - 1);
            let cell = (y / (h / cy)) * cx + x / (w / cx);
            hist[cell * bins + bin] += mag;
        }
    }
    if spec.normalize {
        let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            hist.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Ok(hist.into_iter().map(T::c).collect())
}

/// HoG features (`N × spec.len()`) of every image in an `N×C×H×W` dataset.
pub fn hog_features<T: Scalar>(data: &Dataset<T>, spec: &HogSpec) -> Result<Tensor<T>> {
    if !data.is_image() {
        return shape_err("HoG features need an image dataset");
    }
    let s = data.sample_shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut out = Vec::with_capacity(data.len() * spec.len());
    for i in 0..data.len() {
        let gray = grayscale(data.inputs().row(i), c, h, w)?;
        out.extend(hog_extract(&gray, h, w, spec)?);
    }
    Tensor::new(&[data.len(), spec.len()], out)
}
