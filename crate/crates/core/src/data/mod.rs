//! Transfer sets: synthetic generators (blobs, image blobs, gratings), the CIFAR-10 binary loader,
//! augmentation and the HoG feature extractor.

mod augment;
mod blobs;
mod cifar;
mod gratings;
mod hog;

pub use augment::{augment, augment_image, AugmentSpec, Draw};
pub use blobs::{make_blobs, make_image_blobs, BlobSpec, ImageBlobSpec};
pub use cifar::{load_cifar10, read_cifar_file, CifarRecord, CIFAR_CLASSES, CIFAR_RECORD};
pub use gratings::GratingSpec;
pub use hog::{grayscale, hog_extract, hog_features, HogSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infoflow::LabelBatch;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Unlabeled,
}

/// Samples stacked along the first axis (`N×C×H×W` images or `N×D`
/// vectors), with optional labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    inputs: Tensor<T>,
    labels: Option<LabelBatch>,
    pub split: Split,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(inputs: Tensor<T>, labels: Option<LabelBatch>, split: Split) -> Result<Self> {
        if inputs.ndim() < 2 || inputs.rows() == 0 {
            return Err(Error::Data(format!("dataset needs at least one sample, got shape {:?}", inputs.shape())));
        }
        if let Some(l) = &labels {
            if l.len() != inputs.rows() {
                return Err(Error::Data(format!("{} samples but {} labels", inputs.rows(), l.len())));
            }
        }
        if !inputs.all_finite() {
            return Err(Error::Data("dataset contains non-finite values".into()));
        }
        Ok(Self { inputs, labels, split })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inputs(&self) -> &Tensor<T> {
        &self.inputs
    }

    /// Shape of one sample.
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn is_image(&self) -> bool {
        self.inputs.ndim() == 4
    }

    pub fn labels(&self) -> Option<&LabelBatch> {
        self.labels.as_ref()
    }

    pub fn require_labels(&self) -> Result<&LabelBatch> {
        self.labels.as_ref().ok_or_else(|| Error::Data(format!("{:?} split has no labels", self.split)))
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select_rows(idx),
            labels: self.labels.as_ref().map(|l| l.select(idx)),
            split: self.split,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset { inputs: self.inputs.cast(), labels: self.labels.clone(), split: self.split }
    }

    /// Same inputs under another transformation, e.g. HoG features.
    pub fn with_inputs(&self, inputs: Tensor<T>) -> Result<Self> {
        Self::new(inputs, self.labels.clone(), self.split)
    }
}
