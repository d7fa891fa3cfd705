//! Frozen knowledge sources.

use crate::data::{grayscale, hog_extract, HogSpec};
use crate::error::{invalid, shape_err, Result};
use crate::nn::Network;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A frozen network or a handcrafted HoG extractor (one transfer point).
#[derive(Clone, Debug)]
pub enum Teacher<T> {
    Network(Network<T>),
    Hog(HogSpec),
}

impl<T: Scalar> Teacher<T> {
    pub fn name(&self) -> String {
        match self {
            Teacher::Network(n) => n.graph().name.clone(),
            Teacher::Hog(_) => "hog".into(),
        }
    }

    pub fn n_points(&self) -> usize {
        match self {
            Teacher::Network(n) => n.graph().n_transfer_points(),
            Teacher::Hog(_) => 1,
        }
    }

    /// Width of each transfer-point representation.
    pub fn point_dims(&self) -> Result<Vec<usize>> {
        match self {
            Teacher::Network(n) => n.graph().representation_dims(),
            Teacher::Hog(spec) => Ok(vec![spec.len()]),
        }
    }

    /// Evaluation-mode representations at every transfer point.
    pub fn representations(&mut self, inputs: &Tensor<T>, batch_size: usize) -> Result<Vec<Tensor<T>>> {
        match self {
            Teacher::Network(n) => n.representations(inputs, batch_size),
            Teacher::Hog(spec) => {
                if inputs.ndim() != 4 {
                    return shape_err(format!("HoG teacher needs N×C×H×W images, got {:?}", inputs.shape()));
                }
                let s = inputs.shape();
                let (c, h, w) = (s[1], s[2], s[3]);
                let mut out = Vec::with_capacity(s[0] * spec.len());
                for i in 0..s[0] {
                    out.extend(hog_extract(&grayscale(inputs.row(i), c, h, w)?, h, w, spec)?);
                }
                Ok(vec![Tensor::new(&[s[0], spec.len()], out)?])
            }
        }
    }

    pub fn logits(&mut self, inputs: &Tensor<T>, batch_size: usize) -> Result<Tensor<T>> {
        match self {
            Teacher::Network(n) => n.logits(inputs, batch_size),
            Teacher::Hog(_) => invalid("the HoG teacher has no logits"),
        }
    }

    pub fn has_logits(&self) -> bool {
        matches!(self, Teacher::Network(n) if n.has_head())
    }
}
