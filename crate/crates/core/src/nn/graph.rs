use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize },
    Dense { inputs: usize, outputs: usize },
    Relu,
    BatchNorm { channels: usize },
    MaxPool2,
    GlobalAvgPool,
    Flatten,
}

/// Static description of a feed-forward network.
///
/// `transfer_points` lists the layers whose outputs are exported as
/// representations; the last one is the final representation, on top of
/// which an optional classification head is placed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerGraph {
    pub name: String,
    /// Per-sample input shape, e.g. `[3, 16, 16]` or `[8]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
    pub transfer_points: Vec<usize>,
    #[serde(default)]
    pub head_classes: Option<usize>,
}

impl LayerGraph {
    /// Network without layers: the input itself is the only representation.
    pub fn identity(input_shape: &[usize]) -> Self {
        Self {
            name: "identity".into(),
            input_shape: input_shape.to_vec(),
            layers: Vec::new(),
            transfer_points: Vec::new(),
            head_classes: None,
        }
    }

    /// Per-sample output shape after every layer.
    pub fn output_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match *layer {
                Layer::Conv2d { in_channels, out_channels, kernel, stride, pad } => {
                    let [c, h, w] = shape[..] else {
                        return shape_err(format!("layer {i}: conv2d expects C×H×W, got {shape:?}"));
                    };
                    if c != in_channels {
                        return shape_err(format!("layer {i}: conv2d expects {in_channels} channels, got {c}"));
                    }
                    if kernel == 0 || stride == 0 || h + 2 * pad < kernel || w + 2 * pad < kernel {
                        return shape_err(format!("layer {i}: conv2d geometry invalid for {shape:?}"));
                    }
                    vec![out_channels, (h + 2 * pad - kernel) / stride + 1, (w + 2 * pad - kernel) / stride + 1]
                }
                Layer::Dense { inputs, outputs } => {
                    if shape != [inputs] {
                        return shape_err(format!("layer {i}: dense expects [{inputs}], got {shape:?}"));
                    }
                    vec![outputs]
                }
                Layer::Relu => shape,
                Layer::BatchNorm { channels } => {
                    if shape.first() != Some(&channels) {
                        return shape_err(format!("layer {i}: batchnorm over {channels} channels, got {shape:?}"));
                    }
                    shape
                }
                Layer::MaxPool2 => {
                    let [c, h, w] = shape[..] else {
                        return shape_err(format!("layer {i}: max_pool2 expects C×H×W"));
                    };
                    if h < 2 || w < 2 {
                        return shape_err(format!("layer {i}: max_pool2 input too small"));
                    }
                    vec![c, h / 2, w / 2]
                }
                Layer::GlobalAvgPool => {
                    let [c, _, _] = shape[..] else {
                        return shape_err(format!("layer {i}: global_avg_pool expects C×H×W"));
                    };
                    vec![c]
                }
                Layer::Flatten => vec![shape.iter().product()],
            };
            out.push(shape.clone());
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return invalid("input shape must be non-empty with positive extents");
        }
        let shapes = self.output_shapes()?;
        if self.transfer_points.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("transfer points must be strictly increasing");
        }
        if let Some(&last) = self.transfer_points.last() {
            if last >= self.layers.len() {
                return invalid(format!("transfer point {last} out of range"));
            }
        }
        if self.head_classes == Some(0) {
            return invalid("classification head needs at least one class");
        }
        if self.head_classes.is_some() && self.transfer_points.last().map(|&l| shapes[l].len()) != Some(1) {
            return invalid("classification head requires a flat final representation");
        }
        Ok(())
    }

    /// Number of exported representations; an identity graph exports its input.
    pub fn n_transfer_points(&self) -> usize {
        self.transfer_points.len().max(1)
    }

    /// Flattened width of every exported representation.
    pub fn representation_dims(&self) -> Result<Vec<usize>> {
        if self.transfer_points.is_empty() {
            return Ok(vec![self.input_shape.iter().product()]);
        }
        let shapes = self.output_shapes()?;
        Ok(self.transfer_points.iter().map(|&l| shapes[l].iter().product()).collect())
    }
}
