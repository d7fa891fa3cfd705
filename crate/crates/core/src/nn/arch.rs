//! Named architectures.
//!
//! The CNN-1 family is three conv blocks followed by a dense embedding,
//! with a transfer point after each block and after the embedding:
//!
//! ```text
//! conv3×3(w)-bn-relu-pool | conv3×3(2w)-bn-relu-pool | conv3×3(4w)-bn-relu-gap | dense(8w)
//! ```
//!
//! `cnn1` uses `w = 8`, `cnn1-l` halves it, `cnn1-a` (the auxiliary of
//! `cnn1`) doubles it and `cnn1-h` doubles it again.

use std::fmt;
use std::str::FromStr;

use super::graph::{Layer, LayerGraph};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Arch {
    Identity,
    /// CNN-1 family with base width `width` (8 for `cnn1`).
    Cnn1 { width: usize },
    /// Fully connected: hidden sizes, the last one being the linear embedding.
    Mlp { widths: Vec<usize> },
}

impl Arch {
    /// Same topology with twice the filters/neurons per layer.
    pub fn doubled(&self) -> Arch {
        match self {
            Arch::Identity => Arch::Identity,
            Arch::Cnn1 { width } => Arch::Cnn1 { width: width * 2 },
            Arch::Mlp { widths } => Arch::Mlp { widths: widths.iter().map(|w| w * 2).collect() },
        }
    }

    pub fn graph(&self, input_shape: &[usize], head_classes: Option<usize>) -> Result<LayerGraph> {
        let (layers, transfer_points) = match self {
            Arch::Identity => (Vec::new(), Vec::new()),
            Arch::Cnn1 { width } => {
                let w = *width;
                let [c, h, wd] = input_shape[..] else {
                    return invalid(format!("{self} expects a C×H×W input, got {input_shape:?}"));
                };
                if h < 4 || wd < 4 {
                    return invalid(format!("{self} needs inputs of at least 4×4"));
                }
                let conv = |i, o| Layer::Conv2d { in_channels: i, out_channels: o, kernel: 3, stride: 1, pad: 1 };
                let layers = vec![
                    conv(c, w),
                    Layer::BatchNorm { channels: w },
                    Layer::Relu,
                    Layer::MaxPool2,
                    conv(w, 2 * w),
                    Layer::BatchNorm { channels: 2 * w },
                    Layer::Relu,
                    Layer::MaxPool2,
                    conv(2 * w, 4 * w),
                    Layer::BatchNorm { channels: 4 * w },
                    Layer::Relu,
                    Layer::GlobalAvgPool,
                    Layer::Dense { inputs: 4 * w, outputs: 8 * w },
                ];
                (layers, vec![3, 7, 11, 12])
            }
            Arch::Mlp { widths } => {
                let mut layers = Vec::new();
                let mut inputs: usize = input_shape.iter().product();
                if input_shape.len() > 1 {
                    layers.push(Layer::Flatten);
                }
                let mut points = Vec::new();
                for (k, &w) in widths.iter().enumerate() {
                    layers.push(Layer::Dense { inputs, outputs: w });
                    if k + 1 < widths.len() {
                        layers.push(Layer::Relu);
                    }
                    points.push(layers.len() - 1);
                    inputs = w;
                }
                (layers, points)
            }
        };
        let graph = LayerGraph {
            name: self.to_string(),
            input_shape: input_shape.to_vec(),
            layers,
            transfer_points,
            head_classes,
        };
        graph.validate()?;
        Ok(graph)
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arch::Identity => write!(f, "identity"),
            Arch::Cnn1 { width: 4 } => write!(f, "cnn1-l"),
            Arch::Cnn1 { width: 8 } => write!(f, "cnn1"),
            Arch::Cnn1 { width: 16 } => write!(f, "cnn1-a"),
            Arch::Cnn1 { width: 32 } => write!(f, "cnn1-h"),
            Arch::Cnn1 { width } => write!(f, "cnn1:{width}"),
            Arch::Mlp { widths } => {
                let w: Vec<String> = widths.iter().map(usize::to_string).collect();
                write!(f, "mlp:{}", w.join(","))
            }
        }
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let parse_list = |body: &str| -> Result<Vec<usize>> {
            body.split(',')
                .map(|p| p.trim().parse::<usize>().map_err(|_| Error::InvalidArgument(format!("bad width '{p}' in '{s}'"))))
                .collect()
        };
        match s.as_str() {
            "identity" => Ok(Arch::Identity),
            "cnn1-l" => Ok(Arch::Cnn1 { width: 4 }),
            "cnn1" => Ok(Arch::Cnn1 { width: 8 }),
            "cnn1-a" => Ok(Arch::Cnn1 { width: 16 }),
            "cnn1-h" => Ok(Arch::Cnn1 { width: 32 }),
            _ => {
                if let Some(body) = s.strip_prefix("cnn1:") {
                    let w = parse_list(body)?;
                    match w[..] {
                        [width] if width > 0 => Ok(Arch::Cnn1 { width }),
                        _ => invalid(format!("'{s}' needs one positive width")),
                    }
                } else if let Some(body) = s.strip_prefix("mlp:") {
                    let widths = parse_list(body)?;
                    if widths.contains(&0) {
                        return invalid("mlp widths must be positive");
                    }
                    Ok(Arch::Mlp { widths })
                } else {
                    invalid(format!("unknown architecture '{s}'"))
                }
            }
        }
    }
}
