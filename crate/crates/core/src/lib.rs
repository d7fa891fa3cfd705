pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod infoflow;
pub mod kernels;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Gradients, Tape, Tensor, Var};

/// 64-bit reference aliases.
pub type Tensor64 = Tensor<f64>;
pub type Network64 = nn::Network<f64>;
pub type Dataset64 = data::Dataset<f64>;
pub type Teacher64 = distill::Teacher<f64>;

/// 32-bit speed-mode aliases.
pub type Tensor32 = Tensor<f32>;
pub type Network32 = nn::Network<f32>;
pub type Dataset32 = data::Dataset<f32>;
pub type Teacher32 = distill::Teacher<f32>;
