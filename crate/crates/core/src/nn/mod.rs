//! Layer graphs, networks and checkpoints.

mod arch;
pub mod checkpoint;
mod graph;
mod network;
mod params;

pub use arch::Arch;
pub use graph::{Layer, LayerGraph};
pub use network::{BnBuffers, ForwardPass, Mode, Network, BN_EPS, BN_MOMENTUM};
pub use params::{Param, ParamStore};
