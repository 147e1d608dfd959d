//! Hierarchical-window sparse attention for single-image super-resolution.
//!
//! Each hierarchical layer partitions the feature map into windows whose
//! size grows through the block. Inside a window a sigmoid router scores
//! every token for every expert, each expert keeps its top-k tokens and
//! runs attention over that subset only. A channel attention branch and a
//! convolutional gated unit complete the layer.

pub mod ablate;
pub mod data;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod oracle;
pub mod par;
pub mod real;
pub mod routes;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::{Graph, Tensor, Var};
