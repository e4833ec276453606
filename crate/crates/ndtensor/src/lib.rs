//! Minimal deterministic tensor library: dense `f64` tensors, an arena
//! computation graph with reverse-mode differentiation, Xavier
//! initialization, Adam, finite-difference gradient checks, and a
//! single-file parameter archive.

pub mod archive;
mod error;
pub mod gradcheck;
pub mod graph;
pub mod init;
mod kernels;
pub mod optim;
pub mod params;
pub mod rng;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Gradients, Graph, Mode, NodeId};
pub use init::xavier_uniform;
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore, Precision};
pub use rng::{RngSnapshot, RngState};
pub use tensor::Tensor;
