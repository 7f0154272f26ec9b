//! Minimal reverse-mode automatic differentiation for small convolutional
//! networks on the CPU.
//!
//! The engine is deliberately narrow: NCHW tensors, a define-by-run [`Graph`]
//! tape, the handful of ops the style-metric networks need, and SGD/Adam.
//! Everything is single-threaded and bit-for-bit deterministic, so two runs
//! with the same inputs produce identical parameters.

pub mod conv;
pub mod float;
pub mod graph;
pub mod optim;
pub mod params;
pub mod serialize;
pub mod tensor;

pub use float::Float;
pub use graph::{Gradients, Graph, StyleRoute, Var};
pub use optim::{clip_grad_norm, Optimizer, OptimizerKind};
pub use params::{Bound, ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
