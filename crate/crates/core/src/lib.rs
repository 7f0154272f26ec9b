//! Few-shot writer-style metric learning: synthetic glyph corpora, spatial
//! style matrices, nine-palace attention, triplet training and episodic
//! evaluation.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod cam;
pub mod config;
pub mod corpus;
pub mod error;
pub mod fewshot;
pub mod loss;
pub mod nets;
pub mod report;
pub mod seed;
pub mod style;
pub mod trainer;

pub use error::{Result, ShufaError};
pub use shufa_autograd;
