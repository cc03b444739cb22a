//! Multi-view probing of neural-network weight matrices.
//!
//! A weight matrix `X` is summarized by learnable probe banks pushed through
//! first-order (`XU`, `XᵀV`) and Gram (`XXᵀW`, `XᵀXZ`) views, each evaluated
//! as a chain of thin products. Responses are standardized per sample,
//! projected, fused and classified.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod model;
pub mod probing;
pub mod tensor;
pub mod theory;
pub mod train;
pub mod verify;

pub use error::{DecodeError, Error, Result};
pub use model::{MVProbeModel, ModelConfig};
pub use probing::BranchKind;
pub use tensor::{Matrix, Rng};
