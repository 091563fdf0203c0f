//! Hierarchical character → word → sentence bidirectional-GRU regression of
//! personality trait scores from short texts. Also provides the baselines
//! with their cross-validation harness, and a PCA view of sentence vectors.
//!
//! Everything is implemented on plain `f64` vectors and matrices with exact
//! hand-written gradients; [`train::grad_check`] verifies them against
//! central finite differences.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gru;
pub mod model;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod viz;
pub mod vocab;

pub use error::{Error, Result};
