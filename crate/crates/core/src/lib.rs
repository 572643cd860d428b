//! Region-wise segmentation losses.
//!
//! A region-wise loss is the pixel-wise inner product between softmax
//! probabilities and a penalty map derived from the ground truth. This crate
//! provides the grid containers and file format, exact distance transforms,
//! the map families, losses with analytic gradients, gradient-sign
//! diagnostics, evaluation metrics and a small training harness.

pub mod analysis;
pub mod edt;
pub mod error;
pub mod grid;
pub mod loss;
pub mod metrics;
pub mod rwg;
pub mod rwmaps;
pub mod trainer;

pub use error::{Error, Result};
pub use grid::{
    one_hot, Field, Geometry, GradField, LabelGrid, LogitField, OneHot, ProbField, RwMap,
};
