//! Multi-rater segmentation label fusion.
//!
//! Several raters label the same grid. Each rater is modelled by a
//! confusion matrix, and the labels are fused with per-rater
//! log-likelihood weights. The fused mask and the per-rater matrices are
//! then re-estimated in turn until they settle ([`calibrate::recur`]).
//! Majority vote and STAPLE are included as baselines, along with Dice,
//! SSIM and cross-entropy metrics, a synthetic rater simulator and plain
//! text file formats.

pub mod baselines;
pub mod calibrate;
pub mod confusion;
pub mod error;
pub mod expertness;
pub mod fusion;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod synth;

pub use confusion::ConfusionMatrix;
pub use error::{Error, Result};
pub use grid::{
    argmax_grid, one_hot, uniform_prior, ClassGrid, GridShape, LabelStack, PriorMap, ProbMap,
};
