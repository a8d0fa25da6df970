//! Principal nested cones (PNC): nonlinear dimension reduction for data that
//! carry both a size (Euclidean norm) and a shape (direction).
//!
//! Observations are columns of a `(d+1) × n` matrix. A fit removes one
//! dimension per stage by projecting onto a hypercone and rotating the cone
//! axis away, keeping every observation's size fixed. The signed, size-scaled
//! residuals of the stages become the scores; [`backfit`] inverts the whole
//! sequence exactly.
//!
//! The crate is `no_std` (it needs `alloc`); file formats and the command line
//! live in the `pnc-cli` crate.

#![no_std]

extern crate alloc;

#[cfg(feature = "std")]
extern crate std;

mod error;
mod linalg;
mod prelude;

pub mod backfit;
pub mod baselines;
pub mod fast;
pub mod fit;
pub mod geometry;
pub mod inference;
pub mod optim;
pub mod simulate;

pub use backfit::{backfit, chordal_residual_adjust, mean_size_and_shape, score_path, ReconstructionRequest};
pub use error::{PncError, Result};
pub use fast::{fast_backfit, fast_fit, pca_inverse, pca_transform, FastPncModel, PcaTransform};
pub use fit::{
    fit, fit_stage, polar_scores, reduce_to_plane, stage_objective, transform, variance_explained, OptimizerConfig,
    PncModel, PolarScores, ScoreMatrix, StageDiagnostics,
};
pub use geometry::{ConePoint, HyperconeStage, ResidualKind};

/// Data matrix: one observation per column.
pub type Matrix = nalgebra::DMatrix<f64>;
/// Dense column vector.
pub type Vector = nalgebra::DVector<f64>;
