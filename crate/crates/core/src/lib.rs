//! Training-free neural active learning.
//!
//! Analytic NTK and NNGP kernels for ReLU MLPs, an NTKGP posterior-variance
//! engine with incremental and sparse variants, label-free selection criteria
//! with greedy optimizers, bootstrap model selection, and a finite-width
//! network used to check all of the above.

pub mod criteria;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gp;
pub mod kernel;
pub mod linalg;
pub mod modelsel;
pub mod nn;
pub mod report;
pub mod rng;
pub mod seeding;
pub mod select;
pub mod sparse;
pub mod stats;

pub use error::{Error, Result};
pub use kernel::MlpArchitecture;
