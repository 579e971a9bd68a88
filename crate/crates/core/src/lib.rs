//! Joint estimation of states and sparse inputs of linear dynamical systems.
//!
//! The crate provides a robust Kalman smoother that estimates states and
//! unknown inputs jointly ([`rks`]), regularised variants that promote sparse
//! inputs through ℓ1, reweighted ℓ2 and group penalties ([`regularized`]),
//! hierarchical Bayesian variants based on sparse Bayesian learning and
//! variational Bayes ([`bayesian`]), basis-pursuit baselines built on a
//! stacked formulation ([`bp`]), and a benchmark harness ([`bench`]).

pub mod error;
pub mod linalg;
pub mod model;
pub mod rks;
pub mod report;
pub mod regularized;
pub mod bayesian;
pub mod bp;
pub mod bench;

pub use error::{Error, Result};
pub use linalg::{Mat, Vector};
pub use model::{LdsModel, SparseTrajectory, SupportMode};
pub use rks::{GaussianBelief, SmoothingResult};
pub use report::SolverReport;
