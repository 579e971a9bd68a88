//! Common output of the iterative estimators.

use crate::linalg::Vector;
use crate::rks::SmoothingResult;

/// Estimates and iteration trace of one solve.
#[derive(Debug, Clone, Default)]
pub struct SolverReport {
    /// Final state estimates.
    pub x: Vec<Vector>,
    /// Final input estimates.
    pub u: Vec<Vector>,
    /// Tracked objective per iteration. Its meaning depends on the solver:
    /// penalised cost for the regularised solvers, marginal log-likelihood for
    /// sparse Bayesian learning and negative free energy for variational Bayes.
    pub objective: Vec<f64>,
    /// Largest change of the tracked parameters per iteration.
    pub deltas: Vec<f64>,
    /// ADMM primal residual `‖u − t‖` per iteration (empty for other solvers).
    pub primal_residual: Vec<f64>,
    /// ADMM dual residual `c‖t_r − t_{r−1}‖` per iteration (empty for other solvers).
    pub dual_residual: Vec<f64>,
    /// Learned hyperparameters: per-step (or one shared) prior variances or precisions.
    pub hyper: Vec<Vector>,
    /// Iterations performed.
    pub iterations: usize,
    /// True when a stopping tolerance was met before the iteration cap.
    pub converged: bool,
    /// Wall-clock time of the solve in seconds.
    pub runtime_s: f64,
    /// Output of the last inner smoothing pass, when the solver has one.
    pub smoothing: Option<SmoothingResult>,
}
