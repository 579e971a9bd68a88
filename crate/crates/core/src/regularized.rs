//! Penalised joint estimators built on the robust Kalman smoother.
//!
//! Each outer iteration rewrites the penalty as extra pseudo-measurements of
//! the input (`C̃ = [C; 0]`, `D̃ = [D; I]`), which restores full column rank of
//! the feedthrough and lets [`rks_smooth`] solve the inner problem exactly.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::linalg::{blkdiag, vcat, vstack, Mat, Vector};
use crate::model::LdsModel;
use crate::report::SolverReport;
use crate::rks::{default_p0, map_cost, rks_smooth, BatchOptions, SmoothingResult};

/// Soft thresholding `S_b(a) = sgn(a)·max(|a| − b, 0)`.
pub fn soft_threshold(a: f64, b: f64) -> f64 {
    debug_assert!(b >= 0.0);
    a.signum() * (a.abs() - b).max(0.0)
}

/// Group shrinkage `v/‖v‖·S_b(‖v‖)`, zero when `‖v‖ ≤ b`.
pub fn group_shrink(v: &Vector, b: f64) -> Vector {
    let norm = v.norm();
    if norm <= b {
        Vector::zeros(v.len())
    } else {
        v * ((norm - b) / norm)
    }
}

/// Diagonal of the reweighting matrix `W = diag(max(|u|, ε_w))^{2−l}`.
pub fn weight_matrix(u_prev: &Vector, l: f64, eps_w: f64) -> Vector {
    u_prev.map(|v| v.abs().max(eps_w).powf(2.0 - l))
}

/// ADMM state of the ℓ1 solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    /// Auxiliary variables `t_k`.
    pub t: Vec<Vector>,
    /// Multipliers `λ_k`.
    pub lambda: Vec<Vector>,
    /// Penalty parameter.
    pub c: f64,
    /// Regularisation weight per step.
    pub tau: Vec<f64>,
    /// Iterations performed.
    pub r: usize,
}

/// Options of [`l1_rks`] and [`group_l1_rks`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmOptions {
    /// Regularisation weight: one value broadcast to every step, or one per step.
    pub tau: Vec<f64>,
    /// Penalty parameter `c > 0`.
    pub c: f64,
    /// Iteration cap.
    pub r_max: usize,
    /// Early exit when `max_k ‖u_k^{(r)} − u_k^{(r−1)}‖∞` drops below this value; `0` disables.
    pub tol: f64,
    /// `P^ξ_{0|0}` of the inner smoother; `None` uses the identity.
    pub p0: Option<Mat>,
}

impl AdmmOptions {
    /// Broadcast `tau` with `c = 1`, `r_max = 200` and no early exit.
    pub fn new(tau: f64) -> Self {
        Self { tau: vec![tau], c: 1.0, r_max: 200, tol: 0.0, p0: None }
    }
}

/// Options of [`reweighted_l2_rks`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReweightOptions {
    /// Regularisation weight: one value broadcast to every step, or one per step.
    pub tau: Vec<f64>,
    /// Exponent `l ∈ (0, 2)` of the penalty `τ Σ|u_i|^l`.
    pub l: f64,
    /// Weight floor `ε_w`.
    pub eps_w: f64,
    /// Iteration cap.
    pub r_max: usize,
    /// Early exit threshold on the input change (∞-norm); `0` disables.
    pub tol: f64,
    /// `P^ξ_{0|0}` of the inner smoother; `None` uses the identity.
    pub p0: Option<Mat>,
}

impl ReweightOptions {
    /// Broadcast `tau` with `l = 1`, `ε_w = 1e−8`, `r_max = 200` and no early exit.
    pub fn new(tau: f64) -> Self {
        Self { tau: vec![tau], l: 1.0, eps_w: 1e-8, r_max: 200, tol: 0.0, p0: None }
    }
}

fn per_step(tau: &[f64], horizon: usize) -> Result<Vec<f64>> {
    let out = match tau.len() {
        1 => vec![tau[0]; horizon],
        len if len == horizon => tau.to_vec(),
        len => return Err(Error::DimensionMismatch(format!("{len} tau values for horizon {horizon}"))),
    };
    if out.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::InvalidParameter("tau must be finite and nonnegative".into()));
    }
    Ok(out)
}

/// Model with the input observed directly through extra measurements of covariance `extra_cov[k]`.
pub fn augment_with_input_measurements(model: &LdsModel, extra_cov: &[Mat]) -> Result<LdsModel> {
    let (n, m) = (model.n(), model.m());
    let steps = if extra_cov.len() == 1 && model.is_time_invariant() { 1 } else { model.horizon() };
    let pick = |k: usize| if extra_cov.len() == 1 { &extra_cov[0] } else { &extra_cov[k] };
    let c = (0..steps).map(|k| vstack(model.c(k), &Mat::zeros(m, n))).collect();
    let d = (0..steps).map(|k| vstack(model.d(k), &Mat::identity(m, m))).collect();
    let r = (0..steps).map(|k| blkdiag(&[model.r(k), pick(k)])).collect();
    model.with_measurement_model(c, d, r)
}

fn augment_measurements(y: &[Vector], extra: &[Vector]) -> Vec<Vector> {
    y.iter().zip(extra).map(|(yk, ek)| vcat(yk, ek)).collect()
}

fn check_finite_inputs(u: &[Vector], what: &str) -> Result<()> {
    if u.iter().all(|v| v.iter().all(|x| x.is_finite())) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn max_change(a: &[Vector], b: &[Vector]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
}

fn stacked_norm(v: &[Vector]) -> f64 {
    v.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt()
}

enum Shrink {
    Entrywise,
    RowGroups,
}

/// Quadratic data and dynamics cost (including the prior on `x_1`) at `(x, u)`.
fn quadratic_cost(model: &LdsModel, y: &[Vector], p0: &Mat, s: &SmoothingResult) -> Result<f64> {
    map_cost(model, y, &BatchOptions::matching_rks(model, p0), &s.x, &s.u)
}

fn admm(model: &LdsModel, y: &[Vector], opts: &AdmmOptions, shrink: Shrink) -> Result<(SolverReport, AdmmState)> {
    let start = Instant::now();
    model.check_measurements(y)?;
    let (m, horizon) = (model.m(), model.horizon());
    if !(opts.c > 0.0) || opts.r_max == 0 {
        return Err(Error::InvalidParameter("c must be positive and r_max at least 1".into()));
    }
    let tau = per_step(&opts.tau, horizon)?;
    let p0 = opts.p0.clone().unwrap_or_else(|| default_p0(model));
    let aug = augment_with_input_measurements(model, &[Mat::identity(m, m) / opts.c])?;
    let mut state = AdmmState {
        t: vec![Vector::zeros(m); horizon],
        lambda: vec![Vector::zeros(m); horizon],
        c: opts.c,
        tau: tau.clone(),
        r: 0,
    };
    let mut report = SolverReport::default();
    let mut u_prev: Option<Vec<Vector>> = None;
    let mut last = None;
    for r in 1..=opts.r_max {
        let pseudo: Vec<Vector> = state.t.iter().zip(&state.lambda).map(|(t, l)| t - l / opts.c).collect();
        let smooth = rks_smooth(&aug, &augment_measurements(y, &pseudo), &p0)?;
        check_finite_inputs(&smooth.u, "l1 inner smoother")?;
        let t_prev = state.t.clone();
        match shrink {
            Shrink::Entrywise => {
                for k in 0..horizon {
                    let v = &smooth.u[k] + &state.lambda[k] / opts.c;
                    state.t[k] = v.map(|a| soft_threshold(a, tau[k] / opts.c));
                }
            }
            Shrink::RowGroups => {
                let thr = tau[0] / opts.c;
                for i in 0..m {
                    let row = Vector::from_fn(horizon, |k, _| smooth.u[k][i] + state.lambda[k][i] / opts.c);
                    let shrunk = group_shrink(&row, thr);
                    for k in 0..horizon {
                        state.t[k][i] = shrunk[k];
                    }
                }
            }
        }
        for k in 0..horizon {
            let step = (&smooth.u[k] - &state.t[k]) * opts.c;
            state.lambda[k] += step;
        }
        state.r = r;
        let primal: Vec<Vector> = smooth.u.iter().zip(&state.t).map(|(u, t)| u - t).collect();
        let dual: Vec<Vector> = state.t.iter().zip(&t_prev).map(|(a, b)| (a - b) * opts.c).collect();
        report.primal_residual.push(stacked_norm(&primal));
        report.dual_residual.push(stacked_norm(&dual));
        let penalty: f64 = match shrink {
            Shrink::Entrywise => smooth.u.iter().zip(&tau).map(|(u, t)| t * u.lp_norm(1)).sum(),
            Shrink::RowGroups => (0..m)
                .map(|i| tau[0] * smooth.u.iter().map(|u| u[i] * u[i]).sum::<f64>().sqrt())
                .sum(),
        };
        report.objective.push(quadratic_cost(model, y, &p0, &smooth)? + 2.0 * penalty);
        let delta = u_prev.as_ref().map_or(f64::INFINITY, |prev| max_change(&smooth.u, prev));
        report.deltas.push(delta);
        u_prev = Some(smooth.u.clone());
        last = Some(smooth);
        if opts.tol > 0.0 && delta < opts.tol {
            report.converged = true;
            break;
        }
    }
    let smooth = last.expect("at least one iteration");
    report.iterations = state.r;
    report.x = smooth.x.clone();
    report.u = smooth.u.clone();
    report.smoothing = Some(smooth);
    report.runtime_s = start.elapsed().as_secs_f64();
    Ok((report, state))
}

/// ℓ1-regularised smoother solved by ADMM.
///
/// Each iteration runs the robust smoother on the measurement model augmented
/// with `t_k − λ_k/c` observed through covariance `c⁻¹I`, then applies
/// `t_k ← S_{τ_k/c}(u_k + λ_k/c)` and `λ_k ← λ_k + c(u_k − t_k)`.
///
/// The fixed point of this iteration minimises `f + 2Σ τ_k‖u_k‖₁`, where `f`
/// is the quadratic cost of [`rks_smooth`], and the tracked objective reports
/// exactly that quantity.
pub fn l1_rks(model: &LdsModel, y: &[Vector], opts: &AdmmOptions) -> Result<SolverReport> {
    admm(model, y, opts, Shrink::Entrywise).map(|(r, _)| r)
}

/// Like [`l1_rks`] but also returns the final ADMM state.
pub fn l1_rks_with_state(model: &LdsModel, y: &[Vector], opts: &AdmmOptions) -> Result<(SolverReport, AdmmState)> {
    admm(model, y, opts, Shrink::Entrywise)
}

/// Group-ℓ1 smoother for inputs sharing one support over time.
///
/// Identical to [`l1_rks`] except that the auxiliary update shrinks each input
/// coordinate's trajectory `(u_1(i), …, u_K(i))` as one group, using the first
/// entry of `opts.tau`.
pub fn group_l1_rks(model: &LdsModel, y: &[Vector], opts: &AdmmOptions) -> Result<SolverReport> {
    admm(model, y, opts, Shrink::RowGroups).map(|(r, _)| r)
}

/// Reweighted ℓ2 smoother for the penalty `Σ τ_k Σ_i |u_k(i)|^l`, `0 < l < 2`.
///
/// Each iteration majorises the penalty by a weighted quadratic around the
/// previous inputs (starting from all ones) and solves the resulting smoothing
/// problem. The tracked objective is the majorising cost at the new iterate,
/// which is non-increasing.
pub fn reweighted_l2_rks(model: &LdsModel, y: &[Vector], opts: &ReweightOptions) -> Result<SolverReport> {
    let start = Instant::now();
    model.check_measurements(y)?;
    let (m, horizon) = (model.m(), model.horizon());
    if !(opts.l > 0.0 && opts.l < 2.0) {
        return Err(Error::InvalidParameter("l must lie in (0, 2)".into()));
    }
    if !(opts.eps_w > 0.0) || opts.r_max == 0 {
        return Err(Error::InvalidParameter("eps_w must be positive and r_max at least 1".into()));
    }
    let tau = per_step(&opts.tau, horizon)?;
    if tau.iter().any(|t| *t <= 0.0) {
        return Err(Error::InvalidParameter("tau must be positive".into()));
    }
    let p0 = opts.p0.clone().unwrap_or_else(|| default_p0(model));
    let zeros = vec![Vector::zeros(m); horizon];
    let y_aug = augment_measurements(y, &zeros);
    let mut u_prev = vec![Vector::from_element(m, 1.0); horizon];
    let mut report = SolverReport::default();
    let mut last = None;
    for r in 1..=opts.r_max {
        let weights: Vec<Vector> = u_prev.iter().map(|u| weight_matrix(u, opts.l, opts.eps_w)).collect();
        let extra: Vec<Mat> = weights
            .iter()
            .zip(&tau)
            .map(|(w, t)| Mat::from_diagonal(&(w * (2.0 / (t * opts.l)))))
            .collect();
        let aug = augment_with_input_measurements(model, &extra)?;
        let smooth = rks_smooth(&aug, &y_aug, &p0)?;
        check_finite_inputs(&smooth.u, "reweighted inner smoother")?;
        let mut surrogate = quadratic_cost(model, y, &p0, &smooth)?;
        for k in 0..horizon {
            for i in 0..m {
                let a = u_prev[k][i].abs().max(opts.eps_w);
                let u = smooth.u[k][i];
                surrogate += tau[k] * (0.5 * opts.l * a.powf(opts.l - 2.0) * u * u + (1.0 - 0.5 * opts.l) * a.powf(opts.l));
            }
        }
        report.objective.push(surrogate);
        let delta = max_change(&smooth.u, &u_prev);
        report.deltas.push(delta);
        report.iterations = r;
        u_prev = smooth.u.clone();
        last = Some(smooth);
        if opts.tol > 0.0 && r > 1 && delta < opts.tol {
            report.converged = true;
            break;
        }
    }
    let smooth = last.expect("at least one iteration");
    report.x = smooth.x.clone();
    report.u = smooth.u.clone();
    report.hyper = u_prev.iter().map(|u| weight_matrix(u, opts.l, opts.eps_w)).collect();
    report.smoothing = Some(smooth);
    report.runtime_s = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Ridge-regularised smoother: the robust smoother with a zero-mean Gaussian
/// prior of variance `input_var` on every input entry. Works for any `p`.
pub fn ridge_rks(model: &LdsModel, y: &[Vector], input_var: f64, p0: Option<&Mat>) -> Result<SolverReport> {
    let start = Instant::now();
    if !(input_var > 0.0) {
        return Err(Error::InvalidParameter("ridge variance must be positive".into()));
    }
    let m = model.m();
    let p0 = p0.cloned().unwrap_or_else(|| default_p0(model));
    let aug = augment_with_input_measurements(model, &[Mat::identity(m, m) * input_var])?;
    let zeros = vec![Vector::zeros(m); model.horizon()];
    let smooth = rks_smooth(&aug, &augment_measurements(y, &zeros), &p0)?;
    Ok(SolverReport {
        x: smooth.x.clone(),
        u: smooth.u.clone(),
        iterations: 1,
        converged: true,
        smoothing: Some(smooth),
        runtime_s: start.elapsed().as_secs_f64(),
        ..Default::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_values() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-3.0, 0.0), -3.0);
    }

    #[test]
    fn soft_threshold_is_nonexpansive() {
        let pts = [-3.0, -1.2, -0.4, 0.0, 0.3, 0.9, 2.5];
        for &a in &pts {
            for &b in &pts {
                assert!((soft_threshold(a, 0.7) - soft_threshold(b, 0.7)).abs() <= (a - b).abs() + 1e-15);
            }
        }
    }

    #[test]
    fn weight_matrix_values() {
        let w = weight_matrix(&Vector::from_vec(vec![2.0, -0.5]), 1.0, 0.0);
        assert_eq!(w.as_slice(), &[2.0, 0.5]);
        let w = weight_matrix(&Vector::from_vec(vec![1.0, 1.0, 1.0]), 0.4, 1e-8);
        assert_eq!(w.as_slice(), &[1.0, 1.0, 1.0]);
        let w = weight_matrix(&Vector::from_vec(vec![0.0, 3.0]), 1.0, 1e-8);
        assert_eq!(w.as_slice(), &[1e-8, 3.0]);
    }

    #[test]
    fn group_shrink_dead_zone_and_direction() {
        let v = Vector::from_vec(vec![0.3, -0.4]);
        assert_eq!(group_shrink(&v, 0.5), Vector::zeros(2));
        let v = Vector::from_vec(vec![3.0, -4.0]);
        let s = group_shrink(&v, 1.0);
        assert!((s - v * 0.8).norm() < 1e-15);
    }
}
