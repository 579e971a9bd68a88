//! Hierarchical-prior estimators.
//!
//! Sparse Bayesian learning places `u_k ~ N(0, Diag γ_k)` on the inputs and
//! learns `γ` by expectation maximisation, where the E-step is a Kalman
//! smoother on the augmented state `ξ_k = [x_k; u_k]`. Variational Bayes places
//! a Gamma hyperprior on precisions `β` and runs mean-field coordinate ascent.
//! Both have jointly sparse variants with one hyperparameter vector shared over
//! time.

use std::f64::consts::PI;
use std::time::Instant;

use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::linalg::{blkdiag, hstack, spd_inverse, spd_logdet, spd_solve, symmetrize, vcat, vstack, Mat, Vector};
use crate::model::LdsModel;
use crate::report::SolverReport;
use crate::rks::{a_tilde, default_p0, initial_state_prior, state_only_pass, GaussianBelief, SmoothingResult};

/// Lower bound on learned prior variances.
pub const GAMMA_FLOOR: f64 = 1e-10;
/// Upper bound on learned precisions.
pub const BETA_CEILING: f64 = 1e12;
/// Covariance norm treated as a blow-up.
pub const BLOWUP_NORM: f64 = 1e12;

/// Augmented system for `ξ_k = [x_k; u_k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedModel {
    /// `Ā = [[A, B], [0, 0]]`.
    pub a_bar: Mat,
    /// `C̄ = [C, D]`.
    pub c_bar: Mat,
    /// `Q̄ = blkdiag(Q, Diag γ_{k+1})`.
    pub q_bar: Mat,
}

/// Augmented matrices of step `k`, with `gamma_next` the prior variances of `u_{k+1}`.
pub fn augmented_model(model: &LdsModel, k: usize, gamma_next: &Vector) -> AugmentedModel {
    let (n, m) = (model.n(), model.m());
    let a_bar = vstack(&a_tilde(model, k), &Mat::zeros(m, n + m));
    let c_bar = hstack(model.c(k), model.d(k));
    let q_bar = blkdiag(&[model.q(k), &Mat::from_diagonal(gamma_next)]);
    AugmentedModel { a_bar, c_bar, q_bar }
}

/// M-step `γ(i) = û(i)² + P^u(i,i)`, floored at `floor`.
pub fn sbl_mstep(u_hat: &Vector, p_u: &Mat, floor: f64) -> Vector {
    Vector::from_fn(u_hat.len(), |i, _| (u_hat[i] * u_hat[i] + p_u[(i, i)]).max(floor))
}

/// Options of the sparse Bayesian learning solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct SblOptions {
    /// Iteration cap.
    pub r_max: usize,
    /// Stop when the largest relative change of any `γ` entry falls below this value.
    pub eps_thres: f64,
    /// Floor of `γ`.
    pub gamma_floor: f64,
    /// `P^ξ_{0|0}`; `None` uses the identity.
    pub p0: Option<Mat>,
}

impl Default for SblOptions {
    fn default() -> Self {
        Self { r_max: 100, eps_thres: 1e-6, gamma_floor: GAMMA_FLOOR, p0: None }
    }
}

fn gamma_at(gamma: &[Vector], k: usize) -> &Vector {
    if gamma.len() == 1 {
        &gamma[0]
    } else {
        &gamma[k]
    }
}

/// E-step: Kalman filter and Rauch–Tung–Striebel smoother on the augmented model
/// with fixed prior variances (`gamma` holds one vector per step or one shared vector).
///
/// Returns the smoothed beliefs and the marginal log-likelihood `log p(Y; γ)`
/// accumulated from the innovations.
pub fn sbl_estep(model: &LdsModel, y: &[Vector], gamma: &[Vector], p0: &Mat) -> Result<(SmoothingResult, f64)> {
    model.check_measurements(y)?;
    let (n, m, p, horizon) = (model.n(), model.m(), model.p(), model.horizon());
    if gamma.len() != 1 && gamma.len() != horizon || gamma.iter().any(|g| g.len() != m) {
        return Err(Error::DimensionMismatch("gamma must hold 1 or K vectors of length m".into()));
    }
    let dim = n + m;
    let eye = Mat::identity(dim, dim);
    let mut filtered: Vec<GaussianBelief> = Vec::with_capacity(horizon);
    let mut predicted: Vec<(Vector, Mat)> = Vec::with_capacity(horizon);
    let mut innovation_norms = Vec::with_capacity(horizon);
    let mut loglik = 0.0;
    for k in 0..horizon {
        let (x_pred, px_pred) = if k == 0 {
            (Vector::zeros(n), initial_state_prior(model, p0))
        } else {
            let prev = &filtered[k - 1];
            let at = a_tilde(model, k - 1);
            let mut px = &at * &prev.cov * at.transpose() + model.q(k - 1);
            symmetrize(&mut px);
            (&at * &prev.mean, px)
        };
        let xi_pred = vcat(&x_pred, &Vector::zeros(m));
        let p_pred = blkdiag(&[&px_pred, &Mat::from_diagonal(gamma_at(gamma, k))]);
        let c_bar = hstack(model.c(k), model.d(k));
        let r = model.r(k);
        let pct = &p_pred * c_bar.transpose();
        let mut s = &c_bar * &pct + r;
        symmetrize(&mut s);
        let innovation = &y[k] - &c_bar * &xi_pred;
        innovation_norms.push(innovation.norm());
        let s_inv_e = spd_solve(&s, &Mat::from_column_slice(p, 1, innovation.as_slice()), "innovation covariance")?;
        loglik -= 0.5 * (p as f64 * (2.0 * PI).ln() + spd_logdet(&s, "innovation covariance")? + innovation.dot(&s_inv_e.column(0)));
        let gain = spd_solve(&s, &pct.transpose(), "innovation covariance")?.transpose();
        let mean = &xi_pred + &gain * &innovation;
        let igc = &eye - &gain * &c_bar;
        let mut cov = &igc * &p_pred * igc.transpose() + &gain * r * gain.transpose();
        symmetrize(&mut cov);
        let norm = cov.norm();
        if !norm.is_finite() {
            return Err(Error::NonFinite("sbl filtered covariance".into()));
        }
        if norm > BLOWUP_NORM {
            return Err(Error::CovarianceBlowup(norm));
        }
        filtered.push(GaussianBelief::new(mean, cov, n, k, k + 1));
        predicted.push((xi_pred, p_pred));
    }

    // The predicted covariance is block diagonal with a zero input column in Ā,
    // so the smoother gain only acts through the state block.
    let mut means: Vec<Vector> = filtered.iter().map(|b| b.mean.clone()).collect();
    let mut covs: Vec<Mat> = filtered.iter().map(|b| b.cov.clone()).collect();
    let mut lag_one = vec![Mat::zeros(dim, dim); horizon.saturating_sub(1)];
    for k in (0..horizon.saturating_sub(1)).rev() {
        let at = a_tilde(model, k);
        let (xi_pred_next, p_pred_next) = &predicted[k + 1];
        let px_pred = p_pred_next.view((0, 0), (n, n)).into_owned();
        let gain_x = &filtered[k].cov * at.transpose() * spd_inverse(&px_pred, "predicted state covariance")?;
        let dx = means[k + 1].rows(0, n) - xi_pred_next.rows(0, n);
        means[k] = &filtered[k].mean + &gain_x * dx;
        let dp = covs[k + 1].view((0, 0), (n, n)) - &px_pred;
        let mut cov = &filtered[k].cov + &gain_x * dp * gain_x.transpose();
        symmetrize(&mut cov);
        lag_one[k] = covs[k + 1].columns(0, n) * gain_x.transpose();
        covs[k] = cov;
    }
    let result = SmoothingResult {
        x: means.iter().map(|v| v.rows(0, n).into_owned()).collect(),
        u: means.iter().map(|v| v.rows(n, m).into_owned()).collect(),
        cov: covs,
        lag_one: Some(lag_one),
        filtered,
        innovation_norms,
        gains: Vec::new(),
        loaded_steps: Vec::new(),
    };
    Ok((result, loglik))
}

fn max_relative_change(new: &[Vector], old: &[Vector]) -> f64 {
    new.iter()
        .zip(old)
        .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs() / y.abs()))
        .fold(0.0, f64::max)
}

fn sbl_loop(model: &LdsModel, y: &[Vector], opts: &SblOptions, shared: bool) -> Result<SolverReport> {
    let start = Instant::now();
    if opts.r_max == 0 || !(opts.gamma_floor > 0.0) {
        return Err(Error::InvalidParameter("r_max must be positive and gamma_floor positive".into()));
    }
    let (m, horizon) = (model.m(), model.horizon());
    let p0 = opts.p0.clone().unwrap_or_else(|| default_p0(model));
    let mut gamma = vec![Vector::from_element(m, 1.0); if shared { 1 } else { horizon }];
    let mut report = SolverReport::default();
    let mut last = None;
    for r in 1..=opts.r_max {
        let (smooth, loglik) = sbl_estep(model, y, &gamma, &p0)?;
        if !loglik.is_finite() {
            return Err(Error::NonFinite("sbl log-likelihood".into()));
        }
        report.objective.push(loglik);
        let per_step: Vec<Vector> = (0..horizon)
            .map(|k| sbl_mstep(&smooth.u[k], &smooth.p_u(k), opts.gamma_floor))
            .collect();
        let new_gamma = if shared {
            let mut avg = Vector::zeros(m);
            for k in 0..horizon {
                avg += Vector::from_fn(m, |i, _| smooth.u[k][i] * smooth.u[k][i] + smooth.cov[k][(model.n() + i, model.n() + i)]);
            }
            vec![(avg / horizon as f64).map(|v| v.max(opts.gamma_floor))]
        } else {
            per_step
        };
        let delta = max_relative_change(&new_gamma, &gamma);
        report.deltas.push(delta);
        report.iterations = r;
        gamma = new_gamma;
        last = Some(smooth);
        if delta < opts.eps_thres {
            report.converged = true;
            break;
        }
    }
    let smooth = last.expect("at least one iteration");
    report.x = smooth.x.clone();
    report.u = smooth.u.clone();
    report.hyper = gamma;
    report.smoothing = Some(smooth);
    report.runtime_s = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Sparse Bayesian learning smoother with one variance vector per step.
///
/// Starts from `γ = 1`; each iteration runs [`sbl_estep`] and the M-step
/// [`sbl_mstep`]. The reported estimates come from the last E-step, the tracked
/// objective is the marginal log-likelihood of each E-step and `hyper` holds
/// the final `γ`.
pub fn sbl_rks(model: &LdsModel, y: &[Vector], opts: &SblOptions) -> Result<SolverReport> {
    sbl_loop(model, y, opts, false)
}

/// Sparse Bayesian learning smoother for jointly sparse inputs: one `γ` shared
/// by every step, updated with the time average of the per-step M-step values.
pub fn msbl_rks(model: &LdsModel, y: &[Vector], opts: &SblOptions) -> Result<SolverReport> {
    sbl_loop(model, y, opts, true)
}

/// Sparse Bayesian learning for state-only measurements `y = Cx + v`.
///
/// The input between steps `k` and `k+1` has prior `N(0, Diag γ_k)`; `K − 1`
/// inputs are estimated. `p0x` is the prior covariance of the state before the
/// first step. The tracked `deltas` are relative `γ` changes.
pub fn sbl_rks_state_meas(model: &LdsModel, y: &[Vector], opts: &SblOptions, p0x: Option<&Mat>) -> Result<SolverReport> {
    let start = Instant::now();
    let (n, m, horizon) = (model.n(), model.m(), model.horizon());
    if horizon < 2 {
        return Err(Error::InvalidParameter("state-only smoothing needs at least two steps".into()));
    }
    let p0x = p0x.cloned().unwrap_or_else(|| Mat::identity(n, n));
    let mut gamma = vec![Vector::from_element(m, 1.0); horizon - 1];
    let mut report = SolverReport::default();
    let mut last = None;
    for r in 1..=opts.r_max.max(1) {
        let smooth = state_only_pass(model, y, &p0x, Some(&gamma))?;
        let new_gamma: Vec<Vector> = (0..horizon - 1)
            .map(|k| sbl_mstep(&smooth.u[k], &smooth.p_u(k + 1), opts.gamma_floor))
            .collect();
        let delta = max_relative_change(&new_gamma, &gamma);
        report.deltas.push(delta);
        report.iterations = r;
        gamma = new_gamma;
        last = Some(smooth);
        if delta < opts.eps_thres {
            report.converged = true;
            break;
        }
    }
    let smooth = last.expect("at least one iteration");
    report.x = smooth.x.clone();
    report.u = smooth.u.clone();
    report.hyper = gamma;
    report.smoothing = Some(smooth);
    report.runtime_s = start.elapsed().as_secs_f64();
    Ok(report)
}

/// State-only E-step with fixed prior variances (one vector per transition).
pub fn sbl_state_meas_estep(model: &LdsModel, y: &[Vector], gamma: &[Vector], p0x: &Mat) -> Result<SmoothingResult> {
    state_only_pass(model, y, p0x, Some(gamma))
}

/// Options of the variational Bayes solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct VbOptions {
    /// Gamma hyperprior shape.
    pub a: f64,
    /// Gamma hyperprior rate.
    pub b: f64,
    /// Outer iterations (precision updates).
    pub r_max: usize,
    /// Inner sweeps over states and inputs per outer iteration.
    pub r_tilde_max: usize,
    /// Ceiling on the precisions.
    pub beta_max: f64,
    /// Omit the dynamics coupling of the last step instead of treating the state after
    /// the horizon as an observed zero.
    pub drop_terminal_coupling: bool,
    /// Keep the precisions at their initial values.
    pub freeze_beta: bool,
    /// Initial precision of every input entry.
    pub beta_init: f64,
}

impl Default for VbOptions {
    fn default() -> Self {
        Self {
            a: 1e-6,
            b: 1e-6,
            r_max: 100,
            r_tilde_max: 3,
            beta_max: BETA_CEILING,
            drop_terminal_coupling: false,
            freeze_beta: false,
            beta_init: 1.0,
        }
    }
}

/// Mean-field state of variational Bayes.
#[derive(Debug, Clone, PartialEq)]
pub struct VbState {
    /// `⟨x_k⟩`.
    pub mean_x: Vec<Vector>,
    /// `⟨u_k⟩`.
    pub mean_u: Vec<Vector>,
    /// Covariances of `q(x_k)`.
    pub p_x: Vec<Mat>,
    /// Covariances of `q(u_k)`.
    pub p_u: Vec<Mat>,
    /// Precision means `⟨β⟩`: one vector per step, or one shared vector.
    pub beta: Vec<Vector>,
    /// Shape parameters of `q(β)`, laid out like `beta`.
    pub beta_shape: Vec<Vector>,
    /// Rate parameters of `q(β)`, laid out like `beta`.
    pub beta_rate: Vec<Vector>,
}

impl VbState {
    /// Initial state: zero means, identity covariances and `⟨β⟩ = beta_init`.
    pub fn new(model: &LdsModel, shared: bool, opts: &VbOptions) -> Self {
        let (n, m, horizon) = (model.n(), model.m(), model.horizon());
        let groups = if shared { 1 } else { horizon };
        let shape_value = if shared { horizon as f64 * (opts.a + 0.5) } else { opts.a + 0.5 };
        Self {
            mean_x: vec![Vector::zeros(n); horizon],
            mean_u: vec![Vector::zeros(m); horizon],
            p_x: vec![Mat::identity(n, n); horizon],
            p_u: vec![Mat::identity(m, m); horizon],
            beta: vec![Vector::from_element(m, opts.beta_init); groups],
            beta_shape: vec![Vector::from_element(m, shape_value); groups],
            beta_rate: vec![Vector::from_element(m, shape_value / opts.beta_init); groups],
        }
    }

    fn beta_at(&self, k: usize) -> &Vector {
        if self.beta.len() == 1 {
            &self.beta[0]
        } else {
            &self.beta[k]
        }
    }
}

/// Precomputed inverses shared by the variational updates.
pub struct VbContext<'a> {
    model: &'a LdsModel,
    y: &'a [Vector],
    r_inv: Vec<Mat>,
    q_inv: Vec<Mat>,
    drop_terminal_coupling: bool,
}

impl<'a> VbContext<'a> {
    /// Validates inputs and caches `R_k⁻¹` and `Q_k⁻¹`.
    pub fn new(model: &'a LdsModel, y: &'a [Vector], drop_terminal_coupling: bool) -> Result<Self> {
        model.check_measurements(y)?;
        let horizon = model.horizon();
        let r_inv = (0..horizon).map(|k| spd_inverse(model.r(k), "R")).collect::<Result<_>>()?;
        let q_inv = (0..horizon).map(|k| spd_inverse(model.q(k), "Q")).collect::<Result<_>>()?;
        Ok(Self { model, y, r_inv, q_inv, drop_terminal_coupling })
    }

    fn coupled(&self, k: usize) -> bool {
        k + 1 < self.model.horizon() || !self.drop_terminal_coupling
    }

    /// Value of `⟨x_{k+1}⟩`, zero past the horizon.
    fn next_x(&self, state: &VbState, k: usize) -> Vector {
        state.mean_x.get(k + 1).cloned().unwrap_or_else(|| Vector::zeros(self.model.n()))
    }
}

/// Coordinate update of `q(x_k)`.
///
/// The state before the first step is zero, so `x_1 ~ N(0, Q)`; past the horizon
/// the state is zero unless the terminal coupling is dropped.
pub fn vb_update_x(k: usize, state: &mut VbState, ctx: &VbContext) -> Result<()> {
    let model = ctx.model;
    let (c, d) = (model.c(k), model.d(k));
    let ct_rinv = c.transpose() * &ctx.r_inv[k];
    let mut info = &ct_rinv * c;
    let mut rhs = &ct_rinv * (&ctx.y[k] - d * &state.mean_u[k]);
    let q_prev_inv = &ctx.q_inv[k.saturating_sub(1)];
    info += q_prev_inv;
    if k > 0 {
        rhs += q_prev_inv * (model.a(k - 1) * &state.mean_x[k - 1] + model.b(k - 1) * &state.mean_u[k - 1]);
    }
    if ctx.coupled(k) {
        let at_qinv = model.a(k).transpose() * &ctx.q_inv[k];
        info += &at_qinv * model.a(k);
        rhs += &at_qinv * (ctx.next_x(state, k) - model.b(k) * &state.mean_u[k]);
    }
    symmetrize(&mut info);
    let cov = spd_inverse(&info, "state precision")?;
    state.mean_x[k] = &cov * rhs;
    state.p_x[k] = cov;
    Ok(())
}

/// Coordinate update of `q(u_k)`.
pub fn vb_update_u(k: usize, state: &mut VbState, ctx: &VbContext) -> Result<()> {
    let model = ctx.model;
    let (c, d) = (model.c(k), model.d(k));
    let dt_rinv = d.transpose() * &ctx.r_inv[k];
    let mut info = &dt_rinv * d;
    let mut rhs = &dt_rinv * (&ctx.y[k] - c * &state.mean_x[k]);
    if ctx.coupled(k) {
        let bt_qinv = model.b(k).transpose() * &ctx.q_inv[k];
        info += &bt_qinv * model.b(k);
        rhs += &bt_qinv * (ctx.next_x(state, k) - model.a(k) * &state.mean_x[k]);
    }
    let beta = state.beta_at(k);
    for i in 0..model.m() {
        info[(i, i)] += beta[i];
    }
    symmetrize(&mut info);
    let cov = spd_inverse(&info, "input precision")?;
    state.mean_u[k] = &cov * rhs;
    state.p_u[k] = cov;
    Ok(())
}

fn second_moment(state: &VbState, k: usize, i: usize) -> f64 {
    state.mean_u[k][i] * state.mean_u[k][i] + state.p_u[k][(i, i)]
}

/// Precision update `⟨β_k(i)⟩ = (a + ½)/(b + ½⟨u_k(i)²⟩)`, capped at `beta_max`.
pub fn vb_update_beta(k: usize, state: &mut VbState, a: f64, b: f64, beta_max: f64) {
    for i in 0..state.mean_u[k].len() {
        let shape = a + 0.5;
        let rate = b + 0.5 * second_moment(state, k, i);
        let mean = (shape / rate).min(beta_max);
        state.beta_shape[k][i] = shape;
        state.beta_rate[k][i] = shape / mean;
        state.beta[k][i] = mean;
    }
}

/// Shared precision update `⟨β(i)⟩ = (a + ½)/(b + ½·mean_k⟨u_k(i)²⟩)`, capped at `beta_max`.
///
/// This is the exact mean-field update for a shared precision with hyperprior
/// `Gamma(Ka, Kb)`.
pub fn vb_update_beta_shared(state: &mut VbState, a: f64, b: f64, beta_max: f64) {
    let horizon = state.mean_u.len() as f64;
    for i in 0..state.beta[0].len() {
        let avg = (0..state.mean_u.len()).map(|k| second_moment(state, k, i)).sum::<f64>() / horizon;
        let mean = ((a + 0.5) / (b + 0.5 * avg)).min(beta_max);
        let shape = horizon * (a + 0.5);
        state.beta_shape[0][i] = shape;
        state.beta_rate[0][i] = shape / mean;
        state.beta[0][i] = mean;
    }
}

fn quad(inv: &Mat, e: &Vector) -> f64 {
    e.dot(&(inv * e))
}

fn trace_prod(a: &Mat, b: &Mat) -> f64 {
    a.component_mul(&b.transpose()).sum()
}

/// Negative free energy of the mean-field family at `state`.
pub fn vb_free_energy(state: &VbState, ctx: &VbContext, a: f64, b: f64) -> Result<f64> {
    let model = ctx.model;
    let (n, m, p, horizon) = (model.n(), model.m(), model.p(), model.horizon());
    let ln2pi = (2.0 * PI).ln();
    let mut f = 0.0;
    for k in 0..horizon {
        let (c, d) = (model.c(k), model.d(k));
        let e = &ctx.y[k] - c * &state.mean_x[k] - d * &state.mean_u[k];
        let rinv = &ctx.r_inv[k];
        f -= 0.5
            * (p as f64 * ln2pi
                + spd_logdet(model.r(k), "R")?
                + quad(rinv, &e)
                + trace_prod(&(c.transpose() * rinv * c), &state.p_x[k])
                + trace_prod(&(d.transpose() * rinv * d), &state.p_u[k]));
    }
    let transition = |k: usize, next_x: &Vector, next_px: Option<&Mat>| -> Result<f64> {
        let (am, bm) = (model.a(k), model.b(k));
        let qinv = &ctx.q_inv[k];
        let e = next_x - am * &state.mean_x[k] - bm * &state.mean_u[k];
        let mut t = n as f64 * ln2pi + spd_logdet(model.q(k), "Q")? + quad(qinv, &e);
        if let Some(px) = next_px {
            t += trace_prod(qinv, px);
        }
        t += trace_prod(&(am.transpose() * qinv * am), &state.p_x[k]);
        t += trace_prod(&(bm.transpose() * qinv * bm), &state.p_u[k]);
        Ok(-0.5 * t)
    };
    let q0inv = &ctx.q_inv[0];
    f -= 0.5 * (n as f64 * ln2pi + spd_logdet(model.q(0), "Q")? + quad(q0inv, &state.mean_x[0]) + trace_prod(q0inv, &state.p_x[0]));
    for k in 0..horizon - 1 {
        f += transition(k, &state.mean_x[k + 1], Some(&state.p_x[k + 1]))?;
    }
    if !ctx.drop_terminal_coupling {
        f += transition(horizon - 1, &Vector::zeros(n), None)?;
    }
    let shared = state.beta.len() == 1;
    let (a_h, b_h) = if shared { (horizon as f64 * a, horizon as f64 * b) } else { (a, b) };
    for g in 0..state.beta.len() {
        for i in 0..m {
            let (shape, rate) = (state.beta_shape[g][i], state.beta_rate[g][i]);
            let mean = shape / rate;
            let e_ln = digamma(shape) - rate.ln();
            let steps: Vec<usize> = if shared { (0..horizon).collect() } else { vec![g] };
            for k in steps {
                f += 0.5 * e_ln - 0.5 * ln2pi - 0.5 * mean * second_moment(state, k, i);
            }
            f += a_h * b_h.ln() - ln_gamma(a_h) + (a_h - 1.0) * e_ln - b_h * mean;
            f += shape - rate.ln() + ln_gamma(shape) + (1.0 - shape) * digamma(shape);
        }
    }
    for k in 0..horizon {
        f += 0.5 * (n as f64 * (1.0 + ln2pi) + spd_logdet(&state.p_x[k], "P^x")?);
        f += 0.5 * (m as f64 * (1.0 + ln2pi) + spd_logdet(&state.p_u[k], "P^u")?);
    }
    Ok(f)
}

fn vb_loop(model: &LdsModel, y: &[Vector], opts: &VbOptions, shared: bool) -> Result<(SolverReport, VbState)> {
    let start = Instant::now();
    if !(opts.a > 0.0 && opts.b > 0.0) || opts.r_max == 0 || opts.r_tilde_max == 0 {
        return Err(Error::InvalidParameter("a, b must be positive and iteration counts at least 1".into()));
    }
    let horizon = model.horizon();
    let ctx = VbContext::new(model, y, opts.drop_terminal_coupling)?;
    let mut state = VbState::new(model, shared, opts);
    let mut report = SolverReport::default();
    for r in 1..=opts.r_max {
        let u_before = state.mean_u.clone();
        for _ in 0..opts.r_tilde_max {
            for k in 0..horizon {
                vb_update_x(k, &mut state, &ctx)?;
            }
            for k in 0..horizon {
                vb_update_u(k, &mut state, &ctx)?;
            }
        }
        if !opts.freeze_beta {
            if shared {
                vb_update_beta_shared(&mut state, opts.a, opts.b, opts.beta_max);
            } else {
                for k in 0..horizon {
                    vb_update_beta(k, &mut state, opts.a, opts.b, opts.beta_max);
                }
            }
        }
        let energy = vb_free_energy(&state, &ctx, opts.a, opts.b)?;
        if !energy.is_finite() {
            return Err(Error::NonFinite("variational free energy".into()));
        }
        report.objective.push(energy);
        let delta = state
            .mean_u
            .iter()
            .zip(&u_before)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max);
        report.deltas.push(delta);
        report.iterations = r;
    }
    report.x = state.mean_x.clone();
    report.u = state.mean_u.clone();
    report.hyper = state.beta.clone();
    report.runtime_s = start.elapsed().as_secs_f64();
    Ok((report, state))
}

/// Variational Bayes smoother with one precision vector per step.
///
/// Each outer iteration performs `r_tilde_max` sweeps of [`vb_update_x`] over
/// all steps followed by [`vb_update_u`] over all steps, then updates the
/// precisions. The tracked objective is the negative free energy.
pub fn vb_rks(model: &LdsModel, y: &[Vector], opts: &VbOptions) -> Result<SolverReport> {
    vb_loop(model, y, opts, false).map(|(r, _)| r)
}

/// Like [`vb_rks`] but also returns the final mean-field state.
pub fn vb_rks_with_state(model: &LdsModel, y: &[Vector], opts: &VbOptions) -> Result<(SolverReport, VbState)> {
    vb_loop(model, y, opts, false)
}

/// Variational Bayes smoother for jointly sparse inputs with one shared precision vector.
pub fn mvb_rks(model: &LdsModel, y: &[Vector], opts: &VbOptions) -> Result<SolverReport> {
    vb_loop(model, y, opts, true).map(|(r, _)| r)
}
