//! Robust Kalman smoothing: joint state and input estimation without an input prior.
//!
//! [`rks_smooth`] handles the direct-feedthrough model `y = Cx + Du + v` and
//! requires every `D_k` to have full column rank. [`rks_smooth_state_only`]
//! handles `y = Cx + v`, where the input acting between two steps is estimated
//! from the state increment. [`batch_map_oracle`] solves the same quadratic
//! problems with one dense linear solve and serves as the correctness reference.

use crate::error::{Error, Result};
use crate::linalg::{blkdiag, cholesky, hstack, lu_solve, spd_inverse, spd_solve, symmetrize, vcat, vstack, Mat, Vector};
use crate::model::LdsModel;

/// Relative singular-value threshold below which `DᵀR⁻¹D` counts as singular.
pub const FEEDTHROUGH_RANK_TOL: f64 = 1e-10;
/// Relative diagonal loading applied when a predicted covariance cannot be factorised.
pub const SMOOTHER_LOADING: f64 = 1e-12;

/// Mean and covariance of the augmented vector `ξ = [x; u]` at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    /// Stacked mean `[x̂; û]`.
    pub mean: Vector,
    /// Joint covariance with blocks `P^x`, `P^xu`, `P^u`.
    pub cov: Mat,
    /// Step the belief describes.
    pub step: usize,
    /// Number of measurements conditioned on (the belief is `step | given`).
    pub given: usize,
    n: usize,
}

impl GaussianBelief {
    /// Creates a belief whose first `n` coordinates are the state.
    pub fn new(mean: Vector, cov: Mat, n: usize, step: usize, given: usize) -> Self {
        Self { mean, cov, step, given, n }
    }
    /// State mean.
    pub fn x(&self) -> Vector {
        self.mean.rows(0, self.n).into_owned()
    }
    /// Input mean.
    pub fn u(&self) -> Vector {
        self.mean.rows(self.n, self.mean.len() - self.n).into_owned()
    }
    /// State covariance block.
    pub fn p_x(&self) -> Mat {
        self.cov.view((0, 0), (self.n, self.n)).into_owned()
    }
    /// Input covariance block.
    pub fn p_u(&self) -> Mat {
        let m = self.mean.len() - self.n;
        self.cov.view((self.n, self.n), (m, m)).into_owned()
    }
    /// State-input cross-covariance block.
    pub fn p_xu(&self) -> Mat {
        let m = self.mean.len() - self.n;
        self.cov.view((0, self.n), (self.n, m)).into_owned()
    }
}

/// Gains of one filtering step.
#[derive(Debug, Clone, PartialEq)]
pub struct Gains {
    /// `J = (DᵀR⁻¹D)⁻¹DᵀR⁻¹`.
    pub j: Mat,
    /// `L = PCᵀ(R + CPCᵀ)⁻¹`.
    pub l: Mat,
    /// Stacked filter gain `G`, mapping the innovation to `[x̂; û]`.
    pub g: Mat,
}

/// Smoothed estimates for `k = 0..K`.
///
/// For the direct-feedthrough model `cov[k]` is the covariance of `[x_k; u_k]`.
/// For the state-only model `cov[k]` is the covariance of `[x_k; u_{k-1}]`
/// (the input block of step 0 is zero) and `u` has `K - 1` entries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SmoothingResult {
    /// Smoothed states.
    pub x: Vec<Vector>,
    /// Smoothed inputs.
    pub u: Vec<Vector>,
    /// Smoothed joint covariances.
    pub cov: Vec<Mat>,
    /// Lag-one cross covariances `Cov(ξ_{k+1}, ξ_k)` for `k = 0..K-1`, when computed.
    pub lag_one: Option<Vec<Mat>>,
    /// Filtered beliefs from the forward pass.
    pub filtered: Vec<GaussianBelief>,
    /// Euclidean norm of each innovation.
    pub innovation_norms: Vec<f64>,
    /// Gains used at each step, when the recursion has them.
    pub gains: Vec<Gains>,
    /// Steps at which the smoother gain needed diagonal loading.
    pub loaded_steps: Vec<usize>,
}

impl SmoothingResult {
    /// State covariance block of step `k`.
    pub fn p_x(&self, k: usize) -> Mat {
        let n = self.x[k].len();
        self.cov[k].view((0, 0), (n, n)).into_owned()
    }
    /// Input covariance block of step `k` (of `[x_k; u_k]` or `[x_k; u_{k-1}]`).
    pub fn p_u(&self, k: usize) -> Mat {
        let n = self.x[k].len();
        let m = self.cov[k].nrows() - n;
        self.cov[k].view((n, n), (m, m)).into_owned()
    }
}

/// Default `P^ξ_{0|0} = I_{n+m}`.
pub fn default_p0(model: &LdsModel) -> Mat {
    Mat::identity(model.n() + model.m(), model.n() + model.m())
}

/// `Ã_k = [A_k B_k]`.
pub fn a_tilde(model: &LdsModel, k: usize) -> Mat {
    hstack(model.a(k), model.b(k))
}

/// Prior covariance of `x_1` implied by `ξ_{0|0} = 0`, `P^ξ_{0|0} = p0` and `Q_0 = 0`.
///
/// The unspecified step-0 transition reuses the first-step matrices `[A_0 B_0]`.
pub fn initial_state_prior(model: &LdsModel, p0: &Mat) -> Mat {
    let at = a_tilde(model, 0);
    let mut p = &at * p0 * at.transpose();
    symmetrize(&mut p);
    p
}

/// Feedthrough gain `J = (DᵀR⁻¹D)⁻¹DᵀR⁻¹`, rejecting a numerically singular `DᵀR⁻¹D`.
pub fn feedthrough_gain(d: &Mat, r: &Mat, step: usize) -> Result<Mat> {
    let r_inv = spd_inverse(r, "R")?;
    let dt_rinv = d.transpose() * &r_inv;
    let mut gram = &dt_rinv * d;
    symmetrize(&mut gram);
    let eig = gram.symmetric_eigenvalues();
    let max = eig.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(*v));
    let ratio = if max > 0.0 { min / max } else { 0.0 };
    if !(ratio >= FEEDTHROUGH_RANK_TOL) {
        return Err(Error::SingularFeedthrough { step, ratio: ratio.max(0.0) });
    }
    spd_solve(&gram, &dt_rinv, "DᵀR⁻¹D").map_err(|_| Error::SingularFeedthrough { step, ratio })
}

/// Computes `J`, `L` and `G` for one step.
pub fn compute_gains(c: &Mat, d: &Mat, r: &Mat, p_pred: &Mat, step: usize) -> Result<Gains> {
    let j = feedthrough_gain(d, r, step)?;
    gains_with_feedthrough(c, d, r, p_pred, j)
}

fn gains_with_feedthrough(c: &Mat, d: &Mat, r: &Mat, p_pred: &Mat, j: Mat) -> Result<Gains> {
    let (p, n, m) = (c.nrows(), c.ncols(), d.ncols());
    let cp = c * p_pred;
    let mut s = r + &cp * c.transpose();
    symmetrize(&mut s);
    let l = spd_solve(&s, &cp, "R + CPCᵀ")?.transpose();
    let ip = Mat::identity(p, p);
    let gx_lhs = Mat::identity(n, n) - &l * d * &j * c;
    let gx = lu_solve(&gx_lhs, &(&l * (&ip - d * &j)), "I - LDJC")?;
    let gu_lhs = Mat::identity(m, m) - &j * c * &l * d;
    let gu = lu_solve(&gu_lhs, &(&j * (&ip - c * &l)), "I - JCLD")?;
    Ok(Gains { j, l, g: vstack(&gx, &gu) })
}

fn check_finite(m: &Mat, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Inverse of a predicted covariance, loading the diagonal when the factorisation fails.
fn robust_inverse(p: &Mat, step: usize, loaded: &mut Vec<usize>) -> Result<Mat> {
    if let Ok(inv) = spd_inverse(p, "predicted covariance") {
        return Ok(inv);
    }
    loaded.push(step);
    let scale = p.norm().max(1.0);
    let dim = p.nrows();
    spd_inverse(&(p + Mat::identity(dim, dim) * (SMOOTHER_LOADING * scale)), "predicted covariance")
}

/// Joint state and input smoother for the direct-feedthrough model.
///
/// Returns the minimiser of
/// `Σ‖y_k − C_k x_k − D_k u_k‖²_{R_k} + Σ‖x_{k+1} − A_k x_k − B_k u_k‖²_{Q_k}`
/// together with the prior on `x_1` from [`initial_state_prior`].
pub fn rks_smooth(model: &LdsModel, y: &[Vector], p0: &Mat) -> Result<SmoothingResult> {
    model.check_measurements(y)?;
    let (n, m, horizon) = (model.n(), model.m(), model.horizon());
    if p0.shape() != (n + m, n + m) {
        return Err(Error::DimensionMismatch("P0 must be (n+m)x(n+m)".into()));
    }
    let t = vstack(&Mat::identity(n, n), &Mat::zeros(m, n));
    let mut filtered = Vec::with_capacity(horizon);
    let mut predicted: Vec<(Vector, Mat)> = Vec::with_capacity(horizon);
    let mut gains_list = Vec::with_capacity(horizon);
    let mut innovation_norms = Vec::with_capacity(horizon);
    let mut shared_j: Option<Mat> = None;

    for k in 0..horizon {
        let (x_pred, p_pred) = if k == 0 {
            (Vector::zeros(n), initial_state_prior(model, p0))
        } else {
            let prev: &GaussianBelief = &filtered[k - 1];
            let at = a_tilde(model, k - 1);
            let mut p = &at * &prev.cov * at.transpose() + model.q(k - 1);
            symmetrize(&mut p);
            (&at * &prev.mean, p)
        };
        let (c, d, r) = (model.c(k), model.d(k), model.r(k));
        let j = match &shared_j {
            Some(j) => j.clone(),
            None => feedthrough_gain(d, r, k)?,
        };
        if k == 0 && model.is_time_invariant() {
            shared_j = Some(j.clone());
        }
        let gains = gains_with_feedthrough(c, d, r, &p_pred, j)?;
        let innovation = &y[k] - c * &x_pred;
        innovation_norms.push(innovation.norm());
        let mean = &t * &x_pred + &gains.g * &innovation;
        let tgc = &t - &gains.g * c;
        let mut cov = &tgc * &p_pred * tgc.transpose() + &gains.g * r * gains.g.transpose();
        symmetrize(&mut cov);
        check_finite(&cov, "filtered covariance")?;
        filtered.push(GaussianBelief::new(mean, cov, n, k, k + 1));
        predicted.push((x_pred, p_pred));
        gains_list.push(gains);
    }

    let mut means: Vec<Vector> = filtered.iter().map(|b| b.mean.clone()).collect();
    let mut covs: Vec<Mat> = filtered.iter().map(|b| b.cov.clone()).collect();
    let mut lag_one = vec![Mat::zeros(n + m, n + m); horizon.saturating_sub(1)];
    let mut loaded = Vec::new();
    for k in (0..horizon.saturating_sub(1)).rev() {
        let at = a_tilde(model, k);
        let (x_pred_next, p_pred_next) = &predicted[k + 1];
        let p_inv = robust_inverse(p_pred_next, k, &mut loaded)?;
        let gain = &filtered[k].cov * at.transpose() * p_inv;
        let x_next = means[k + 1].rows(0, n).into_owned();
        let px_next = covs[k + 1].view((0, 0), (n, n)).into_owned();
        means[k] = &filtered[k].mean + &gain * (x_next - x_pred_next);
        let mut cov = &filtered[k].cov + &gain * (px_next - p_pred_next) * gain.transpose();
        symmetrize(&mut cov);
        lag_one[k] = covs[k + 1].columns(0, n) * gain.transpose();
        covs[k] = cov;
    }

    Ok(SmoothingResult {
        x: means.iter().map(|v| v.rows(0, n).into_owned()).collect(),
        u: means.iter().map(|v| v.rows(n, m).into_owned()).collect(),
        cov: covs,
        lag_one: Some(lag_one),
        filtered,
        innovation_norms,
        gains: gains_list,
        loaded_steps: loaded,
    })
}

/// Prior covariance of `x_1` for the state-only recursion: `x_0 ~ N(0, p0x)`,
/// `u_0 = 0`, so `x_1 ~ N(0, A_0 p0x A_0ᵀ + Q_0)`.
pub fn state_only_initial_prior(model: &LdsModel, p0x: &Mat) -> Mat {
    let mut p = model.a(0) * p0x * model.a(0).transpose() + model.q(0);
    symmetrize(&mut p);
    p
}

/// Forward-backward pass shared by the state-only smoother and its sparse Bayesian variant.
///
/// `input_var[k]` is the prior variance vector of the input acting between
/// steps `k` and `k+1`; `None` means the input carries no prior.
pub(crate) fn state_only_pass(
    model: &LdsModel,
    y: &[Vector],
    p0x: &Mat,
    input_var: Option<&[Vector]>,
) -> Result<SmoothingResult> {
    model.check_measurements(y)?;
    let (n, m, horizon) = (model.n(), model.m(), model.horizon());
    if horizon < 2 {
        return Err(Error::InvalidParameter("state-only smoothing needs at least two steps".into()));
    }
    if let Some(v) = input_var {
        if v.len() < horizon - 1 || v.iter().any(|g| g.len() != m) {
            return Err(Error::DimensionMismatch("input prior variances".into()));
        }
    }
    let eye_n = Mat::identity(n, n);
    let mut filtered: Vec<GaussianBelief> = Vec::with_capacity(horizon);
    let mut p_star: Vec<Mat> = Vec::with_capacity(horizon);
    let mut innovation_norms = Vec::with_capacity(horizon);

    // Step 0: plain Kalman update of x_0 against its prior.
    {
        let p1 = state_only_initial_prior(model, p0x);
        let (c, r) = (model.c(0), model.r(0));
        let cp = c * &p1;
        let mut s = r + &cp * c.transpose();
        symmetrize(&mut s);
        let gain = spd_solve(&s, &cp, "R + CPCᵀ")?.transpose();
        let innovation = &y[0] - c * Vector::zeros(n);
        innovation_norms.push(innovation.norm());
        let x = &gain * &innovation;
        let ikc = &eye_n - &gain * c;
        let mut px = &ikc * &p1 * ikc.transpose() + &gain * r * gain.transpose();
        symmetrize(&mut px);
        let cov = blkdiag(&[&px, &Mat::zeros(m, m)]);
        filtered.push(GaussianBelief::new(vcat(&x, &Vector::zeros(m)), cov, n, 0, 1));
        p_star.push(p1);
    }

    for k in 1..horizon {
        let prev = &filtered[k - 1];
        let (a, b, q) = (model.a(k - 1), model.b(k - 1), model.q(k - 1));
        let (c, r) = (model.c(k), model.r(k));
        let px_prev = prev.p_x();
        let x_prev = prev.x();
        let mut ps = a * &px_prev * a.transpose() + q;
        symmetrize(&mut ps);
        let ps_inv = spd_inverse(&ps, "P*")?;
        let cps = c * &ps;
        let mut s = r + &cps * c.transpose();
        symmetrize(&mut s);
        let l = spd_solve(&s, &cps, "R + CP*Cᵀ")?.transpose();
        let bt_psinv = b.transpose() * &ps_inv;
        let mut gram = &bt_psinv * b;
        let pu = input_var.map(|v| Mat::from_diagonal(&v[k - 1]));
        if let Some(v) = input_var {
            for i in 0..m {
                gram[(i, i)] += 1.0 / v[k - 1][i];
            }
        }
        symmetrize(&mut gram);
        // An input that never reaches the state carries no information; it is estimated as zero.
        let j = if input_var.is_none() && b.iter().all(|v| *v == 0.0) {
            Mat::zeros(m, n)
        } else {
            spd_solve(&gram, &bt_psinv, "input Gram").map_err(|_| Error::SingularInputGram { step: k })?
        };
        let ilc = &eye_n - &l * c;
        let f = lu_solve(&(&eye_n - &ilc * b * &j), &l, "I - (I-LC)BJ")?;
        let im = Mat::identity(m, m);
        let mm = lu_solve(&(&im - &j * &ilc * b), &(&j * &l), "I - J(I-LC)B")?;
        let ca = c * a;
        let innovation = &y[k] - &ca * &x_prev;
        innovation_norms.push(innovation.norm());
        let ifc = &eye_n - &f * c;
        let x = &ifc * a * &x_prev + &f * &y[k];
        let u = &mm * &innovation;
        let mcb = &mm * c * b;
        let z = vstack(
            &hstack(&(&ifc * a), &(&ifc * b)),
            &hstack(&(-&mm * &ca), &(&im - &mcb)),
        );
        let nmat = vstack(&hstack(&ifc, &(-&f)), &hstack(&(-&mm * c), &(-&mm)));
        let source = blkdiag(&[&px_prev, &pu.unwrap_or_else(|| Mat::zeros(m, m))]);
        let noise = blkdiag(&[q, r]);
        let mut cov = &z * source * z.transpose() + &nmat * noise * nmat.transpose();
        symmetrize(&mut cov);
        check_finite(&cov, "filtered covariance")?;
        filtered.push(GaussianBelief::new(vcat(&x, &u), cov, n, k, k + 1));
        p_star.push(ps);
    }

    let mut means: Vec<Vector> = filtered.iter().map(|b| b.mean.clone()).collect();
    let mut covs: Vec<Mat> = filtered.iter().map(|b| b.cov.clone()).collect();
    let mut lag_one = vec![Mat::zeros(n + m, n + m); horizon - 1];
    let mut loaded = Vec::new();
    for k in (0..horizon - 1).rev() {
        let (a, b) = (model.a(k), model.b(k));
        let a_hat = hstack(a, &Mat::zeros(n, m));
        let b_hat = hstack(&eye_n, &(-b));
        let p_inv = robust_inverse(&p_star[k + 1], k, &mut loaded)?;
        let gain = &filtered[k].cov * a_hat.transpose() * p_inv;
        let predicted = &a_hat * &filtered[k].mean;
        means[k] = &filtered[k].mean + &gain * (&b_hat * &means[k + 1] - predicted);
        let mut cov = &filtered[k].cov + &gain * (&b_hat * &covs[k + 1] * b_hat.transpose() - &p_star[k + 1]) * gain.transpose();
        symmetrize(&mut cov);
        lag_one[k] = &covs[k + 1] * b_hat.transpose() * gain.transpose();
        covs[k] = cov;
    }

    Ok(SmoothingResult {
        x: means.iter().map(|v| v.rows(0, n).into_owned()).collect(),
        u: means[1..].iter().map(|v| v.rows(n, m).into_owned()).collect(),
        cov: covs,
        lag_one: Some(lag_one),
        filtered,
        innovation_norms,
        gains: Vec::new(),
        loaded_steps: loaded,
    })
}

/// Joint state and input smoother for state-only measurements `y = Cx + v`.
///
/// Inputs are estimated for the `K − 1` transitions. The input before the first
/// step is taken as zero and `x_0 ~ N(0, p0x)`.
pub fn rks_smooth_state_only(model: &LdsModel, y: &[Vector], p0x: &Mat) -> Result<SmoothingResult> {
    if p0x.shape() != (model.n(), model.n()) {
        return Err(Error::DimensionMismatch("P0 must be n x n".into()));
    }
    state_only_pass(model, y, p0x, None)
}

/// Measurement model used by the batch solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    /// `y_k = C_k x_k + D_k u_k + v_k` with inputs `u_0..u_{K-1}`.
    DirectFeedthrough,
    /// `y_k = C_k x_k + v_k` with inputs `u_0..u_{K-2}` driving the transitions.
    StateOnly,
}

/// Options of [`batch_map_oracle`].
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOptions {
    /// Measurement model.
    pub mode: BatchMode,
    /// Covariance of a zero-mean Gaussian prior on `x_1`, or `None` for a flat prior.
    pub x1_prior: Option<Mat>,
    /// Ridge weight `ε` adding `ε‖u_k‖²` to the cost.
    pub ridge: f64,
}

impl BatchOptions {
    /// Options matching [`rks_smooth`] with the given `P^ξ_{0|0}`.
    pub fn matching_rks(model: &LdsModel, p0: &Mat) -> Self {
        Self { mode: BatchMode::DirectFeedthrough, x1_prior: Some(initial_state_prior(model, p0)), ridge: 0.0 }
    }
    /// Options matching [`rks_smooth_state_only`] with the given `P^x_{0|0}`.
    pub fn matching_state_only(model: &LdsModel, p0x: &Mat) -> Self {
        Self { mode: BatchMode::StateOnly, x1_prior: Some(state_only_initial_prior(model, p0x)), ridge: 0.0 }
    }
}

/// Dense normal equations `Λ z = η` of the MAP cost over `z = [x_1..x_K, u..]`.
pub struct NormalEquations {
    /// Information matrix (half the Hessian of the cost).
    pub info: Mat,
    /// Information vector.
    pub rhs: Vector,
    /// Number of input vectors in the stacked unknown.
    pub inputs: usize,
}

fn add_term(info: &mut Mat, rhs: &mut Vector, blocks: &[(usize, Mat)], target: &Vector, weight: &Mat) {
    for (oi, hi) in blocks {
        let hw = hi.transpose() * weight;
        let mut r = rhs.rows_mut(*oi, hi.ncols());
        r += &hw * target;
        for (oj, hj) in blocks {
            let mut v = info.view_mut((*oi, *oj), (hi.ncols(), hj.ncols()));
            v += &hw * hj;
        }
    }
}

/// Builds the normal equations of the MAP cost for `mode`.
pub fn normal_equations(model: &LdsModel, y: &[Vector], opts: &BatchOptions) -> Result<NormalEquations> {
    model.check_measurements(y)?;
    let (n, m, horizon) = (model.n(), model.m(), model.horizon());
    let inputs = match opts.mode {
        BatchMode::DirectFeedthrough => horizon,
        BatchMode::StateOnly => horizon - 1,
    };
    let dim = horizon * n + inputs * m;
    let xo = |k: usize| k * n;
    let uo = |k: usize| horizon * n + k * m;
    let mut info = Mat::zeros(dim, dim);
    let mut rhs = Vector::zeros(dim);
    for k in 0..horizon {
        let r_inv = spd_inverse(model.r(k), "R")?;
        let mut blocks = vec![(xo(k), model.c(k).clone())];
        if opts.mode == BatchMode::DirectFeedthrough {
            blocks.push((uo(k), model.d(k).clone()));
        }
        add_term(&mut info, &mut rhs, &blocks, &y[k], &r_inv);
    }
    for k in 0..horizon.saturating_sub(1) {
        let q_inv = spd_inverse(model.q(k), "Q")?;
        let blocks = vec![
            (xo(k + 1), Mat::identity(n, n)),
            (xo(k), -model.a(k)),
            (uo(k), -model.b(k)),
        ];
        add_term(&mut info, &mut rhs, &blocks, &Vector::zeros(n), &q_inv);
    }
    if let Some(p1) = &opts.x1_prior {
        let w = spd_inverse(p1, "x1 prior")?;
        add_term(&mut info, &mut rhs, &[(0, Mat::identity(n, n))], &Vector::zeros(n), &w);
    }
    for k in 0..inputs {
        for i in 0..m {
            info[(uo(k) + i, uo(k) + i)] += opts.ridge;
        }
    }
    symmetrize(&mut info);
    Ok(NormalEquations { info, rhs, inputs })
}

/// Exact minimiser of the MAP cost by one dense symmetric solve.
///
/// Covariances are blocks of the inverse information matrix, arranged as in
/// [`SmoothingResult`]. Intended for `K(n+m) ≤ 2000`.
pub fn batch_map_oracle(model: &LdsModel, y: &[Vector], opts: &BatchOptions) -> Result<SmoothingResult> {
    let (n, m, horizon) = (model.n(), model.m(), model.horizon());
    let ne = normal_equations(model, y, opts)?;
    let chol = cholesky(&ne.info, "batch Hessian").map_err(|_| Error::SingularHessian)?;
    let z = chol.solve(&ne.rhs);
    let cov_all = chol.inverse();
    let uo = |k: usize| horizon * n + k * m;
    let x: Vec<Vector> = (0..horizon).map(|k| z.rows(k * n, n).into_owned()).collect();
    let u: Vec<Vector> = (0..ne.inputs).map(|k| z.rows(uo(k), m).into_owned()).collect();
    let mut cov = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let input = match opts.mode {
            BatchMode::DirectFeedthrough => Some(k),
            BatchMode::StateOnly => k.checked_sub(1),
        };
        let mut c = Mat::zeros(n + m, n + m);
        c.view_mut((0, 0), (n, n)).copy_from(&cov_all.view((k * n, k * n), (n, n)));
        if let Some(j) = input {
            c.view_mut((0, n), (n, m)).copy_from(&cov_all.view((k * n, uo(j)), (n, m)));
            c.view_mut((n, 0), (m, n)).copy_from(&cov_all.view((uo(j), k * n), (m, n)));
            c.view_mut((n, n), (m, m)).copy_from(&cov_all.view((uo(j), uo(j)), (m, m)));
        }
        cov.push(c);
    }
    Ok(SmoothingResult { x, u, cov, ..Default::default() })
}

/// Stacks states and inputs into the unknown layout of [`normal_equations`].
pub fn stack_unknowns(x: &[Vector], u: &[Vector]) -> Vector {
    let parts: Vec<f64> = x.iter().chain(u.iter()).flat_map(|v| v.iter().copied()).collect();
    Vector::from_vec(parts)
}

/// Gradient of the MAP cost at `(x, u)`: `2(Λz − η)`.
pub fn map_gradient(model: &LdsModel, y: &[Vector], opts: &BatchOptions, x: &[Vector], u: &[Vector]) -> Result<Vector> {
    let ne = normal_equations(model, y, opts)?;
    let z = stack_unknowns(x, u);
    if z.len() != ne.rhs.len() {
        return Err(Error::DimensionMismatch("unknowns do not match the cost".into()));
    }
    Ok((&ne.info * z - &ne.rhs) * 2.0)
}

/// Value of the quadratic MAP cost (without the prior on `x_1` unless requested in `opts`).
pub fn map_cost(model: &LdsModel, y: &[Vector], opts: &BatchOptions, x: &[Vector], u: &[Vector]) -> Result<f64> {
    let mut cost = 0.0;
    for k in 0..model.horizon() {
        let mut e = &y[k] - model.c(k) * &x[k];
        if opts.mode == BatchMode::DirectFeedthrough {
            e -= model.d(k) * &u[k];
        }
        cost += e.dot(&spd_solve(model.r(k), &Mat::from_column_slice(e.len(), 1, e.as_slice()), "R")?.column(0));
    }
    for k in 0..model.horizon().saturating_sub(1) {
        let e = &x[k + 1] - model.a(k) * &x[k] - model.b(k) * &u[k];
        cost += e.dot(&spd_solve(model.q(k), &Mat::from_column_slice(e.len(), 1, e.as_slice()), "Q")?.column(0));
    }
    if let Some(p1) = &opts.x1_prior {
        let e = &x[0];
        cost += e.dot(&spd_solve(p1, &Mat::from_column_slice(e.len(), 1, e.as_slice()), "x1 prior")?.column(0));
    }
    cost += opts.ridge * u.iter().map(|v| v.norm_squared()).sum::<f64>();
    Ok(cost)
}
