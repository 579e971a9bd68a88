//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use sparse_rks::LdsModel;

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Gaussian prior of the dense conditioning oracle.
pub struct DensePrior {
    /// Covariance of the first state.
    pub x0_cov: Mat,
    /// Variances of every input entry, one vector per step (zeros pin the input to zero).
    pub input_var: Vec<Vector>,
    /// Adds the pseudo-observation `0 = A x_K + B u_K + w_K` after the last step.
    pub terminal_zero: bool,
}

/// Posterior of the dense oracle.
pub struct DensePosterior {
    pub x: Vec<Vector>,
    pub u: Vec<Vector>,
    /// Covariance of `[x_k; u_k]` for every step.
    pub cov: Vec<Mat>,
    /// Joint covariance of `[ξ_1; …; ξ_K]` with `ξ_k = [x_k; u_k]`.
    pub joint: Mat,
}

/// Conditions the joint Gaussian of states, inputs and measurements on `y` in
/// covariance form: every variable is written as a linear map of the
/// independent sources `(x_1, w_1.., u_1..)`, and the posterior follows from
/// `Σ Hᵀ (H Σ Hᵀ + R)⁻¹`.
pub fn dense_posterior(model: &LdsModel, y: &[Vector], prior: &DensePrior) -> DensePosterior {
    let (n, m, p, k_len) = (model.n(), model.m(), model.p(), model.horizon());
    let dim = n + (k_len - 1) * n + k_len * m;
    let w_off = |k: usize| n + k * n;
    let u_off = |k: usize| n + (k_len - 1) * n + k * m;
    let mut t_x: Vec<Mat> = Vec::with_capacity(k_len);
    let mut first = Mat::zeros(n, dim);
    first.view_mut((0, 0), (n, n)).fill_with_identity();
    t_x.push(first);
    let e_u = |k: usize| {
        let mut e = Mat::zeros(m, dim);
        e.view_mut((0, u_off(k)), (m, m)).fill_with_identity();
        e
    };
    for k in 1..k_len {
        let mut e_w = Mat::zeros(n, dim);
        e_w.view_mut((0, w_off(k - 1)), (n, n)).fill_with_identity();
        let next = model.a(k - 1) * &t_x[k - 1] + model.b(k - 1) * e_u(k - 1) + e_w;
        t_x.push(next);
    }
    let mut sigma = Mat::zeros(dim, dim);
    sigma.view_mut((0, 0), (n, n)).copy_from(&prior.x0_cov);
    for k in 0..k_len - 1 {
        sigma.view_mut((w_off(k), w_off(k)), (n, n)).copy_from(model.q(k));
    }
    for k in 0..k_len {
        for i in 0..m {
            sigma[(u_off(k) + i, u_off(k) + i)] = prior.input_var[k][i];
        }
    }
    let rows = k_len * p + if prior.terminal_zero { n } else { 0 };
    let mut h = Mat::zeros(rows, dim);
    let mut noise = Mat::zeros(rows, rows);
    let mut obs = Vector::zeros(rows);
    for k in 0..k_len {
        let hk = model.c(k) * &t_x[k] + model.d(k) * e_u(k);
        h.view_mut((k * p, 0), (p, dim)).copy_from(&hk);
        noise.view_mut((k * p, k * p), (p, p)).copy_from(model.r(k));
        obs.rows_mut(k * p, p).copy_from(&y[k]);
    }
    if prior.terminal_zero {
        let last = k_len - 1;
        let hk = model.a(last) * &t_x[last] + model.b(last) * e_u(last);
        h.view_mut((k_len * p, 0), (n, dim)).copy_from(&hk);
        noise.view_mut((k_len * p, k_len * p), (n, n)).copy_from(model.q(last));
    }
    let s = &h * &sigma * h.transpose() + noise;
    let s_inv = s.clone().cholesky().expect("innovation covariance is SPD").inverse();
    let gain = &sigma * h.transpose() * &s_inv;
    let mean_e = &gain * obs;
    let cov_e = &sigma - &gain * &h * &sigma;
    let mut x = Vec::new();
    let mut u = Vec::new();
    let mut cov = Vec::new();
    let mut full_map = Mat::zeros(k_len * (n + m), dim);
    for k in 0..k_len {
        let map = {
            let mut mtx = Mat::zeros(n + m, dim);
            mtx.view_mut((0, 0), (n, dim)).copy_from(&t_x[k]);
            mtx.view_mut((n, 0), (m, dim)).copy_from(&e_u(k));
            mtx
        };
        x.push(&t_x[k] * &mean_e);
        u.push(e_u(k) * &mean_e);
        cov.push(&map * &cov_e * map.transpose());
        full_map.view_mut((k * (n + m), 0), (n + m, dim)).copy_from(&map);
    }
    let joint = &full_map * &cov_e * full_map.transpose();
    DensePosterior { x, u, cov, joint }
}

/// Textbook Kalman filter and Rauch–Tung–Striebel smoother for
/// `x_{k+1} = A x_k + B u_k + w_k`, `y_k = C x_k + D u_k + v_k` with known inputs and
/// `x_1 ~ N(x1_mean, x1_cov)`.
pub fn classical_smoother(model: &LdsModel, y: &[Vector], u: &[Vector], x1_mean: &Vector, x1_cov: &Mat) -> (Vec<Vector>, Vec<Mat>) {
    let (n, k_len) = (model.n(), model.horizon());
    let mut xp = vec![x1_mean.clone()];
    let mut pp = vec![x1_cov.clone()];
    let mut xf: Vec<Vector> = Vec::new();
    let mut pf: Vec<Mat> = Vec::new();
    for k in 0..k_len {
        if k > 0 {
            xp.push(model.a(k - 1) * &xf[k - 1] + model.b(k - 1) * &u[k - 1]);
            pp.push(model.a(k - 1) * &pf[k - 1] * model.a(k - 1).transpose() + model.q(k - 1));
        }
        let c = model.c(k);
        let s = c * &pp[k] * c.transpose() + model.r(k);
        let gain = &pp[k] * c.transpose() * s.try_inverse().expect("invertible innovation covariance");
        xf.push(&xp[k] + &gain * (&y[k] - c * &xp[k] - model.d(k) * &u[k]));
        pf.push((Mat::identity(n, n) - &gain * c) * &pp[k]);
    }
    let mut xs = xf.clone();
    let mut ps = pf.clone();
    for k in (0..k_len - 1).rev() {
        let g = &pf[k] * model.a(k).transpose() * pp[k + 1].clone().try_inverse().expect("invertible prediction");
        xs[k] = &xf[k] + &g * (&xs[k + 1] - &xp[k + 1]);
        ps[k] = &pf[k] + &g * (&ps[k + 1] - &pp[k + 1]) * g.transpose();
    }
    (xs, ps)
}

/// Largest entrywise difference relative to the largest entry of the reference.
pub fn rel_diff(a: &[Vector], b: &[Vector]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().map(|v| v.amax()).fold(0.0, f64::max).max(1e-300);
    a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max) / scale
}

/// Same as [`rel_diff`] for matrices.
pub fn rel_diff_mat(a: &[Mat], b: &[Mat]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().map(|v| v.amax()).fold(0.0, f64::max).max(1e-300);
    a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max) / scale
}

/// Random time-invariant model with standard normal matrices, `A` scaled to
/// spectral norm `a_scale` and the given noise levels.
pub fn random_model(n: usize, m: usize, p: usize, k: usize, seed: u64, a_scale: f64, q: f64, r: f64) -> LdsModel {
    let base = sparse_rks::model::build_random_system(n, m, p, k, seed).unwrap();
    let a = base.a(0).clone();
    let norm = a.clone().svd(false, false).singular_values.max();
    let a = a * (a_scale / norm);
    LdsModel::time_invariant(k, a, base.b(0).clone(), base.c(0).clone(), base.d(0).clone(), Mat::identity(n, n) * q, Mat::identity(p, p) * r).unwrap()
}

/// Standard normal measurement sequence from a seeded generator.
pub fn random_measurements(p: usize, k: usize, seed: u64) -> Vec<Vector> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..k).map(|_| Vector::from_fn(p, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))).collect()
}
