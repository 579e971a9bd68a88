//! Linear dynamical system model, trajectory simulation and synthetic instance generation.
//!
//! The system evolves as `x_{k+1} = A_k x_k + B_k u_k + w_k` with measurements
//! `y_k = C_k x_k + D_k u_k + v_k`, where `w_k ~ N(0, Q_k)` and `v_k ~ N(0, R_k)`.
//! Steps are indexed `0..K` in code.

pub mod fixture;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, Mat, Vector};

/// Time-varying linear dynamical system with Gaussian noise.
///
/// Each matrix list holds either one entry (time-invariant, broadcast to every
/// step) or exactly `horizon` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct LdsModel {
    n: usize,
    m: usize,
    p: usize,
    horizon: usize,
    a: Vec<Mat>,
    b: Vec<Mat>,
    c: Vec<Mat>,
    d: Vec<Mat>,
    q: Vec<Mat>,
    r: Vec<Mat>,
}

fn check_list(name: &str, list: &[Mat], horizon: usize, rows: usize, cols: usize) -> Result<()> {
    if list.len() != 1 && list.len() != horizon {
        return Err(Error::DimensionMismatch(format!(
            "{name} list has {} entries, expected 1 or {horizon}",
            list.len()
        )));
    }
    for (k, mat) in list.iter().enumerate() {
        if mat.shape() != (rows, cols) {
            return Err(Error::DimensionMismatch(format!(
                "{name}[{k}] is {}x{}, expected {rows}x{cols}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        if !mat.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("{name}[{k}]")));
        }
    }
    Ok(())
}

fn check_covariances(name: &str, list: &[Mat]) -> Result<()> {
    for (k, mat) in list.iter().enumerate() {
        let scale = mat.norm().max(f64::MIN_POSITIVE);
        if (mat - mat.transpose()).norm() > 1e-12 * scale {
            return Err(Error::NotPositiveDefinite(format!("{name}[{k}] is not symmetric")));
        }
        cholesky(mat, &format!("{name}[{k}]"))?;
    }
    Ok(())
}

impl LdsModel {
    /// Builds a model from per-step matrix lists, validating every invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        horizon: usize,
        a: Vec<Mat>,
        b: Vec<Mat>,
        c: Vec<Mat>,
        d: Vec<Mat>,
        q: Vec<Mat>,
        r: Vec<Mat>,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be positive".into()));
        }
        let first = |name: &str, l: &[Mat]| -> Result<(usize, usize)> {
            l.first()
                .map(|m| m.shape())
                .ok_or_else(|| Error::DimensionMismatch(format!("{name} list is empty")))
        };
        let (n, _) = first("A", &a)?;
        let (_, m) = first("B", &b)?;
        let (p, _) = first("C", &c)?;
        if n == 0 || m == 0 || p == 0 {
            return Err(Error::InvalidParameter("dimensions must be positive".into()));
        }
        check_list("A", &a, horizon, n, n)?;
        check_list("B", &b, horizon, n, m)?;
        check_list("C", &c, horizon, p, n)?;
        check_list("D", &d, horizon, p, m)?;
        check_list("Q", &q, horizon, n, n)?;
        check_list("R", &r, horizon, p, p)?;
        check_covariances("Q", &q)?;
        check_covariances("R", &r)?;
        Ok(Self { n, m, p, horizon, a, b, c, d, q, r })
    }

    /// Builds a time-invariant model broadcast over `horizon` steps.
    pub fn time_invariant(
        horizon: usize,
        a: Mat,
        b: Mat,
        c: Mat,
        d: Mat,
        q: Mat,
        r: Mat,
    ) -> Result<Self> {
        Self::new(horizon, vec![a], vec![b], vec![c], vec![d], vec![q], vec![r])
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.n
    }
    /// Input dimension.
    pub fn m(&self) -> usize {
        self.m
    }
    /// Measurement dimension.
    pub fn p(&self) -> usize {
        self.p
    }
    /// Number of steps `K`.
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    /// True when every matrix list has a single broadcast entry.
    pub fn is_time_invariant(&self) -> bool {
        [&self.a, &self.b, &self.c, &self.d, &self.q, &self.r]
            .iter()
            .all(|l| l.len() == 1)
    }

    fn at(list: &[Mat], k: usize) -> &Mat {
        if list.len() == 1 {
            &list[0]
        } else {
            &list[k]
        }
    }

    /// `A_k`.
    pub fn a(&self, k: usize) -> &Mat {
        Self::at(&self.a, k)
    }
    /// `B_k`.
    pub fn b(&self, k: usize) -> &Mat {
        Self::at(&self.b, k)
    }
    /// `C_k`.
    pub fn c(&self, k: usize) -> &Mat {
        Self::at(&self.c, k)
    }
    /// `D_k`.
    pub fn d(&self, k: usize) -> &Mat {
        Self::at(&self.d, k)
    }
    /// `Q_k`.
    pub fn q(&self, k: usize) -> &Mat {
        Self::at(&self.q, k)
    }
    /// `R_k`.
    pub fn r(&self, k: usize) -> &Mat {
        Self::at(&self.r, k)
    }

    /// Raw matrix lists in the order `A, B, C, D, Q, R`.
    pub fn lists(&self) -> [(&'static str, &[Mat]); 6] {
        [
            ("A", &self.a),
            ("B", &self.b),
            ("C", &self.c),
            ("D", &self.d),
            ("Q", &self.q),
            ("R", &self.r),
        ]
    }

    /// Same system over a different horizon. Requires a time-invariant model
    /// or an unchanged horizon.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        if horizon != self.horizon && !self.is_time_invariant() {
            return Err(Error::InvalidParameter(
                "only time-invariant models can change horizon".into(),
            ));
        }
        let mut out = self.clone();
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be positive".into()));
        }
        out.horizon = horizon;
        Ok(out)
    }

    /// Same system with every measurement-noise covariance replaced by `r`.
    pub fn with_measurement_noise(&self, r: Mat) -> Result<Self> {
        Self::new(
            self.horizon,
            self.a.clone(),
            self.b.clone(),
            self.c.clone(),
            self.d.clone(),
            self.q.clone(),
            vec![r],
        )
    }

    /// Same system with every process-noise covariance replaced by `q`.
    pub fn with_process_noise(&self, q: Mat) -> Result<Self> {
        Self::new(
            self.horizon,
            self.a.clone(),
            self.b.clone(),
            self.c.clone(),
            self.d.clone(),
            vec![q],
            self.r.clone(),
        )
    }

    /// Same system with the input matrices replaced.
    pub fn with_input_matrices(&self, b: Mat, d: Mat) -> Result<Self> {
        Self::new(
            self.horizon,
            self.a.clone(),
            vec![b],
            self.c.clone(),
            vec![d],
            self.q.clone(),
            self.r.clone(),
        )
    }

    /// Same dynamics with measurement matrices, feedthrough and noise replaced per step.
    pub fn with_measurement_model(&self, c: Vec<Mat>, d: Vec<Mat>, r: Vec<Mat>) -> Result<Self> {
        Self::new(
            self.horizon,
            self.a.clone(),
            self.b.clone(),
            c,
            d,
            self.q.clone(),
            r,
        )
    }

    /// Checks that a measurement sequence matches the model.
    pub fn check_measurements(&self, y: &[Vector]) -> Result<()> {
        if y.len() != self.horizon {
            return Err(Error::DimensionMismatch(format!(
                "{} measurements for horizon {}",
                y.len(),
                self.horizon
            )));
        }
        if let Some((k, yk)) = y.iter().enumerate().find(|(_, yk)| yk.len() != self.p) {
            return Err(Error::DimensionMismatch(format!(
                "measurement {k} has length {}, expected {}",
                yk.len(),
                self.p
            )));
        }
        if y.iter().any(|yk| yk.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("measurements".into()));
        }
        Ok(())
    }
}

/// How supports of the sparse inputs relate across time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SupportMode {
    /// A fresh uniformly random support at every step.
    #[default]
    TimeVarying,
    /// One support shared by every step.
    Joint,
}

/// Sparse input sequence with its supports.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseInputs {
    /// Input vectors `u_k`.
    pub u: Vec<Vector>,
    /// Sorted support of each `u_k`.
    pub supports: Vec<Vec<usize>>,
    /// Standard deviation of the nonzero entries.
    pub sigma_u: f64,
}

/// Ground truth and measurements for one simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTrajectory {
    /// States `x_k`.
    pub x: Vec<Vector>,
    /// Inputs `u_k`.
    pub u: Vec<Vector>,
    /// Sorted support of each `u_k`.
    pub supports: Vec<Vec<usize>>,
    /// Measurements `y_k`.
    pub y: Vec<Vector>,
    /// Process-noise realisations `w_k` (the last one is drawn but never used).
    pub w: Vec<Vector>,
    /// Measurement-noise realisations `v_k`.
    pub v: Vec<Vector>,
    /// Standard deviation of the nonzero input entries.
    pub sigma_u: f64,
    /// Root-mean-square measurement-noise standard deviation of the model.
    pub sigma_v: f64,
    /// Seed of the noise draw.
    pub seed: u64,
}

/// Random system with i.i.d. standard normal `A`, `B`, `C`, `D`, `Q = I` and `R = I`.
///
/// Scale `R` afterwards with [`LdsModel::with_measurement_noise`].
pub fn build_random_system(n: usize, m: usize, p: usize, horizon: usize, seed: u64) -> Result<LdsModel> {
    if n == 0 || m == 0 || p == 0 || horizon == 0 {
        return Err(Error::InvalidParameter("dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gaussian = |r: usize, c: usize| Mat::from_fn(r, c, |_, _| rng.sample(StandardNormal));
    let a = gaussian(n, n);
    let b = gaussian(n, m);
    let c = gaussian(p, n);
    let d = gaussian(p, m);
    LdsModel::time_invariant(horizon, a, b, c, d, Mat::identity(n, n), Mat::identity(p, p))
}

/// Draws `horizon` input vectors with exactly `s` nonzero `N(0, sigma_u²)` entries each.
pub fn generate_sparse_inputs(
    m: usize,
    horizon: usize,
    s: usize,
    sigma_u: f64,
    mode: SupportMode,
    seed: u64,
) -> Result<SparseInputs> {
    if s > m {
        return Err(Error::InvalidParameter(format!("sparsity {s} exceeds input dimension {m}")));
    }
    if !(sigma_u > 0.0) {
        return Err(Error::InvalidParameter("sigma_u must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw_support = |rng: &mut ChaCha8Rng| {
        let mut idx = sample(rng, m, s).into_vec();
        idx.sort_unstable();
        idx
    };
    let shared = draw_support(&mut rng);
    let mut u = Vec::with_capacity(horizon);
    let mut supports = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let support = match mode {
            SupportMode::Joint => shared.clone(),
            SupportMode::TimeVarying if k == 0 => shared.clone(),
            SupportMode::TimeVarying => draw_support(&mut rng),
        };
        let mut uk = Vector::zeros(m);
        for &i in &support {
            let z: f64 = rng.sample(StandardNormal);
            uk[i] = sigma_u * z;
        }
        u.push(uk);
        supports.push(support);
    }
    Ok(SparseInputs { u, supports, sigma_u })
}

/// Measurement-noise standard deviation for a target SNR `s·σ_u²/σ_v²` in dB.
pub fn snr_to_sigma_v(snr_db: f64, s: usize, sigma_u: f64) -> f64 {
    (s as f64 * sigma_u * sigma_u / 10f64.powf(snr_db / 10.0)).sqrt()
}

/// Whether simulation draws process and measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// Draw `w_k ~ N(0, Q_k)` and `v_k ~ N(0, R_k)`.
    Enabled,
    /// Treat `Q` and `R` as zero during simulation only.
    Disabled,
}

/// Simulates the system driven by `inputs`.
///
/// When `x1` is `None` the initial state is drawn i.i.d. standard normal.
pub fn simulate(
    model: &LdsModel,
    inputs: &SparseInputs,
    x1: Option<&Vector>,
    seed: u64,
    noise: NoiseMode,
) -> Result<SparseTrajectory> {
    let (n, p, horizon) = (model.n(), model.p(), model.horizon());
    if inputs.u.len() != horizon || inputs.u.iter().any(|u| u.len() != model.m()) {
        return Err(Error::DimensionMismatch("inputs do not match model".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |len: usize, rng: &mut ChaCha8Rng| Vector::from_fn(len, |_, _| rng.sample(StandardNormal));
    let x1 = match x1 {
        Some(x) if x.len() == n => x.clone(),
        Some(_) => return Err(Error::DimensionMismatch("x1 length differs from n".into())),
        None => normal(n, &mut rng),
    };
    let mut w = Vec::with_capacity(horizon);
    let mut v = Vec::with_capacity(horizon);
    for k in 0..horizon {
        match noise {
            NoiseMode::Enabled => {
                let lq = cholesky(model.q(k), "Q")?.l();
                let lr = cholesky(model.r(k), "R")?.l();
                w.push(lq * normal(n, &mut rng));
                v.push(lr * normal(p, &mut rng));
            }
            NoiseMode::Disabled => {
                w.push(Vector::zeros(n));
                v.push(Vector::zeros(p));
            }
        }
    }
    let (x, y) = replay(model, &x1, &inputs.u, &w, &v)?;
    let sigma_v = (model.r(0).trace() / p as f64).sqrt();
    Ok(SparseTrajectory {
        x,
        u: inputs.u.clone(),
        supports: inputs.supports.clone(),
        y,
        w,
        v,
        sigma_u: inputs.sigma_u,
        sigma_v,
        seed,
    })
}

/// Propagates the system with given noise realisations, returning states and measurements.
pub fn replay(
    model: &LdsModel,
    x1: &Vector,
    u: &[Vector],
    w: &[Vector],
    v: &[Vector],
) -> Result<(Vec<Vector>, Vec<Vector>)> {
    let horizon = model.horizon();
    if u.len() != horizon || w.len() < horizon.saturating_sub(1) || v.len() != horizon {
        return Err(Error::DimensionMismatch("sequence lengths differ from horizon".into()));
    }
    let mut x = Vec::with_capacity(horizon);
    let mut y = Vec::with_capacity(horizon);
    let mut xk = x1.clone();
    for k in 0..horizon {
        y.push(model.c(k) * &xk + model.d(k) * &u[k] + &v[k]);
        let next = model.a(k) * &xk + model.b(k) * &u[k] + &w[k];
        x.push(std::mem::replace(&mut xk, next));
    }
    Ok((x, y))
}

/// Parameters of one synthetic experiment instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceSpec {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub horizon: usize,
    pub s: usize,
    pub snr_db: f64,
    pub sigma_u: f64,
    pub support_mode: SupportMode,
    pub noise: NoiseMode,
}

impl InstanceSpec {
    /// Desk-scale defaults: `n=10, m=40, p=12, K=10, s=3`, 20 dB, `σ_u=5`.
    pub fn desk(p: usize) -> Self {
        Self {
            n: 10,
            m: 40,
            p,
            horizon: 10,
            s: 3,
            snr_db: 20.0,
            sigma_u: 5.0,
            support_mode: SupportMode::TimeVarying,
            noise: NoiseMode::Enabled,
        }
    }

    /// Measurement-noise standard deviation implied by the SNR.
    pub fn sigma_v(&self) -> f64 {
        if self.s == 0 {
            10f64.powf(-self.snr_db / 20.0) * self.sigma_u
        } else {
            snr_to_sigma_v(self.snr_db, self.s, self.sigma_u)
        }
    }
}

/// SplitMix64 finaliser used to derive independent sub-seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates a random system and a simulated sparse-input trajectory.
///
/// The system, inputs and noise use independent sub-seeds of `seed`.
pub fn generate_instance(spec: &InstanceSpec, seed: u64) -> Result<(LdsModel, SparseTrajectory)> {
    let sigma_v = spec.sigma_v();
    let model = build_random_system(spec.n, spec.m, spec.p, spec.horizon, mix_seed(seed, 1))?
        .with_measurement_noise(Mat::identity(spec.p, spec.p) * (sigma_v * sigma_v))?;
    let inputs = generate_sparse_inputs(
        spec.m,
        spec.horizon,
        spec.s,
        spec.sigma_u,
        spec.support_mode,
        mix_seed(seed, 2),
    )?;
    let traj = simulate(&model, &inputs, None, mix_seed(seed, 3), spec.noise)?;
    Ok((model, traj))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_dimensions() {
        let model = build_random_system(30, 100, 20, 30, 7).unwrap();
        assert_eq!(model.a(0).shape(), (30, 30));
        assert_eq!(model.b(0).shape(), (30, 100));
        assert_eq!(model.c(0).shape(), (20, 30));
        assert_eq!(model.d(0).shape(), (20, 100));
        assert!(model.is_time_invariant());
    }

    #[test]
    fn minimal_dimensions_and_determinism() {
        let a = build_random_system(1, 1, 1, 1, 3).unwrap();
        let b = build_random_system(1, 1, 1, 1, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.q(0)[(0, 0)], 1.0);
        assert_eq!(a.r(0)[(0, 0)], 1.0);
        assert!(build_random_system(0, 1, 1, 1, 3).is_err());
    }

    #[test]
    fn sparse_inputs_have_exact_support() {
        let inputs = generate_sparse_inputs(100, 30, 5, 5.0, SupportMode::TimeVarying, 11).unwrap();
        assert_eq!(inputs.u.len(), 30);
        for (u, s) in inputs.u.iter().zip(&inputs.supports) {
            assert_eq!(s.len(), 5);
            assert_eq!(u.iter().filter(|v| **v != 0.0).count(), 5);
        }
        assert!(inputs.supports.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn zero_and_full_sparsity() {
        let zero = generate_sparse_inputs(4, 3, 0, 1.0, SupportMode::TimeVarying, 1).unwrap();
        assert!(zero.u.iter().all(|u| u.iter().all(|v| *v == 0.0)));
        assert!(zero.supports.iter().all(|s| s.is_empty()));
        let full = generate_sparse_inputs(4, 3, 4, 1.0, SupportMode::TimeVarying, 1).unwrap();
        assert!(full.supports.iter().all(|s| *s == vec![0, 1, 2, 3]));
        assert!(generate_sparse_inputs(4, 3, 5, 1.0, SupportMode::Joint, 1).is_err());
    }

    #[test]
    fn joint_mode_shares_support() {
        let inputs = generate_sparse_inputs(40, 10, 3, 1.0, SupportMode::Joint, 5).unwrap();
        assert!(inputs.supports.iter().all(|s| *s == inputs.supports[0]));
    }

    #[test]
    fn input_amplitude_variance() {
        let inputs = generate_sparse_inputs(10, 20_000, 5, 5.0, SupportMode::TimeVarying, 9).unwrap();
        let vals: Vec<f64> = inputs
            .u
            .iter()
            .zip(&inputs.supports)
            .flat_map(|(u, s)| s.iter().map(move |&i| u[i]))
            .collect();
        let var = vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64;
        assert!((var / 25.0 - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn snr_conversion() {
        assert!((snr_to_sigma_v(20.0, 5, 5.0) - 1.118_033_988_7).abs() < 1e-10);
        assert!((snr_to_sigma_v(0.0, 1, 1.0) - 1.0).abs() < 1e-15);
        assert!((snr_to_sigma_v(10.0, 2, 1.0) - 0.447_213_595_5).abs() < 1e-10);
    }

    #[test]
    fn noiseless_identity_propagation() {
        let i = Mat::identity(2, 2);
        let model = LdsModel::time_invariant(2, i.clone(), i.clone(), i.clone(), Mat::zeros(2, 2), i.clone(), i).unwrap();
        let inputs = SparseInputs {
            u: vec![Vector::from_vec(vec![1.0, 0.0]), Vector::zeros(2)],
            supports: vec![vec![0], vec![]],
            sigma_u: 1.0,
        };
        let traj = simulate(&model, &inputs, Some(&Vector::zeros(2)), 0, NoiseMode::Disabled).unwrap();
        assert_eq!(traj.y[0], Vector::zeros(2));
        assert_eq!(traj.x[1], Vector::from_vec(vec![1.0, 0.0]));
    }

    #[test]
    fn geometric_growth() {
        let one = Mat::identity(1, 1);
        let model =
            LdsModel::time_invariant(3, one.clone() * 2.0, one.clone(), one.clone(), one.clone(), one.clone(), one).unwrap();
        let inputs = SparseInputs { u: vec![Vector::zeros(1); 3], supports: vec![vec![]; 3], sigma_u: 1.0 };
        let traj = simulate(&model, &inputs, Some(&Vector::from_element(1, 1.0)), 0, NoiseMode::Disabled).unwrap();
        let xs: Vec<f64> = traj.x.iter().map(|x| x[0]).collect();
        assert_eq!(xs, vec![1.0, 2.0, 4.0]);
    }

    #[test]
    fn replay_reproduces_measurements() {
        let spec = InstanceSpec::desk(12);
        let (model, traj) = generate_instance(&spec, 42).unwrap();
        let (x, y) = replay(&model, &traj.x[0], &traj.u, &traj.w, &traj.v).unwrap();
        assert_eq!(x, traj.x);
        assert_eq!(y, traj.y);
        let (_, again) = generate_instance(&spec, 42).unwrap();
        assert_eq!(again, traj);
    }

    #[test]
    fn rejects_bad_covariance() {
        let one = Mat::identity(1, 1);
        let bad = LdsModel::time_invariant(1, one.clone(), one.clone(), one.clone(), one.clone(), -one.clone(), one);
        assert!(matches!(bad, Err(Error::NotPositiveDefinite(_))));
    }
}
