//! Experiment configuration.
//!
//! Configurations are TOML documents with an `[experiment]` table, one optional
//! table per algorithm and an optional `[phase]` table. Unknown keys are errors.
//!
//! ```toml
//! [experiment]
//! n = 10
//! m = 40
//! p = [8, 12, 16]
//! K = 10
//! s = 3
//! snr_db = 20.0
//! trials = 50
//! seed = 1
//! algorithms = ["ridge_rks", "l1_rks", "sbl_rks"]
//!
//! [l1_rks]
//! tau_grid = [0.1, 1.0, 10.0, 100.0]
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SupportMode;

/// Estimators known to the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Robust Kalman smoother without an input prior.
    Rks,
    /// Smoother with a Gaussian input prior of matched variance.
    RidgeRks,
    /// ℓ1-regularised smoother.
    L1Rks,
    /// Group-ℓ1-regularised smoother.
    GroupL1Rks,
    /// Reweighted-ℓ2 smoother.
    RwL2Rks,
    /// Sparse Bayesian learning smoother.
    SblRks,
    /// Jointly sparse Bayesian learning smoother.
    MsblRks,
    /// Variational Bayes smoother.
    VbRks,
    /// Jointly sparse variational Bayes smoother.
    MvbRks,
    /// Basis-pursuit smoother.
    BpRks,
    /// Group basis-pursuit smoother.
    GroupBpRks,
}

impl Algorithm {
    /// Every algorithm in canonical order.
    pub const ALL: [Algorithm; 11] = [
        Algorithm::Rks,
        Algorithm::RidgeRks,
        Algorithm::L1Rks,
        Algorithm::GroupL1Rks,
        Algorithm::RwL2Rks,
        Algorithm::SblRks,
        Algorithm::MsblRks,
        Algorithm::VbRks,
        Algorithm::MvbRks,
        Algorithm::BpRks,
        Algorithm::GroupBpRks,
    ];

    /// Identifier used in configs and CSV files.
    pub fn id(self) -> &'static str {
        match self {
            Algorithm::Rks => "rks",
            Algorithm::RidgeRks => "ridge_rks",
            Algorithm::L1Rks => "l1_rks",
            Algorithm::GroupL1Rks => "group_l1_rks",
            Algorithm::RwL2Rks => "rw_l2_rks",
            Algorithm::SblRks => "sbl_rks",
            Algorithm::MsblRks => "msbl_rks",
            Algorithm::VbRks => "vb_rks",
            Algorithm::MvbRks => "mvb_rks",
            Algorithm::BpRks => "bp_rks",
            Algorithm::GroupBpRks => "group_bp_rks",
        }
    }

    /// True for the algorithms whose weight `τ` is tuned over a grid.
    pub fn uses_tau(self) -> bool {
        matches!(self, Algorithm::L1Rks | Algorithm::GroupL1Rks | Algorithm::RwL2Rks)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    /// Accepts the identifier with or without the `_rks` suffix.
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        Algorithm::ALL
            .into_iter()
            .find(|a| a.id() == key || a.id().strip_suffix("_rks") == Some(key.as_str()))
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

/// Instance and sweep parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// State dimension.
    pub n: usize,
    /// Input dimension.
    pub m: usize,
    /// Measurement dimensions to sweep.
    pub p: Vec<usize>,
    /// Horizon.
    #[serde(rename = "K")]
    pub horizon: usize,
    /// Nonzero inputs per step.
    pub s: usize,
    /// Measurement SNR `s·σ_u²/σ_v²` in dB.
    pub snr_db: f64,
    /// Standard deviation of the nonzero inputs.
    #[serde(default = "default_sigma_u")]
    pub sigma_u: f64,
    /// Support pattern of the inputs.
    #[serde(default)]
    pub support_mode: SupportMode,
    /// Trials per measurement dimension.
    pub trials: usize,
    /// Base seed.
    pub seed: u64,
    /// Estimators to run.
    pub algorithms: Vec<Algorithm>,
    /// Draw process and measurement noise in the simulation.
    #[serde(default = "yes")]
    pub noise: bool,
    /// Record wall-clock times; when false the runtime column is zero and the
    /// output is byte-identical across runs.
    #[serde(default = "yes")]
    pub timing: bool,
}

fn default_sigma_u() -> f64 {
    5.0
}

fn yes() -> bool {
    true
}

fn default_tau_grid() -> Vec<f64> {
    vec![0.1, 1.0, 10.0, 100.0]
}

/// Parameters of the ℓ1 and group-ℓ1 solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmParams {
    /// Multipliers of `σ_v √(2 ln m)`; the value with the lowest input error is kept.
    pub tau_grid: Vec<f64>,
    /// ADMM penalty.
    pub c: f64,
    /// Iteration cap.
    pub r_max: usize,
    /// Early exit on input changes below this multiple of `σ_u`; `0` disables.
    pub early_exit: f64,
}

impl Default for AdmmParams {
    fn default() -> Self {
        Self { tau_grid: default_tau_grid(), c: 1.0, r_max: 200, early_exit: 1e-7 }
    }
}

/// Parameters of the reweighted-ℓ2 solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReweightParams {
    /// Multipliers of `σ_v √(2 ln m)`; the value with the lowest input error is kept.
    pub tau_grid: Vec<f64>,
    /// Penalty exponent.
    pub l: f64,
    /// Weight floor.
    pub eps_w: f64,
    /// Iteration cap.
    pub r_max: usize,
    /// Early exit on input changes below this multiple of `σ_u`; `0` disables.
    pub early_exit: f64,
}

impl Default for ReweightParams {
    fn default() -> Self {
        Self { tau_grid: default_tau_grid(), l: 1.0, eps_w: 1e-8, r_max: 200, early_exit: 1e-7 }
    }
}

/// Parameters of the Gaussian-prior baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RidgeParams {
    /// Prior variance as a multiple of the average input power `s·σ_u²/m`.
    pub variance_scale: f64,
}

impl Default for RidgeParams {
    fn default() -> Self {
        Self { variance_scale: 1.0 }
    }
}

/// Parameters of the sparse Bayesian learning solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SblParams {
    /// Iteration cap.
    pub r_max: usize,
    /// Stop on a largest relative `γ` change below this value.
    pub eps_thres: f64,
}

impl Default for SblParams {
    fn default() -> Self {
        Self { r_max: 100, eps_thres: 1e-6 }
    }
}

/// Parameters of the variational Bayes solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VbParams {
    /// Gamma hyperprior shape.
    pub a: f64,
    /// Gamma hyperprior rate.
    pub b: f64,
    /// Outer iterations.
    pub r_max: usize,
    /// Inner sweeps per outer iteration.
    pub r_tilde_max: usize,
    /// Omit the dynamics coupling of the last step.
    pub drop_terminal_coupling: bool,
}

impl Default for VbParams {
    fn default() -> Self {
        Self { a: 1e-6, b: 1e-6, r_max: 100, r_tilde_max: 3, drop_terminal_coupling: false }
    }
}

/// Parameters of the basis-pursuit solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BpParams {
    /// Residual radius; absent means the default for the reduced rank.
    pub epsilon: Option<f64>,
    /// ADMM penalty.
    pub rho: f64,
    /// Iteration cap.
    pub max_iter: usize,
}

impl Default for BpParams {
    fn default() -> Self {
        Self { epsilon: None, rho: 1.0, max_iter: 5000 }
    }
}

/// Parameters of the phase-transition sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseParams {
    /// Sparsity levels.
    pub s_values: Vec<usize>,
    /// First measurement dimension tried.
    pub p_start: usize,
    /// Step between measurement dimensions.
    pub p_stride: usize,
    /// A trial succeeds when its input NMSE is below this value.
    pub nmse_threshold: f64,
    /// Required fraction of successful trials.
    pub success_rate: f64,
}

impl Default for PhaseParams {
    fn default() -> Self {
        Self { s_values: vec![2, 4, 6], p_start: 2, p_stride: 1, nmse_threshold: 0.05, success_rate: 0.9 }
    }
}

/// Complete benchmark configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Instance and sweep parameters.
    pub experiment: ExperimentSection,
    /// ℓ1 solver.
    #[serde(default)]
    pub l1_rks: AdmmParams,
    /// Group-ℓ1 solver.
    #[serde(default)]
    pub group_l1_rks: AdmmParams,
    /// Reweighted-ℓ2 solver.
    #[serde(default)]
    pub rw_l2_rks: ReweightParams,
    /// Gaussian-prior baseline.
    #[serde(default)]
    pub ridge_rks: RidgeParams,
    /// Sparse Bayesian learning.
    #[serde(default)]
    pub sbl_rks: SblParams,
    /// Jointly sparse Bayesian learning.
    #[serde(default)]
    pub msbl_rks: SblParams,
    /// Variational Bayes.
    #[serde(default)]
    pub vb_rks: VbParams,
    /// Jointly sparse variational Bayes.
    #[serde(default)]
    pub mvb_rks: VbParams,
    /// Basis pursuit.
    #[serde(default)]
    pub bp_rks: BpParams,
    /// Group basis pursuit.
    #[serde(default)]
    pub group_bp_rks: BpParams,
    /// Phase-transition sweep.
    #[serde(default)]
    pub phase: PhaseParams,
}

impl ExperimentConfig {
    /// Desk-scale configuration: `n=10, m=40, K=10, s=3`, 20 dB, `p` from 4 to 24.
    pub fn desk() -> Self {
        Self {
            experiment: ExperimentSection {
                n: 10,
                m: 40,
                p: (4..=24).step_by(4).collect(),
                horizon: 10,
                s: 3,
                snr_db: 20.0,
                sigma_u: 5.0,
                support_mode: SupportMode::TimeVarying,
                trials: 50,
                seed: 1,
                algorithms: vec![Algorithm::RidgeRks, Algorithm::L1Rks, Algorithm::SblRks],
                noise: true,
                timing: true,
            },
            l1_rks: AdmmParams::default(),
            group_l1_rks: AdmmParams::default(),
            rw_l2_rks: ReweightParams::default(),
            ridge_rks: RidgeParams::default(),
            sbl_rks: SblParams::default(),
            msbl_rks: SblParams::default(),
            vb_rks: VbParams::default(),
            mvb_rks: VbParams::default(),
            bp_rks: BpParams::default(),
            group_bp_rks: BpParams::default(),
            phase: PhaseParams::default(),
        }
    }

    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a TOML file.
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Serialises the configuration as TOML.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks the value constraints that the schema cannot express.
    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if e.n == 0 || e.m == 0 || e.horizon == 0 {
            return fail("n, m and K must be positive");
        }
        if e.p.is_empty() || e.p.contains(&0) {
            return fail("p must list positive measurement dimensions");
        }
        if e.s > e.m {
            return fail("s must not exceed m");
        }
        if e.trials == 0 {
            return fail("trials must be at least 1");
        }
        if !e.snr_db.is_finite() || !(e.sigma_u > 0.0) {
            return fail("snr_db must be finite and sigma_u positive");
        }
        if e.algorithms.is_empty() {
            return fail("at least one algorithm is required");
        }
        for grid in [&self.l1_rks.tau_grid, &self.group_l1_rks.tau_grid, &self.rw_l2_rks.tau_grid] {
            if grid.is_empty() || grid.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
                return fail("tau_grid must hold finite nonnegative values");
            }
        }
        for a in [&self.l1_rks, &self.group_l1_rks] {
            if !(a.c > 0.0) || a.r_max == 0 {
                return fail("ADMM needs c > 0 and r_max ≥ 1");
            }
        }
        let rw = &self.rw_l2_rks;
        if !(rw.l > 0.0 && rw.l < 2.0) || !(rw.eps_w > 0.0) || rw.r_max == 0 {
            return fail("reweighting needs 0 < l < 2, eps_w > 0 and r_max ≥ 1");
        }
        if !(self.ridge_rks.variance_scale > 0.0) {
            return fail("ridge variance_scale must be positive");
        }
        for s in [&self.sbl_rks, &self.msbl_rks] {
            if s.r_max == 0 || !(s.eps_thres >= 0.0) {
                return fail("SBL needs r_max ≥ 1 and eps_thres ≥ 0");
            }
        }
        for v in [&self.vb_rks, &self.mvb_rks] {
            if !(v.a > 0.0 && v.b > 0.0) || v.r_max == 0 || v.r_tilde_max == 0 {
                return fail("VB needs a, b > 0 and positive iteration counts");
            }
        }
        for b in [&self.bp_rks, &self.group_bp_rks] {
            if !(b.rho > 0.0) || b.max_iter == 0 || b.epsilon.is_some_and(|x| !(x >= 0.0)) {
                return fail("basis pursuit needs rho > 0, max_iter ≥ 1 and epsilon ≥ 0");
            }
        }
        let ph = &self.phase;
        if ph.s_values.iter().any(|&s| s > e.m) || ph.p_start == 0 || ph.p_stride == 0 {
            return fail("phase needs s ≤ m, p_start ≥ 1 and p_stride ≥ 1");
        }
        if !(ph.success_rate > 0.0 && ph.success_rate <= 1.0) || !(ph.nmse_threshold > 0.0) {
            return fail("phase needs 0 < success_rate ≤ 1 and nmse_threshold > 0");
        }
        Ok(())
    }
}
