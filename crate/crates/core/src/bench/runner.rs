//! Experiment orchestration.

use std::io::{Read, Write};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Algorithm, ExperimentConfig};
use super::metrics::{fsrr, nmse, support_of, to_db, SUPPORT_THRESHOLD};
use crate::bayesian::{msbl_rks, mvb_rks, sbl_rks, vb_rks, SblOptions, VbOptions};
use crate::bp::{bp_rks, group_bp_rks, BpOptions, BpdnOptions};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::model::{generate_instance, mix_seed, InstanceSpec, LdsModel, NoiseMode, SparseTrajectory};
use crate::regularized::{group_l1_rks, l1_rks, reweighted_l2_rks, ridge_rks, AdmmOptions, ReweightOptions};
use crate::report::SolverReport;
use crate::rks::{default_p0, rks_smooth};

/// Status of a successful trial.
pub const STATUS_OK: &str = "ok";
/// Status of an average row.
pub const STATUS_MEAN: &str = "mean";

/// One row of the benchmark table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Algorithm identifier.
    pub algo: String,
    /// Measurement dimension.
    pub p: usize,
    /// State dimension.
    pub n: usize,
    /// Input dimension.
    pub m: usize,
    /// Horizon.
    #[serde(rename = "K")]
    pub horizon: usize,
    /// Nonzero inputs per step.
    pub s: usize,
    /// Measurement SNR in dB.
    pub snr_db: f64,
    /// Seed of the instance (the base seed for average rows).
    pub seed: u64,
    /// Pooled state NMSE.
    pub nmse_state: f64,
    /// Pooled input NMSE.
    pub nmse_input: f64,
    /// State NMSE in dB.
    pub nmse_state_db: f64,
    /// Input NMSE in dB.
    pub nmse_input_db: f64,
    /// False support recovery rate.
    pub fsrr: f64,
    /// Wall-clock seconds.
    pub runtime_s: f64,
    /// Iterations performed.
    pub iters: usize,
    /// `ok`, `mean`, or `error: <message>`.
    pub status: String,
}

/// Writes records as CSV with a header row.
pub fn write_records<W: Write>(w: W, records: &[MetricsRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    for r in records {
        writer.serialize(r).map_err(|e| Error::Parse(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads records written by [`write_records`].
pub fn read_records<R: Read>(r: R) -> Result<Vec<MetricsRecord>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(|e| Error::Parse(e.to_string())))
        .collect()
}

/// Hyperparameters that depend on the instance rather than the config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tuning {
    /// Regularisation weight of the penalised solvers.
    pub tau: f64,
    /// Prior variance of the Gaussian-prior baseline.
    pub input_var: f64,
    /// Input amplitude used by the early-exit rule.
    pub sigma_u: f64,
}

/// Unit of the `τ` grid, `σ_v √(2 ln m)`.
pub fn tau_unit(sigma_v: f64, m: usize) -> f64 {
    sigma_v * (2.0 * (m.max(2) as f64).ln()).sqrt()
}

/// Runs one algorithm with fixed tuning.
pub fn solve(algo: Algorithm, cfg: &ExperimentConfig, model: &LdsModel, y: &[Vector], tuning: &Tuning) -> Result<SolverReport> {
    match algo {
        Algorithm::Rks => {
            let start = Instant::now();
            let smooth = rks_smooth(model, y, &default_p0(model))?;
            Ok(SolverReport {
                x: smooth.x.clone(),
                u: smooth.u.clone(),
                iterations: 1,
                converged: true,
                runtime_s: start.elapsed().as_secs_f64(),
                smoothing: Some(smooth),
                ..Default::default()
            })
        }
        Algorithm::RidgeRks => ridge_rks(model, y, tuning.input_var, None),
        Algorithm::L1Rks | Algorithm::GroupL1Rks => {
            let params = if algo == Algorithm::L1Rks { &cfg.l1_rks } else { &cfg.group_l1_rks };
            let opts = AdmmOptions {
                tau: vec![tuning.tau],
                c: params.c,
                r_max: params.r_max,
                tol: params.early_exit * tuning.sigma_u,
                p0: None,
            };
            if algo == Algorithm::L1Rks {
                l1_rks(model, y, &opts)
            } else {
                group_l1_rks(model, y, &opts)
            }
        }
        Algorithm::RwL2Rks => {
            let p = &cfg.rw_l2_rks;
            let opts = ReweightOptions {
                tau: vec![tuning.tau],
                l: p.l,
                eps_w: p.eps_w,
                r_max: p.r_max,
                tol: p.early_exit * tuning.sigma_u,
                p0: None,
            };
            reweighted_l2_rks(model, y, &opts)
        }
        Algorithm::SblRks | Algorithm::MsblRks => {
            let p = if algo == Algorithm::SblRks { &cfg.sbl_rks } else { &cfg.msbl_rks };
            let opts = SblOptions { r_max: p.r_max, eps_thres: p.eps_thres, ..Default::default() };
            if algo == Algorithm::SblRks {
                sbl_rks(model, y, &opts)
            } else {
                msbl_rks(model, y, &opts)
            }
        }
        Algorithm::VbRks | Algorithm::MvbRks => {
            let p = if algo == Algorithm::VbRks { &cfg.vb_rks } else { &cfg.mvb_rks };
            let opts = VbOptions {
                a: p.a,
                b: p.b,
                r_max: p.r_max,
                r_tilde_max: p.r_tilde_max,
                drop_terminal_coupling: p.drop_terminal_coupling,
                ..Default::default()
            };
            if algo == Algorithm::VbRks {
                vb_rks(model, y, &opts)
            } else {
                mvb_rks(model, y, &opts)
            }
        }
        Algorithm::BpRks | Algorithm::GroupBpRks => {
            let p = if algo == Algorithm::BpRks { &cfg.bp_rks } else { &cfg.group_bp_rks };
            let opts = BpOptions {
                epsilon: p.epsilon,
                admm: BpdnOptions { rho: p.rho, max_iter: p.max_iter, ..Default::default() },
            };
            if algo == Algorithm::BpRks {
                bp_rks(model, y, &opts)
            } else {
                group_bp_rks(model, y, &opts)
            }
        }
    }
}

/// Instance parameters of the sweep point `p`.
pub fn instance_spec(cfg: &ExperimentConfig, p: usize) -> InstanceSpec {
    let e = &cfg.experiment;
    InstanceSpec {
        n: e.n,
        m: e.m,
        p,
        horizon: e.horizon,
        s: e.s,
        snr_db: e.snr_db,
        sigma_u: e.sigma_u,
        support_mode: e.support_mode,
        noise: if e.noise { NoiseMode::Enabled } else { NoiseMode::Disabled },
    }
}

/// Seed of trial `trial` at sweep point `point`; independent of the algorithm.
pub fn trial_seed(base: u64, point: u64, trial: usize) -> u64 {
    mix_seed(mix_seed(base, point), trial as u64 + 1)
}

/// Tuning derived from the instance: `τ` unit and the matched Gaussian prior variance.
pub fn default_tuning(cfg: &ExperimentConfig, spec: &InstanceSpec) -> Tuning {
    let power = spec.s as f64 * spec.sigma_u * spec.sigma_u / spec.m as f64;
    Tuning {
        tau: tau_unit(spec.sigma_v(), spec.m),
        input_var: cfg.ridge_rks.variance_scale * power.max(f64::MIN_POSITIVE),
        sigma_u: spec.sigma_u,
    }
}

fn tau_grid(cfg: &ExperimentConfig, algo: Algorithm) -> &[f64] {
    match algo {
        Algorithm::L1Rks => &cfg.l1_rks.tau_grid,
        Algorithm::GroupL1Rks => &cfg.group_l1_rks.tau_grid,
        Algorithm::RwL2Rks => &cfg.rw_l2_rks.tau_grid,
        _ => &[1.0],
    }
}

fn input_score(traj: &SparseTrajectory, u: &[Vector]) -> f64 {
    nmse(&traj.u, u).unwrap_or_else(|_| u.iter().map(|v| v.norm_squared()).sum())
}

/// Runs `algo` on one instance. Penalised solvers are run for every `τ` of their
/// grid and the run with the smallest input error is kept.
pub fn run_trial(algo: Algorithm, cfg: &ExperimentConfig, model: &LdsModel, traj: &SparseTrajectory, spec: &InstanceSpec) -> Result<SolverReport> {
    let base = default_tuning(cfg, spec);
    let mut best: Option<(f64, SolverReport)> = None;
    let mut last_err = None;
    for &mult in tau_grid(cfg, algo) {
        let tuning = Tuning { tau: base.tau * mult, ..base };
        match solve(algo, cfg, model, &traj.y, &tuning) {
            Ok(report) => {
                let score = input_score(traj, &report.u);
                if best.as_ref().is_none_or(|(b, _)| score < *b) {
                    best = Some((score, report));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match (best, last_err) {
        (Some((_, report)), _) => Ok(report),
        (None, Some(e)) => Err(e),
        (None, None) => Err(Error::InvalidParameter("empty tau grid".into())),
    }
}

fn record(algo: Algorithm, spec: &InstanceSpec, seed: u64, timing: bool, outcome: Result<(SolverReport, &SparseTrajectory)>) -> MetricsRecord {
    let mut rec = MetricsRecord {
        algo: algo.id().to_string(),
        p: spec.p,
        n: spec.n,
        m: spec.m,
        horizon: spec.horizon,
        s: spec.s,
        snr_db: spec.snr_db,
        seed,
        nmse_state: f64::NAN,
        nmse_input: f64::NAN,
        nmse_state_db: f64::NAN,
        nmse_input_db: f64::NAN,
        fsrr: f64::NAN,
        runtime_s: 0.0,
        iters: 0,
        status: STATUS_OK.to_string(),
    };
    let metrics = outcome.and_then(|(report, traj)| {
        let state = nmse(&traj.x, &report.x)?;
        let input = match nmse(&traj.u, &report.u) {
            Err(Error::ZeroReference) => f64::NAN,
            other => other?,
        };
        let f = fsrr(&traj.supports, &report.u, traj.sigma_u)?;
        Ok((state, input, f, report.runtime_s, report.iterations))
    });
    match metrics {
        Ok((state, input, f, runtime, iters)) => {
            rec.nmse_state = state;
            rec.nmse_input = input;
            rec.nmse_state_db = to_db(state);
            rec.nmse_input_db = to_db(input);
            rec.fsrr = f;
            rec.runtime_s = if timing { runtime } else { 0.0 };
            rec.iters = iters;
        }
        Err(e) => rec.status = format!("error: {e}"),
    }
    rec
}

/// Runs every algorithm of `cfg` on every `(p, trial)` instance.
///
/// All algorithms see the same data at the same `(p, trial)`. Rows are ordered
/// by algorithm (config order), `p` and trial, and each `(algorithm, p)` block
/// is followed by its average row. Failing trials are recorded with an error
/// status and excluded from the averages.
pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    cfg.validate()?;
    let e = &cfg.experiment;
    let jobs: Vec<(usize, usize)> = e.p.iter().flat_map(|&p| (0..e.trials).map(move |t| (p, t))).collect();
    let rows: Vec<Vec<MetricsRecord>> = jobs
        .par_iter()
        .map(|&(p, trial)| {
            let spec = instance_spec(cfg, p);
            let seed = trial_seed(e.seed, p as u64, trial);
            let instance = generate_instance(&spec, seed);
            e.algorithms
                .iter()
                .map(|&algo| {
                    let outcome = match &instance {
                        Ok((model, traj)) => run_trial(algo, cfg, model, traj, &spec).map(|r| (r, traj)),
                        Err(err) => Err(Error::InvalidParameter(err.to_string())),
                    };
                    record(algo, &spec, seed, e.timing, outcome)
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(rows.len() * e.algorithms.len() + e.p.len() * e.algorithms.len());
    for (ai, &algo) in e.algorithms.iter().enumerate() {
        for &p in &e.p {
            let block: Vec<MetricsRecord> = jobs
                .iter()
                .zip(&rows)
                .filter(|((jp, _), _)| *jp == p)
                .map(|(_, r)| r[ai].clone())
                .collect();
            let avg = average(algo, &instance_spec(cfg, p), e.seed, &block);
            out.extend(block);
            out.push(avg);
        }
    }
    Ok(out)
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.filter(|v| v.is_finite()).fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

fn average(algo: Algorithm, spec: &InstanceSpec, seed: u64, rows: &[MetricsRecord]) -> MetricsRecord {
    let ok: Vec<&MetricsRecord> = rows.iter().filter(|r| r.status == STATUS_OK).collect();
    let nmse_state = mean_of(ok.iter().map(|r| r.nmse_state));
    let nmse_input = mean_of(ok.iter().map(|r| r.nmse_input));
    MetricsRecord {
        algo: algo.id().to_string(),
        p: spec.p,
        n: spec.n,
        m: spec.m,
        horizon: spec.horizon,
        s: spec.s,
        snr_db: spec.snr_db,
        seed,
        nmse_state,
        nmse_input,
        nmse_state_db: to_db(nmse_state),
        nmse_input_db: to_db(nmse_input),
        fsrr: mean_of(ok.iter().map(|r| r.fsrr)),
        runtime_s: mean_of(ok.iter().map(|r| r.runtime_s)),
        iters: mean_of(ok.iter().map(|r| r.iters as f64)).round().max(0.0) as usize,
        status: if ok.len() == rows.len() {
            STATUS_MEAN.to_string()
        } else {
            format!("{STATUS_MEAN} ({} of {} trials ok)", ok.len(), rows.len())
        },
    }
}

/// Average rows of a benchmark table.
pub fn averages(records: &[MetricsRecord]) -> Vec<&MetricsRecord> {
    records.iter().filter(|r| r.status.starts_with(STATUS_MEAN)).collect()
}

/// Smallest measurement dimension reaching the target success rate for one
/// algorithm and sparsity level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    /// Algorithm identifier.
    pub algo: String,
    /// Nonzero inputs per step.
    pub s: usize,
    /// Smallest successful `p`, absent when even the largest `p` tried fails.
    pub p_min: Option<usize>,
    /// Success rate at `p_min`, or at the largest `p` tried when unreachable.
    pub success_rate: f64,
    /// False when no tried `p` reached the target.
    pub reachable: bool,
}

/// Writes phase points as CSV with a header row.
pub fn write_phase<W: Write>(w: W, points: &[PhasePoint]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    for p in points {
        writer.serialize(p).map_err(|e| Error::Parse(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads phase points written by [`write_phase`].
pub fn read_phase<R: Read>(r: R) -> Result<Vec<PhasePoint>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(|e| Error::Parse(e.to_string())))
        .collect()
}

/// Whether one trial counts as a success in the phase sweep: input NMSE below
/// the threshold, or, when the true input is zero, no estimated support.
pub fn phase_success(traj: &SparseTrajectory, u: &[Vector], threshold: f64) -> bool {
    match nmse(&traj.u, u) {
        Ok(v) => v < threshold,
        Err(_) => u.iter().all(|uk| support_of(uk, SUPPORT_THRESHOLD * traj.sigma_u).is_empty()),
    }
}

/// Phase-transition sweep: for each sparsity level, the smallest `p` (from
/// `p_start` in steps of `p_stride`, up to `m`) at which at least
/// `success_rate` of the trials succeed.
///
/// Every algorithm sees the same data at the same `(s, p, trial)`.
pub fn phase_transition(cfg: &ExperimentConfig) -> Result<Vec<PhasePoint>> {
    cfg.validate()?;
    let e = &cfg.experiment;
    let ph = &cfg.phase;
    let mut out = Vec::new();
    for &s in &ph.s_values {
        let mut pending: Vec<Algorithm> = e.algorithms.clone();
        let mut found: Vec<Option<(usize, f64)>> = vec![None; e.algorithms.len()];
        let mut last_rate = vec![0.0; e.algorithms.len()];
        let mut p = ph.p_start;
        while p <= e.m && !pending.is_empty() {
            let mut spec = instance_spec(cfg, p);
            spec.s = s;
            let point = (s as u64) << 32 | p as u64;
            let successes: Vec<Vec<bool>> = (0..e.trials)
                .into_par_iter()
                .map(|trial| {
                    let seed = trial_seed(e.seed, point, trial);
                    match generate_instance(&spec, seed) {
                        Ok((model, traj)) => pending
                            .iter()
                            .map(|&algo| {
                                run_trial(algo, cfg, &model, &traj, &spec)
                                    .map(|r| phase_success(&traj, &r.u, ph.nmse_threshold))
                                    .unwrap_or(false)
                            })
                            .collect(),
                        Err(_) => vec![false; pending.len()],
                    }
                })
                .collect();
            let mut still = Vec::new();
            for (j, &algo) in pending.iter().enumerate() {
                let rate = successes.iter().filter(|t| t[j]).count() as f64 / e.trials as f64;
                let idx = e.algorithms.iter().position(|a| *a == algo).expect("pending algorithm is configured");
                last_rate[idx] = rate;
                if rate >= ph.success_rate {
                    found[idx] = Some((p, rate));
                } else {
                    still.push(algo);
                }
            }
            pending = still;
            p += ph.p_stride;
        }
        for (idx, &algo) in e.algorithms.iter().enumerate() {
            out.push(match found[idx] {
                Some((p_min, rate)) => PhasePoint { algo: algo.id().into(), s, p_min: Some(p_min), success_rate: rate, reachable: true },
                None => PhasePoint { algo: algo.id().into(), s, p_min: None, success_rate: last_rate[idx], reachable: false },
            });
        }
    }
    Ok(out)
}

/// Runtime of `cfg` algorithms on one instance; convenience for timing studies.
pub fn time_algorithms(cfg: &ExperimentConfig, p: usize, seed: u64) -> Result<Vec<(Algorithm, f64, usize)>> {
    let spec = instance_spec(cfg, p);
    let (model, traj) = generate_instance(&spec, seed)?;
    let tuning = default_tuning(cfg, &spec);
    cfg.experiment
        .algorithms
        .iter()
        .map(|&algo| {
            let start = Instant::now();
            let report = solve(algo, cfg, &model, &traj.y, &tuning)?;
            Ok((algo, start.elapsed().as_secs_f64(), report.iterations))
        })
        .collect()
}
