//! Command-line front end: simulate instances, run estimators on fixture
//! files, and drive benchmark and phase-transition sweeps.
//!
//! Exit status is 0 on success, 1 for invalid arguments or configuration and
//! 2 when a run fails.

use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use sparse_rks::bench::runner::{averages, run_benchmark, solve, write_phase, write_records, Tuning};
use sparse_rks::bench::{phase_transition, Algorithm, ExperimentConfig};
use sparse_rks::model::fixture::{format_model, format_trajectory, parse_measurements, parse_model, read_blocks};
use sparse_rks::model::generate_instance;
use sparse_rks::bench::runner::instance_spec;
use sparse_rks::{Error, SolverReport};

#[derive(Parser)]
#[command(name = "sparse-rks", version, about = "Joint state and sparse input estimation for linear dynamical systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one seeded instance and write its model and trajectory fixtures.
    Simulate {
        /// Experiment config; the desk-scale defaults are used when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Measurement dimension; defaults to the first `p` of the config.
        #[arg(long)]
        p: Option<usize>,
        /// Instance seed.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output path of the model fixture.
        #[arg(long)]
        model_out: PathBuf,
        /// Output path of the trajectory fixture.
        #[arg(long)]
        traj_out: PathBuf,
    },
    /// Run one estimator on a model and measurement fixture.
    Estimate {
        /// Estimator identifier, for example `sbl`, `l1_rks` or `bp`.
        #[arg(long)]
        algo: String,
        /// Model fixture.
        #[arg(long)]
        model: PathBuf,
        /// Fixture holding the measurements in block `Y`.
        #[arg(long)]
        meas: PathBuf,
        /// Output CSV with one row of state and input estimates per step.
        #[arg(long)]
        out: PathBuf,
        /// Solver parameters; defaults are used when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Regularisation weight of the penalised estimators.
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        /// Prior input variance of the Gaussian-prior baseline.
        #[arg(long, default_value_t = 1.0)]
        input_var: f64,
    },
    /// Run every configured estimator over the measurement sweep.
    Benchmark {
        /// Experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Metrics CSV; written to standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Find the smallest successful measurement dimension per sparsity level.
    Phase {
        /// Experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Phase CSV; written to standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write model and trajectory fixtures for a list of seeds.
    Fixtures {
        /// Experiment config; the desk-scale defaults are used when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Measurement dimension; defaults to the first `p` of the config.
        #[arg(long)]
        p: Option<usize>,
        /// Seeds to write.
        #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
        seeds: Vec<u64>,
        /// Output directory.
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Failure classes mapped to exit codes 1 and 2.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.into()),
            other => Failure::Runtime(other.into()),
        }
    }
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, Failure> {
    match path {
        None => Ok(ExperimentConfig::desk()),
        Some(path) => ExperimentConfig::from_file(path)
            .map_err(|e| Failure::Config(anyhow!(e).context(format!("reading config {}", path.display())))),
    }
}

fn pick_p(cfg: &ExperimentConfig, p: Option<usize>) -> Result<usize, Failure> {
    match p.or_else(|| cfg.experiment.p.first().copied()) {
        Some(0) | None => Err(Failure::Config(anyhow!("measurement dimension must be positive"))),
        Some(p) => Ok(p),
    }
}

fn read_fixture(path: &Path) -> Result<Vec<(String, sparse_rks::Mat)>, Failure> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display())).map_err(runtime)?;
    read_blocks(BufReader::new(file)).with_context(|| format!("parsing {}", path.display())).map_err(runtime)
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display())).map_err(runtime)
}

/// Opens `path` for writing, or standard output when absent.
fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    match path {
        Some(path) => {
            let file = File::create(path).with_context(|| format!("creating {}", path.display())).map_err(runtime)?;
            Ok(Box::new(file))
        }
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn simulate(cfg: &ExperimentConfig, p: usize, seed: u64) -> Result<(String, String), Failure> {
    let spec = instance_spec(cfg, p);
    let (model, traj) = generate_instance(&spec, seed)?;
    Ok((format_model(&model), format_trajectory(&traj)))
}

fn estimates_csv(report: &SolverReport) -> String {
    let n = report.x.first().map_or(0, |x| x.len());
    let m = report.u.first().map_or(0, |u| u.len());
    let mut header = vec!["k".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|i| format!("u{i}")));
    let mut out = header.join(",") + "\n";
    for (k, (x, u)) in report.x.iter().zip(&report.u).enumerate() {
        let mut row = vec![(k + 1).to_string()];
        row.extend(x.iter().chain(u.iter()).map(|v| format!("{v:.17e}")));
        out += &(row.join(",") + "\n");
    }
    out
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Simulate { config, p, seed, model_out, traj_out } => {
            let cfg = load_config(config.as_deref())?;
            let p = pick_p(&cfg, p)?;
            let (model, traj) = simulate(&cfg, p, seed)?;
            write_file(&model_out, &model)?;
            write_file(&traj_out, &traj)?;
            eprintln!("wrote {} and {} (p = {p}, seed = {seed})", model_out.display(), traj_out.display());
        }
        Command::Estimate { algo, model, meas, out, config, tau, input_var } => {
            let algo: Algorithm = algo.parse().map_err(|e: Error| Failure::Config(e.into()))?;
            if !(tau >= 0.0) || !(input_var > 0.0) {
                return Err(Failure::Config(anyhow!("tau must be nonnegative and input-var positive")));
            }
            let cfg = load_config(config.as_deref())?;
            let model = parse_model(&read_fixture(&model)?)?;
            let y = parse_measurements(&read_fixture(&meas)?)?;
            let tuning = Tuning { tau, input_var, sigma_u: cfg.experiment.sigma_u };
            let report = solve(algo, &cfg, &model, &y, &tuning)?;
            write_file(&out, &estimates_csv(&report))?;
            eprintln!(
                "{}: {} steps, {} iterations, converged: {}, {:.3} s",
                algo.id(),
                report.x.len(),
                report.iterations,
                report.converged,
                report.runtime_s
            );
        }
        Command::Benchmark { config, out } => {
            let cfg = load_config(Some(&config))?;
            let rows = run_benchmark(&cfg)?;
            write_records(output(out.as_deref())?, &rows)?;
            eprintln!("{:<14} {:>4} {:>12} {:>12} {:>8} {:>10}", "algo", "p", "nmse_state", "nmse_input", "fsrr", "runtime_s");
            for avg in averages(&rows) {
                eprintln!(
                    "{:<14} {:>4} {:>12.4e} {:>12.4e} {:>8.4} {:>10.4}",
                    avg.algo, avg.p, avg.nmse_state, avg.nmse_input, avg.fsrr, avg.runtime_s
                );
            }
        }
        Command::Phase { config, out } => {
            let cfg = load_config(Some(&config))?;
            let points = phase_transition(&cfg)?;
            write_phase(output(out.as_deref())?, &points)?;
            eprintln!("{:<14} {:>4} {:>6} {:>8}", "algo", "s", "p_min", "rate");
            for pt in &points {
                let p_min = pt.p_min.map_or_else(|| "none".to_string(), |p| p.to_string());
                eprintln!("{:<14} {:>4} {:>6} {:>8.2}", pt.algo, pt.s, p_min, pt.success_rate);
            }
        }
        Command::Fixtures { config, p, seeds, out_dir } => {
            let cfg = load_config(config.as_deref())?;
            let p = pick_p(&cfg, p)?;
            std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display())).map_err(runtime)?;
            for &seed in &seeds {
                let (model, traj) = simulate(&cfg, p, seed)?;
                write_file(&out_dir.join(format!("model_{seed}.txt")), &model)?;
                write_file(&out_dir.join(format!("traj_{seed}.txt")), &traj)?;
            }
            eprintln!("wrote {} fixture pairs to {}", seeds.len(), out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
