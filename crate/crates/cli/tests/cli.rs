use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sparse_rks::bench::ExperimentConfig;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparse-rks")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn shipped_configs_parse() {
    for name in ["paper_small.cfg", "pt.cfg", "paper_full.cfg", "smoke.cfg"] {
        ExperimentConfig::from_file(&configs().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn unknown_flag_is_rejected_with_usage() {
    let out = run(&["benchmark", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("Usage"), "{stderr}");
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "[experiment]\nbogus = 1\n").unwrap();
    assert_eq!(run(&["benchmark", "--config", path(&bad)]).status.code(), Some(1));
    let missing = dir.path().join("missing.cfg");
    assert_eq!(run(&["phase", "--config", path(&missing)]).status.code(), Some(1));
}

#[test]
fn benchmark_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("smoke.cfg");
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for out in [&a, &b] {
        let res = run(&["benchmark", "--config", path(&cfg), "--out", path(out)]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert!(text.starts_with("algo,p,n,m,K,s,snr_db,seed,nmse_state,nmse_input,"));
    // 3 algorithms x 2 dimensions x (3 trials + average) plus the header.
    assert_eq!(text.lines().count(), 1 + 3 * 2 * 4);
}

#[test]
fn phase_writes_one_row_per_algorithm_and_sparsity() {
    let res = run(&["phase", "--config", path(&configs().join("smoke.cfg"))]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = String::from_utf8(res.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("algo,s,p_min,success_rate,reachable"));
    assert_eq!(lines.count(), 3 * 2);
}

#[test]
fn simulate_then_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("smoke.cfg");
    let (model, traj, est) = (dir.path().join("model.txt"), dir.path().join("traj.txt"), dir.path().join("est.csv"));
    let res = run(&["simulate", "--config", path(&cfg), "--seed", "4", "--model-out", path(&model), "--traj-out", path(&traj)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let res = run(&["estimate", "--algo", "sbl", "--model", path(&model), "--meas", path(&traj), "--out", path(&est)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = std::fs::read_to_string(&est).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert_eq!(header.split(',').count(), 1 + 4 + 10);
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.split(',').count() == 15));

    let res = run(&["estimate", "--algo", "nonsense", "--model", path(&model), "--meas", path(&traj), "--out", path(&est)]);
    assert_eq!(res.status.code(), Some(1));

    // Fewer measurements than inputs: the smoother without an input prior cannot run.
    let res = run(&["estimate", "--algo", "rks", "--model", path(&model), "--meas", path(&traj), "--out", path(&est)]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn fixtures_writes_a_pair_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fx");
    let res = run(&["fixtures", "--config", path(&configs().join("smoke.cfg")), "--seeds", "5,6", "--out-dir", path(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for name in ["model_5.txt", "traj_5.txt", "model_6.txt", "traj_6.txt"] {
        assert!(out.join(name).exists(), "{name}");
    }
    assert!(std::fs::read_to_string(out.join("model_5.txt")).unwrap().starts_with("HORIZON 1 1\n"));
}
