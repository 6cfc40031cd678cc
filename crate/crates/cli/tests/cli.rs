use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use plr_bvm::ExperimentConfig;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_plr-bvm"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin()
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .env_remove("PLR_BVM_THREADS")
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn bundled_configs_match_presets() {
    let dir = tempfile::tempdir().unwrap();
    for (file, preset) in [
        ("smooth.toml", "smooth"),
        ("rough_m02.toml", "rough-m02"),
        ("misspecified.toml", "misspecified"),
    ] {
        let path = configs().join(file);
        let from_file = stdout_json(&run(
            &["--config", path.to_str().unwrap(), "validate"],
            dir.path(),
        ));
        let expected = ExperimentConfig::preset(preset).unwrap();
        assert_eq!(from_file["config_hash"], expected.hash().unwrap(), "{file}");
    }
}

#[test]
fn overrides_change_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let base = stdout_json(&run(&["validate"], dir.path()));
    let changed = stdout_json(&run(&["--set", "chain.n_iter=900", "validate"], dir.path()));
    assert_ne!(base["config_hash"], changed["config_hash"]);
    assert_eq!(changed["config"]["chain"]["n_iter"], 900);
    let seeded = stdout_json(&run(&["--seed", "5", "validate"], dir.path()));
    for key in [("dgp", "seed"), ("chain", "seed"), ("study", "master_seed")] {
        assert_eq!(seeded["config"][key.0][key.1], 5);
    }
}

#[test]
fn invalid_invocations_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["--preset", "nope", "validate"],
        vec!["--set", "chain.burn_in=5000", "validate"],
        vec!["--set", "chain.unknown=1", "validate"],
        vec!["--set", "study.replications=10", "coverage"],
        vec![
            "--set",
            "chain.n_iter=300",
            "--set",
            "chain.burn_in=100",
            "--set",
            "dgp.n=30",
            "verify-bvm",
        ],
        vec!["frobnicate"],
    ] {
        let out = run(&args, dir.path());
        assert_eq!(
            out.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "y,x1,w1\n1,2,1.5\n0,1,0.2\n").unwrap();
    let out = run(&["fit", "--data", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_then_fit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let small = [
        "--set",
        "dgp.n=60",
        "--set",
        "chain.n_iter=300",
        "--set",
        "chain.burn_in=100",
    ];
    let mut args = small.to_vec();
    args.push("simulate");
    let sim = stdout_json(&run(&args, dir.path()));
    let data = sim["data"].as_str().unwrap().to_string();
    assert!(data.ends_with(".csv"));
    let rows = std::fs::read_to_string(&data).unwrap().lines().count();
    assert_eq!(rows, 61);

    let mut args = small.to_vec();
    args.extend(["fit", "--data", &data]);
    let fit = stdout_json(&run(&args, dir.path()));
    let interval = fit["beta"][0]["interval"].as_array().unwrap();
    assert!(interval[0].as_f64().unwrap() < interval[1].as_f64().unwrap());
    let draws = std::fs::read_to_string(fit["draws"].as_str().unwrap()).unwrap();
    assert_eq!(draws.lines().count(), 201);
    let hash = fit["config_hash"].as_str().unwrap();
    assert!(fit["draws"].as_str().unwrap().contains(hash));

    // the same invocation reproduces the draws
    let again = stdout_json(&run(&args, dir.path()));
    assert_eq!(again["beta"], fit["beta"]);
}

#[test]
fn verify_bvm_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout_json(&run(
        &[
            "--set",
            "dgp.n=80",
            "--set",
            "chain.n_iter=700",
            "--set",
            "chain.burn_in=100",
            "verify-bvm",
        ],
        dir.path(),
    ));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(out["report"].as_str().unwrap()).unwrap())
            .unwrap();
    assert_eq!(report["bvm"]["draws"], 600);
    assert!(report["empirical_process"]["g1_sup"].as_f64().unwrap() >= 0.0);
    let ks = out["ks"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&ks));
}

#[test]
fn oracle_coverage_runs_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout_json(&run(
        &[
            "--set",
            "dgp.n=50",
            "--set",
            "study.replications=60",
            "--threads",
            "1",
            "coverage",
            "--oracle",
        ],
        dir.path(),
    ));
    assert_eq!(out["sampler"], "oracle-reference");
    let cov = out["empirical"].as_f64().unwrap();
    assert!((0.7..=1.0).contains(&cov), "{cov}");
    let csv = std::fs::read_to_string(out["records"].as_str().unwrap()).unwrap();
    assert!(csv.lines().count() > 60);
}
