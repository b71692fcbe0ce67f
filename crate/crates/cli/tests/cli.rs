use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nlswkb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlswkb")).args(args).env_remove("NLSWKB_WORKERS").output().expect("binary runs")
}

fn run_with(cmd: &str, dir: &Path, toml: &str) -> Output {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, toml).unwrap();
    let out = dir.join("out");
    nlswkb(&[cmd, cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn residuals(dir: &Path) -> Vec<(f64, usize, f64, f64)> {
    let text = fs::read_to_string(dir.join("out/residual.csv")).unwrap();
    text.lines()
        .skip(2)
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            (c[0].parse().unwrap(), c[1].parse().unwrap(), c[2].parse().unwrap(), c[3].parse().unwrap())
        })
        .collect()
}

#[test]
fn missing_config_exits_2() {
    let o = nlswkb(&["wkb", "/nonexistent/run.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("reason=config-not-found"), "{}", stderr(&o));
}

#[test]
fn unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with("wkb", dir.path(), "bogus = 3\n");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("reason=config-parse"), "{}", stderr(&o));
}

#[test]
fn experiment_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with("wkb", dir.path(), "experiment = \"thm2\"\n");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("reason=experiment-mismatch"));
}

#[test]
fn inadmissible_thm2_cites_condition() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with("thm2", dir.path(), "sigma = 0.5\nrho = 0.1\neps = 0.05\n");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("(51)"), "{}", stderr(&o));
    let o = run_with("thm2", dir.path(), "sigma = 0.5\nrho = 0.3\neps = 0.0\n");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("(50)"), "{}", stderr(&o));
}

#[test]
fn stability_budget_violation_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with("solve", dir.path(), "h = 0.1\ndt = 0.5\namplitude = 3.0\n");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("reason=stability-budget"), "{}", stderr(&o));
}

#[test]
fn validate_and_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("v.toml");
    fs::write(&cfg, "experiment = \"thm2\"\nsigma = 0.5\nrho = 0.3\neps = 0.05\n").unwrap();
    let o = nlswkb(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = nlswkb(&["schema"]);
    assert_eq!(o.status.code(), Some(0));
    let schema: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for key in ["hbar_list", "grid", "thresholds.slope_th", "workers"] {
        assert!(schema["keys"].get(key).is_some(), "{key}");
    }
    let help = nlswkb(&["thm1", "--help"]);
    assert!(String::from_utf8_lossy(&help.stdout).contains("hbar_list"));
}

#[test]
fn constant_data_residual_vanishes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(
        "wkb",
        dir.path(),
        "profile = \"constant\"\namplitude = 0.8\ngrid = [32, 4.0]\nh_list = [0.1, 0.05]\norders = [0, 1, 2]\n",
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = residuals(dir.path());
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.3 < 1e-8), "max {}", rows.iter().map(|r| r.3).fold(0.0, f64::max));
}

#[test]
fn gaussian_residuals_decrease_with_order() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with("wkb", dir.path(), "grid = [1024, 15.0]\nh_list = [0.1, 0.05, 0.025]\norders = [0, 1, 2, 3]\n");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = residuals(dir.path());
    for h in [0.1, 0.05, 0.025] {
        let sup: Vec<f64> = (0..4)
            .map(|n| rows.iter().filter(|r| r.0 == h && r.1 == n).map(|r| r.3).fold(0.0, f64::max))
            .collect();
        assert!(sup.windows(2).all(|w| w[1] < w[0]), "h = {h}: {sup:?}");
    }
}

#[test]
fn outputs_carry_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with("solve", dir.path(), "grid = [64, 8.0]\ns_end = 0.05\nrecord_every = 25\n");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("out");
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let hash = manifest["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    for p in manifest["outputs"].as_array().unwrap() {
        let text = fs::read_to_string(out.join(p.as_str().unwrap())).unwrap();
        assert!(text.contains(hash), "{p}");
    }
    assert_eq!(manifest["tasks"][0]["status"], "pass");
}

#[test]
fn norms_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let toml = "seed = 11\ncount = 6\ngrid = [64, 8.0]\ntime_samples = 9\ntau_samples = 8\nstrip_samples = 5\n";
    let o = run_with("norms", dir.path(), toml);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let first = fs::read(dir.path().join("out/report.json")).unwrap();
    let o = run_with("norms", dir.path(), toml);
    assert_eq!(o.status.code(), Some(0));
    let second = fs::read(dir.path().join("out/report.json")).unwrap();
    assert_eq!(first, second);
    let report: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(report["report"]["seed"], 11);
}

#[test]
fn thm2_fast_variant_emits_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(
        "thm2",
        dir.path(),
        "d = 1\nsigma = 0.05\nrho = 0.05\neps = 0.005\ngrid = [128, 8.0]\n[thresholds]\nslope_t0 = 0.02\nslope_th = 0.02\n",
    );
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    for name in ["slope_t0", "slope_th"] {
        assert!(stdout.lines().any(|l| l.contains(name) && (l.starts_with("PASS") || l.starts_with("FAIL"))), "{stdout}");
    }
    let first = fs::read(dir.path().join("out/table.csv")).unwrap();
    let svg = fs::read_to_string(dir.path().join("out/plot.svg")).unwrap();
    assert!(svg.contains("<metadata>") && svg.contains("norm_t0"));
    run_with(
        "thm2",
        dir.path(),
        "d = 1\nsigma = 0.05\nrho = 0.05\neps = 0.005\ngrid = [128, 8.0]\n[thresholds]\nslope_t0 = 0.02\nslope_th = 0.02\n",
    );
    assert_eq!(first, fs::read(dir.path().join("out/table.csv")).unwrap());
}

#[test]
fn thm1_reports_four_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with("thm1", dir.path(), "grid = [16, 6.0]\nhbar_list = [0.45, 0.4, 0.35, 0.3]\n");
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    for name in ["hplus_bounded", "difference_decreasing", "separation", "isolation"] {
        assert!(stdout.lines().any(|l| l.contains(&format!(" {name}:"))), "{name}: {stdout}");
    }
}
