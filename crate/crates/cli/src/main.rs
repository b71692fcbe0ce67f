//! `nlswkb`: one binary driving the laboratory from a TOML config.
//!
//! Exit codes: 0 success, 1 a verdict failed, 2 config or validation error,
//! 3 runtime abort. Errors print one `reason=<tag>` line on stderr.

mod config;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nlswkb::experiments::{
    self, gaussian_profile, Branch, CutoffSpec, ExperimentError, ExperimentReport, HbarSequence, PhaseConfig,
    Thm1Config, Thm2Config,
};
use nlswkb::solver::{self, SolveConfig, SolverError};
use nlswkb::symbolcalc::{corpus_checks, symbol_corpus, MajorantParams};
use nlswkb::wkb::{self, HierarchyConfig, WkbError, WkbState};
use nlswkb::{report, Field, GridSpec};

use config::Config;
use manifest::{config_hash, RunManifest};

#[derive(Debug)]
pub struct CliError {
    code: u8,
    reason: String,
    detail: String,
}

impl CliError {
    pub fn config(reason: &str, detail: impl Into<String>) -> Self {
        Self { code: 2, reason: reason.into(), detail: detail.into() }
    }

    pub fn runtime(reason: &str, detail: impl Into<String>) -> Self {
        Self { code: 3, reason: reason.into(), detail: detail.into() }
    }
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::runtime("output-error", e.to_string())
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match &e {
            ExperimentError::Inadmissible { label, .. } => {
                CliError::config(&format!("inadmissible condition={label}"), e.to_string())
            }
            ExperimentError::Fit(_) => CliError::runtime("fit-failed", e.to_string()),
            _ => CliError::config("config-invalid", e.to_string()),
        }
    }
}

impl From<WkbError> for CliError {
    fn from(e: WkbError) -> Self {
        match e {
            WkbError::BlowUp { .. } | WkbError::Resolution { .. } | WkbError::NonFinite(_) => {
                CliError::runtime("runtime-abort", e.to_string())
            }
            _ => CliError::config("config-invalid", e.to_string()),
        }
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Stability { .. } => CliError::config("stability-budget", e.to_string()),
            SolverError::Resolution(_) => CliError::config("under-resolved", e.to_string()),
            _ => CliError::config("config-invalid", e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "nlswkb", version, about = "Semiclassical NLS laboratory", after_long_help = config::key_table())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file.
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the WKB hierarchy and write residual curves.
    #[command(after_long_help = config::key_table())]
    Wkb(RunArgs),
    /// Run the split-step solver and write conserved quantities.
    #[command(after_long_help = config::key_table())]
    Solve(RunArgs),
    /// Energy-space instability sweep.
    #[command(after_long_help = config::key_table())]
    Thm1(RunArgs),
    /// Norm inflation sweep.
    #[command(after_long_help = config::key_table())]
    Thm2(RunArgs),
    /// Phase mechanism check on the hierarchy.
    #[command(after_long_help = config::key_table())]
    Phase(RunArgs),
    /// Majorant inequality ratios over a seeded symbol corpus.
    #[command(after_long_help = config::key_table())]
    Norms(RunArgs),
    /// Parse and validate a config without running.
    Validate {
        config: PathBuf,
        /// Subcommand to validate for; defaults to the `experiment` key.
        #[arg(long = "for")]
        target: Option<String>,
    },
    /// Print the config schema as JSON.
    Schema,
}

const COMMANDS: [&str; 6] = ["wkb", "solve", "thm1", "thm2", "phase", "norms"];

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Wkb(a) => run("wkb", a),
        Command::Solve(a) => run("solve", a),
        Command::Thm1(a) => run("thm1", a),
        Command::Thm2(a) => run("thm2", a),
        Command::Phase(a) => run("phase", a),
        Command::Norms(a) => run("norms", a),
        Command::Validate { config, target } => validate(config, target.as_deref()),
        Command::Schema => {
            println!("{}", serde_json::to_string_pretty(&config::schema_json()).expect("schema serializes"));
            Ok(true)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: reason={} {}", e.reason, e.detail);
            ExitCode::from(e.code)
        }
    }
}

fn validate(path: &Path, target: Option<&str>) -> Result<bool, CliError> {
    let (cfg, _) = config::load(path)?;
    let cmd = match (target, cfg.experiment.as_deref()) {
        (Some(t), _) => t.to_string(),
        (None, Some(e)) => e.to_string(),
        (None, None) => return Err(CliError::config("config-invalid", "no --for and no experiment key")),
    };
    check_experiment(&cfg, &cmd)?;
    build(&cmd, &cfg)?;
    println!("ok {cmd}");
    Ok(true)
}

fn check_experiment(cfg: &Config, cmd: &str) -> Result<(), CliError> {
    if !COMMANDS.contains(&cmd) {
        return Err(CliError::config("unknown-experiment", cmd.to_string()));
    }
    match cfg.experiment.as_deref() {
        Some(e) if e != cmd => {
            Err(CliError::config("experiment-mismatch", format!("config is for {e}, subcommand is {cmd}")))
        }
        _ => Ok(()),
    }
}

fn setup_workers(cfg: &Config) -> Result<(), CliError> {
    let n = match std::env::var("NLSWKB_WORKERS") {
        Ok(v) => Some(
            v.parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| CliError::config("workers-invalid", format!("NLSWKB_WORKERS = {v}")))?,
        ),
        Err(_) => cfg.workers,
    };
    if n == Some(0) {
        return Err(CliError::config("workers-invalid", "workers must be positive"));
    }
    if let Some(n) = n {
        // A second init in the same process is harmless; keep the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn run(cmd: &str, args: &RunArgs) -> Result<bool, CliError> {
    let (cfg, raw) = config::load(&args.config)?;
    check_experiment(&cfg, cmd)?;
    setup_workers(&cfg)?;
    let plan = build(cmd, &cfg)?;
    let hash = config_hash(&raw);
    fs::create_dir_all(&args.out).map_err(io_err)?;
    let mut m = RunManifest::new(cmd, &hash);
    let result = plan.execute(&args.out, &hash, &mut m);
    match &result {
        Ok(pass) => m.task(cmd, if *pass { "pass" } else { "fail" }),
        Err(e) => m.task(cmd, &format!("error: {}", e.reason)),
    }
    m.write(&args.out).map_err(io_err)?;
    result
}

enum Plan {
    Wkb(WkbPlan),
    Solve(Box<SolvePlan>),
    Thm1(Thm1Config),
    Thm2(Thm2Config),
    Phase(PhaseConfig),
    Norms(NormsPlan),
}

struct WkbPlan {
    state0: WkbState,
    hier: HierarchyConfig,
    s_end: f64,
    h_list: Vec<f64>,
    orders: Vec<usize>,
}

struct SolvePlan {
    v0: Field,
    cfg: SolveConfig,
}

struct NormsPlan {
    seed: u64,
    count: usize,
    time_samples: usize,
    grid: GridSpec,
    mp: MajorantParams,
}

fn default_grid(cmd: &str, d: usize) -> (usize, f64) {
    match (cmd, d) {
        ("phase", 3) => (24, 4.0),
        ("thm1" | "thm2", 3) => (96, 6.0),
        ("norms", _) | ("thm1" | "thm2" | "phase", 1) => (128, 8.0),
        (_, 1) => (1024, 15.0),
        (_, 2) => (64, 8.0),
        _ => (32, 6.0),
    }
}

fn grid_of(cfg: &Config, cmd: &str, d: usize) -> Result<GridSpec, CliError> {
    let (n, l) = cfg.grid.unwrap_or_else(|| default_grid(cmd, d));
    GridSpec::new(d, n, l).map_err(|e| CliError::config("config-invalid", format!("grid: {e}")))
}

fn hbar_of(cfg: &Config) -> Result<HbarSequence, CliError> {
    match &cfg.hbar_list {
        Some(v) => Ok(HbarSequence::new(v.clone())?),
        None => Ok(HbarSequence::default()),
    }
}

fn profile(cfg: &Config, spec: GridSpec) -> Result<Field, CliError> {
    let amp = cfg.amplitude.unwrap_or(1.0);
    let base = match cfg.profile.as_deref().unwrap_or("gaussian") {
        "gaussian" => gaussian_profile(spec),
        "constant" => Field::from_real_fn(spec, |_| 1.0),
        other => return Err(CliError::config("config-invalid", format!("unknown profile {other:?}"))),
    };
    Ok(base.map(|v| v * amp))
}

fn omega_of(cfg: &Config) -> Result<i32, CliError> {
    let w = cfg.omega.unwrap_or(1);
    if w == 1 || w == -1 {
        Ok(w)
    } else {
        Err(CliError::config("config-invalid", format!("omega = {w} must be +1 or -1")))
    }
}

fn build(cmd: &str, cfg: &Config) -> Result<Plan, CliError> {
    let th = cfg.thresholds();
    match cmd {
        "wkb" => {
            let d = cfg.d.unwrap_or(1);
            let spec = grid_of(cfg, cmd, d)?;
            let orders = cfg.orders.clone().unwrap_or_else(|| vec![0, 1, 2, 3]);
            let n_max = orders.iter().copied().max().unwrap_or(0);
            let j = cfg.order.unwrap_or(n_max + 1);
            if n_max > j {
                return Err(CliError::config("config-invalid", format!("orders exceed the closure order {j}")));
            }
            let s_end = cfg.s_end.unwrap_or(0.1);
            let hier = HierarchyConfig {
                dt: cfg.dt.unwrap_or(1e-3),
                s_max: s_end.max(HierarchyConfig::default().s_max),
                resolution_guard: cfg.resolution_guard,
                ..HierarchyConfig::default()
            };
            hier.validate()?;
            let h_list = cfg.h_list.clone().unwrap_or_else(|| vec![0.2, 0.1, 0.05, 0.025]);
            if h_list.is_empty() || h_list.iter().any(|h| !(*h > 0.0)) {
                return Err(CliError::config("config-invalid", "h_list must hold positive values"));
            }
            let state0 =
                WkbState::leading(Field::zeros(spec), profile(cfg, spec)?, j, cfg.p.unwrap_or(7), omega_of(cfg)? as f64)?;
            Ok(Plan::Wkb(WkbPlan { state0, hier, s_end, h_list, orders }))
        }
        "solve" => {
            let d = cfg.d.unwrap_or(1);
            let spec = grid_of(cfg, cmd, d)?;
            let sc = SolveConfig::new(
                cfg.h.unwrap_or(0.1),
                cfg.p.unwrap_or(7),
                omega_of(cfg)?,
                cfg.dt.unwrap_or(1e-3),
                cfg.s_end.unwrap_or(0.3),
                cfg.record_every.unwrap_or(10),
            )?;
            let v0 = profile(cfg, spec)?;
            sc.check(&v0)?;
            Ok(Plan::Solve(Box::new(SolvePlan { v0, cfg: sc })))
        }
        "thm1" => {
            let base = Thm1Config::default();
            let d = cfg.d.unwrap_or(base.d);
            let c = Thm1Config {
                d,
                p: cfg.p.unwrap_or(base.p),
                omega: omega_of(cfg)?,
                eps: cfg.eps.unwrap_or(base.eps),
                cutoff: CutoffSpec {
                    eta: cfg.eta.unwrap_or(base.cutoff.eta),
                    radius: cfg.cutoff_radius.unwrap_or(base.cutoff.radius),
                },
                grid: grid_of(cfg, cmd, d)?,
                dt: cfg.dt.unwrap_or(base.dt),
                hbar: hbar_of(cfg)?,
                hplus_ratio_max: th.hplus_ratio.unwrap_or(base.hplus_ratio_max),
                separation_fraction: th.separation.unwrap_or(base.separation_fraction),
                isolation_factor: th.isolation.unwrap_or(base.isolation_factor),
                slope_tolerance: th.slope.unwrap_or(base.slope_tolerance),
                ..base
            };
            c.validate()?;
            Ok(Plan::Thm1(c))
        }
        "thm2" => {
            let base = Thm2Config::default();
            let d = cfg.d.unwrap_or(base.d);
            let branch = match cfg.branch.as_deref().unwrap_or("upper") {
                "upper" => Branch::Upper,
                "lower" => Branch::Lower,
                other => return Err(CliError::config("config-invalid", format!("unknown branch {other:?}"))),
            };
            let c = Thm2Config {
                d,
                p: cfg.p.unwrap_or(base.p),
                omega: omega_of(cfg)?,
                sigma: cfg.sigma.unwrap_or(base.sigma),
                rho: cfg.rho.unwrap_or(base.rho),
                eps: cfg.eps.unwrap_or(base.eps),
                grid: grid_of(cfg, cmd, d)?,
                dt: cfg.dt.unwrap_or(base.dt),
                s_star: cfg.s_star.unwrap_or(base.s_star),
                hbar: hbar_of(cfg)?,
                branch,
                tolerance_t0: th.slope_t0.unwrap_or(base.tolerance_t0),
                tolerance_th: th.slope_th.unwrap_or(base.tolerance_th),
            };
            c.validate()?;
            Ok(Plan::Thm2(c))
        }
        "phase" => {
            let base = PhaseConfig::default();
            let d = cfg.d.unwrap_or(base.d);
            let c = PhaseConfig {
                d,
                p: cfg.p.unwrap_or(base.p),
                omega: omega_of(cfg)?,
                eps: cfg.eps.unwrap_or(base.eps),
                cutoff: CutoffSpec {
                    eta: cfg.eta.unwrap_or(base.cutoff.eta),
                    radius: cfg.cutoff_radius.unwrap_or(base.cutoff.radius),
                },
                grid: grid_of(cfg, cmd, d)?,
                dt: cfg.dt.unwrap_or(base.dt),
                order: cfg.order.unwrap_or(base.order),
                hbar: hbar_of(cfg)?,
                taylor_tolerance: th.taylor.unwrap_or(base.taylor_tolerance),
                bulk_fraction: th.bulk_fraction.unwrap_or(base.bulk_fraction),
                resolution_guard: cfg.resolution_guard.or(base.resolution_guard),
                zero_perturbation: false,
            };
            c.validate()?;
            Ok(Plan::Phase(c))
        }
        "norms" => {
            let d = cfg.d.unwrap_or(1);
            let base = MajorantParams::default();
            let mp = MajorantParams {
                s0: cfg.s0.unwrap_or(base.s0),
                l: cfg.l.unwrap_or(base.l),
                b: cfg.b.unwrap_or(base.b),
                eps: cfg.eps.unwrap_or(base.eps),
                theta: cfg.theta.unwrap_or(base.theta),
                tau_samples: cfg.tau_samples.unwrap_or(base.tau_samples),
                strip_samples: cfg.strip_samples.unwrap_or(base.strip_samples),
                x_window: cfg.x_window.unwrap_or(base.x_window),
            };
            mp.validate().map_err(|e| CliError::config("config-invalid", e.to_string()))?;
            let time_samples = cfg.time_samples.unwrap_or(17);
            let count = cfg.count.unwrap_or(100);
            if time_samples < 2 || count == 0 {
                return Err(CliError::config("config-invalid", "time_samples >= 2 and count >= 1 required"));
            }
            Ok(Plan::Norms(NormsPlan { seed: cfg.seed.unwrap_or(1), count, time_samples, grid: grid_of(cfg, cmd, d)?, mp }))
        }
        other => Err(CliError::config("unknown-experiment", other.to_string())),
    }
}

fn write(dir: &Path, name: &str, text: &str, m: &mut RunManifest) -> Result<(), CliError> {
    fs::write(dir.join(name), text).map_err(io_err)?;
    m.outputs.push(PathBuf::from(name));
    Ok(())
}

fn write_experiment(dir: &Path, hash: &str, r: &ExperimentReport, m: &mut RunManifest) -> Result<bool, CliError> {
    write(dir, "report.json", &report::to_json(r, hash).map_err(|e| CliError::runtime("output-error", e.to_string()))?, m)?;
    write(dir, "table.csv", &report::to_csv(r, hash), m)?;
    write(dir, "plot.svg", &report::to_svg(r, hash), m)?;
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", report::verdict_summary(r));
    Ok(r.all_pass())
}

impl Plan {
    fn execute(self, dir: &Path, hash: &str, m: &mut RunManifest) -> Result<bool, CliError> {
        let meta = serde_json::json!({ "config_hash": hash });
        match self {
            Plan::Wkb(p) => {
                let traj = wkb::integrate_wkb(&p.state0, p.s_end, &p.hier)?;
                let mut csv = format!("# config_hash={hash}\nh,n,s,residual\n");
                for &h in &p.h_list {
                    for &n in &p.orders {
                        for (s, r) in wkb::wkb_residual(&traj, h, n)? {
                            csv.push_str(&format!("{h:e},{n},{s:e},{r:e}\n"));
                        }
                    }
                }
                write(dir, "residual.csv", &csv, m)?;
                let path = wkb::export_trajectory(&dir.join("trajectory"), &traj, meta).map_err(io_err)?;
                m.outputs.push(path.strip_prefix(dir).unwrap_or(&path).to_path_buf());
                Ok(true)
            }
            Plan::Solve(p) => {
                let traj = solver::split_step_solve(&p.v0, &p.cfg)?;
                let mut csv = format!("# config_hash={hash}\ns,mass,energy\n");
                for (s, v) in traj.times.iter().zip(&traj.slices) {
                    let (mass, energy) = solver::conserved_quantities(v, &p.cfg);
                    csv.push_str(&format!("{s:e},{mass:e},{energy:e}\n"));
                }
                write(dir, "conserved.csv", &csv, m)?;
                let path = solver::export_trajectory(&dir.join("trajectory"), &traj, &p.cfg, meta).map_err(io_err)?;
                m.outputs.push(path.strip_prefix(dir).unwrap_or(&path).to_path_buf());
                if let Some(s) = traj.stopped_at {
                    return Err(CliError::runtime("runtime-abort", format!("non-finite state at s = {s}")));
                }
                Ok(true)
            }
            Plan::Thm1(c) => write_experiment(dir, hash, &experiments::thm1_run(&c)?, m),
            Plan::Thm2(c) => write_experiment(dir, hash, &experiments::thm2_run(&c)?, m),
            Plan::Phase(c) => write_experiment(dir, hash, &experiments::phase_divergence_check(&c)?, m),
            Plan::Norms(p) => {
                let corpus = symbol_corpus(p.seed, p.count, p.mp.s0);
                let r = corpus_checks(&corpus, p.seed, p.grid, &p.mp, p.time_samples)
                    .map_err(|e| CliError::runtime("runtime-abort", e.to_string()))?;
                let json = report::to_json(&r, hash).map_err(|e| CliError::runtime("output-error", e.to_string()))?;
                write(dir, "report.json", &json, m)?;
                for (name, s) in &r.inequalities {
                    println!("{name}: ratio_max {:.4e} ratio_mean {:.4e} vacuous {}", s.ratio_max, s.ratio_mean, s.vacuous);
                }
                Ok(true)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nlswkb::C64;

    #[test]
    fn key_docs_cover_every_config_field() {
        for key in [
            "experiment", "d", "p", "omega", "sigma", "rho", "eps", "eta", "cutoff_radius", "hbar_list", "grid", "dt",
            "s_star", "branch", "workers", "profile", "amplitude", "h", "h_list", "orders", "order", "s_end",
            "record_every", "seed", "count", "time_samples", "s0", "l", "b", "theta", "tau_samples", "strip_samples",
            "x_window", "resolution_guard",
        ] {
            assert!(config::KEY_DOCS.iter().any(|(k, ..)| *k == key), "{key} undocumented");
            let doc = format!("{key} = 1");
            let parsed: Result<Config, _> = toml::from_str(&doc);
            if let Err(e) = parsed {
                assert!(!e.message().contains("unknown field"), "{key} rejected as unknown");
            }
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = toml::from_str::<Config>("bogus = 1").unwrap_err();
        assert!(e.message().contains("unknown field"));
        let e = toml::from_str::<Config>("[thresholds]\nbogus = 1").unwrap_err();
        assert!(e.message().contains("unknown field"));
    }

    #[test]
    fn grid_accepts_mixed_array() {
        let c: Config = toml::from_str("grid = [64, 8.0]").unwrap();
        assert_eq!(c.grid, Some((64, 8.0)));
    }

    #[test]
    fn inadmissible_reason_carries_label() {
        let e: CliError = ExperimentError::Inadmissible { label: "(51)", detail: String::new() }.into();
        assert_eq!(e.code, 2);
        assert!(e.reason.contains("(51)"));
    }

    #[test]
    fn constant_profile_is_flat() {
        let spec = GridSpec::new(1, 16, 4.0).unwrap();
        let cfg = Config { profile: Some("constant".into()), amplitude: Some(0.5), ..Config::default() };
        let f = profile(&cfg, spec).unwrap();
        assert!(f.values().iter().all(|v| (*v - C64::new(0.5, 0.0)).norm() < 1e-15));
    }
}
