//! Declarative run configuration: one flat TOML table plus `[thresholds]`.

use std::path::Path;

use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub experiment: Option<String>,
    pub d: Option<usize>,
    pub p: Option<u32>,
    pub omega: Option<i32>,
    pub sigma: Option<f64>,
    pub rho: Option<f64>,
    pub eps: Option<f64>,
    pub eta: Option<f64>,
    pub cutoff_radius: Option<f64>,
    pub hbar_list: Option<Vec<f64>>,
    pub grid: Option<(usize, f64)>,
    pub dt: Option<f64>,
    pub s_star: Option<f64>,
    pub branch: Option<String>,
    pub workers: Option<usize>,
    pub profile: Option<String>,
    pub amplitude: Option<f64>,
    pub h: Option<f64>,
    pub h_list: Option<Vec<f64>>,
    pub orders: Option<Vec<usize>>,
    pub order: Option<usize>,
    pub s_end: Option<f64>,
    pub record_every: Option<usize>,
    pub seed: Option<u64>,
    pub count: Option<usize>,
    pub time_samples: Option<usize>,
    pub s0: Option<f64>,
    pub l: Option<f64>,
    pub b: Option<f64>,
    pub theta: Option<f64>,
    pub tau_samples: Option<usize>,
    pub strip_samples: Option<usize>,
    pub x_window: Option<f64>,
    pub resolution_guard: Option<f64>,
    pub thresholds: Option<Thresholds>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub slope_t0: Option<f64>,
    pub slope_th: Option<f64>,
    pub slope: Option<f64>,
    pub hplus_ratio: Option<f64>,
    pub separation: Option<f64>,
    pub isolation: Option<f64>,
    pub taylor: Option<f64>,
    pub bulk_fraction: Option<f64>,
}

impl Config {
    pub fn thresholds(&self) -> Thresholds {
        self.thresholds.clone().unwrap_or_default()
    }
}

/// `(key, type, used by, description)` for every accepted key.
pub const KEY_DOCS: &[(&str, &str, &str, &str)] = &[
    ("experiment", "string", "all", "optional; must match the subcommand when present"),
    ("d", "integer 1-3", "all", "spatial dimension"),
    ("p", "odd integer >= 3", "all", "nonlinearity power"),
    ("omega", "+1 | -1", "all", "defocusing (+1) or focusing (-1)"),
    ("sigma", "float", "thm2", "data regularity index"),
    ("rho", "float", "thm2", "observation regularity index"),
    ("eps", "float", "thm1, thm2, phase", "exponent margin epsilon"),
    ("eta", "float in (0,1)", "thm1, phase", "cutoff exponent"),
    ("cutoff_radius", "float", "thm1, phase", "cutoff support radius r"),
    ("hbar_list", "list of floats", "thm1, thm2, phase", "strictly decreasing hbar values, at least 4"),
    ("grid", "[n, L]", "all", "points per axis and box half-width"),
    ("dt", "float", "all", "time step (upper bound where a stability budget applies)"),
    ("s_star", "float", "thm2", "semiclassical observation time"),
    ("branch", "\"upper\" | \"lower\"", "thm2", "observation-time branch"),
    ("workers", "integer", "all", "worker threads; NLSWKB_WORKERS overrides"),
    ("profile", "\"gaussian\" | \"constant\"", "wkb, solve", "initial amplitude profile"),
    ("amplitude", "float", "wkb, solve", "profile amplitude"),
    ("h", "float", "solve", "semiclassical parameter"),
    ("h_list", "list of floats", "wkb", "values of h for the residual sweep"),
    ("orders", "list of integers", "wkb", "truncation orders n of the assembled ansatz"),
    ("order", "integer", "wkb", "closure order J of the hierarchy (default max(orders)+1)"),
    ("s_end", "float", "wkb, solve", "final semiclassical time"),
    ("record_every", "integer", "solve", "record every k-th step"),
    ("seed", "integer", "norms", "corpus RNG seed"),
    ("count", "integer", "norms", "number of corpus symbols"),
    ("time_samples", "integer", "norms", "time samples per symbol on [0, s0]"),
    ("s0", "float", "norms", "majorant time radius"),
    ("l", "float in (0, 1/2)", "norms", "strip half-width"),
    ("b", "float", "norms", "symbol growth base B"),
    ("theta", "float in [0,1]", "norms", "norm exponent theta"),
    ("tau_samples", "integer", "norms", "samples of the tau sup"),
    ("strip_samples", "odd integer", "norms", "strip shifts per axis"),
    ("x_window", "float in (0,1]", "norms", "fraction of the box used for the Re z sup"),
    ("resolution_guard", "float", "phase", "hierarchy spectral abort threshold"),
    ("thresholds.slope_t0", "float", "thm2", "tolerance of the t=0 slope"),
    ("thresholds.slope_th", "float", "thm2", "tolerance of the t_h slope"),
    ("thresholds.slope", "float", "thm1", "tolerance of the difference-norm slopes"),
    ("thresholds.hplus_ratio", "float", "thm1", "max/min bound on H+(u0)"),
    ("thresholds.separation", "float", "thm1", "separation as a fraction of ||u0||_{L^{p+1}}"),
    ("thresholds.isolation", "float", "thm1", "modulus gap bound in units of delta_h max|v|"),
    ("thresholds.taylor", "float", "phase", "relative error bound of the Taylor phase formula"),
    ("thresholds.bulk_fraction", "float", "phase", "bulk region threshold on (a0)^{p-1}"),
];

pub fn key_table() -> String {
    let mut out = String::from("Config keys (TOML):\n");
    for (k, t, u, d) in KEY_DOCS {
        out.push_str(&format!("  {k:<24} {t:<26} [{u}] {d}\n"));
    }
    out
}

pub fn schema_json() -> serde_json::Value {
    let props: serde_json::Map<String, serde_json::Value> = KEY_DOCS
        .iter()
        .map(|(k, t, u, d)| (k.to_string(), serde_json::json!({ "type": t, "used_by": u, "description": d })))
        .collect();
    serde_json::json!({ "format": "toml", "unknown_keys": "rejected", "keys": props })
}

/// Reads and parses a config file, returning it with its raw bytes.
pub fn load(path: &Path) -> Result<(Config, Vec<u8>), CliError> {
    let raw = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::config("config-not-found", path.display().to_string())
        } else {
            CliError::config("config-unreadable", e.to_string())
        }
    })?;
    let text = std::str::from_utf8(&raw).map_err(|e| CliError::config("config-parse", e.to_string()))?;
    let cfg: Config = toml::from_str(text).map_err(|e| CliError::config("config-parse", e.message().to_string()))?;
    Ok((cfg, raw))
}
