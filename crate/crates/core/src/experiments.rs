//! Instability experiments: energy-space instability, norm inflation, and the
//! phase mechanism behind both, with log-log exponent fits against the
//! predicted rates.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::{fit_exponent, FitError};
use crate::grid::{lebesgue_norm, top_third_fraction, Field, GridError, GridSpec, C64};
use crate::rescale::{
    critical_indices, energy_space_params, hplus_energy, norm_inflation_params, physical_lebesgue_norm,
    physical_sobolev_norm, Exponents, RescaleError, SemiclassicalParams,
};
use crate::solver::{split_step_solve, SolveConfig, SolverError};
use crate::wkb::{integrate_wkb, HierarchyConfig, WkbError, WkbState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("inadmissible parameters: {label} fails ({detail})")]
    Inadmissible { label: &'static str, detail: String },
    #[error(transparent)]
    Rescale(#[from] RescaleError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Strictly decreasing `ħ` values in `(0, 1)`, at least four.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct HbarSequence(Vec<f64>);

impl HbarSequence {
    pub fn new(values: Vec<f64>) -> Result<Self, ExperimentError> {
        if values.len() < 4 {
            return Err(ExperimentError::Config(format!("hbar list needs >= 4 entries, got {}", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(ExperimentError::Config(format!("hbar = {v} must lie in (0, 1)")));
        }
        if values.windows(2).any(|w| w[1] >= w[0]) {
            return Err(ExperimentError::Config("hbar list must be strictly decreasing".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn smallest(&self) -> f64 {
        *self.0.last().expect("nonempty")
    }

    /// `h = ħ^β` for each entry.
    pub fn h_list(&self, beta: f64) -> Vec<f64> {
        self.0.iter().map(|x| x.powf(beta)).collect()
    }
}

impl Default for HbarSequence {
    fn default() -> Self {
        Self(vec![0.45, 0.40, 0.35, 0.30, 0.25, 0.20])
    }
}

impl TryFrom<Vec<f64>> for HbarSequence {
    type Error = ExperimentError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<HbarSequence> for Vec<f64> {
    fn from(s: HbarSequence) -> Self {
        s.0
    }
}

/// Smooth bump: 1 on `|ξ| ≤ r/2`, `exp(1 − 1/(1−q²))` with `q = 2|ξ|/r − 1`
/// on `r/2 < |ξ| < r`, 0 beyond.
pub fn cutoff(xi: f64, r: f64) -> f64 {
    let a = xi.abs();
    if a <= 0.5 * r {
        1.0
    } else if a >= r {
        0.0
    } else {
        let q = 2.0 * a / r - 1.0;
        (1.0 - 1.0 / (1.0 - q * q)).exp()
    }
}

/// Cutoff settings of [`initial_datum`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub eta: f64,
    pub radius: f64,
}

/// Semiclassical initial datum and the relative mass removed by the cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialDatum {
    pub v: Field,
    pub truncated_mass: f64,
}

impl InitialDatum {
    pub fn warning(&self) -> Option<String> {
        (self.truncated_mass > 1e-8).then(|| format!("cutoff removes a relative mass {:e}", self.truncated_mass))
    }
}

/// `v(0, z) = χ(ħ^{1−η}|z|) a⁰(z)`, or `a⁰` when `cutoff` is `None`.
pub fn initial_datum(a0: &Field, params: &SemiclassicalParams, cutoff_spec: Option<CutoffSpec>) -> Result<InitialDatum, ExperimentError> {
    let Some(c) = cutoff_spec else {
        return Ok(InitialDatum { v: a0.clone(), truncated_mass: 0.0 });
    };
    if !(c.eta > 0.0 && c.eta < 1.0) || !(c.radius > 0.0) {
        return Err(ExperimentError::Config(format!("cutoff needs 0 < eta < 1 and r > 0, got eta = {}, r = {}", c.eta, c.radius)));
    }
    let scale = params.hbar.powf(1.0 - c.eta);
    let spec = *a0.spec();
    let mut chi = vec![0.0; spec.len()];
    spec.for_each_point(|i, x| {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        chi[i] = cutoff(scale * r, c.radius);
    });
    let vals: Vec<C64> = a0.values().iter().zip(&chi).map(|(v, c)| v * *c).collect();
    let total: f64 = a0.values().iter().map(|v| v.norm_sqr()).sum();
    let lost: f64 = a0.values().iter().zip(&chi).map(|(v, c)| (1.0 - c * c) * v.norm_sqr()).sum();
    Ok(InitialDatum {
        v: Field::from_values(spec, vals)?,
        truncated_mass: if total > 0.0 { lost / total } else { 0.0 },
    })
}

/// The profile `a⁰(z) = e^{−|z|²}`.
pub fn gaussian_profile(spec: GridSpec) -> Field {
    Field::from_real_fn(spec, |x| (-x.iter().map(|v| v * v).sum::<f64>()).exp())
}

/// `δ_h = ħ^{εβ} log(1/ħ)`.
pub fn perturbation_size(hbar: f64, beta: f64, eps: f64) -> f64 {
    hbar.powf(eps * beta) * (1.0 / hbar).ln()
}

/// Semiclassical observation time `s_h = h^{1−ε}`.
pub fn observation_time(h: f64, eps: f64) -> f64 {
    h.powf(1.0 - eps)
}

/// Outcome of one `ħ` of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Aborted(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HbarRow {
    pub hbar: f64,
    pub h: f64,
    /// Semiclassical time at which the late-time quantities are measured.
    pub s_obs: f64,
    pub values: BTreeMap<String, f64>,
    pub status: RunStatus,
}

impl HbarRow {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitLine {
    /// Key of the fitted row value.
    pub quantity: String,
    pub slope: f64,
    pub stderr: f64,
    pub predicted: f64,
    pub tolerance: f64,
    /// How the prediction was obtained.
    pub provenance: String,
}

impl FitLine {
    pub fn within_tolerance(&self) -> bool {
        (self.slope - self.predicted).abs() <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub exponents: Exponents,
    pub rows: Vec<HbarRow>,
    pub fits: Vec<FitLine>,
    pub verdicts: Vec<Verdict>,
    pub extras: BTreeMap<String, serde_json::Value>,
    pub warnings: Vec<String>,
}

impl ExperimentReport {
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    pub fn fit(&self, quantity: &str) -> Option<&FitLine> {
        self.fits.iter().find(|f| f.quantity == quantity)
    }

    /// `(ħ, value)` over the rows that carry `key`.
    pub fn series(&self, key: &str) -> Vec<(f64, f64)> {
        self.rows.iter().filter_map(|r| r.get(key).map(|v| (r.hbar, v))).collect()
    }
}

fn fit_line(
    rows: &[HbarRow],
    key: &str,
    predicted: f64,
    tolerance: f64,
    provenance: &str,
) -> Option<FitLine> {
    let pts: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.get(key).map(|v| (r.hbar, v))).collect();
    fit_exponent(&pts).ok().map(|f| FitLine {
        quantity: key.to_string(),
        slope: f.slope,
        stderr: f.stderr,
        predicted,
        tolerance,
        provenance: provenance.to_string(),
    })
}

/// Strictly decreasing as `ħ` decreases along the (decreasing) sequence.
fn strictly_decreasing(vals: &[(f64, f64)]) -> bool {
    vals.windows(2).all(|w| w[1].1 < w[0].1)
}

fn solve_to(v0: &Field, h: f64, p: u32, omega: i32, dt_cap: f64, s_end: f64) -> Result<Field, SolverError> {
    let probe = SolveConfig::new(h, p, omega, dt_cap, s_end, usize::MAX)?;
    let cfg = SolveConfig { dt: probe.admissible_dt(v0), ..probe };
    let traj = split_step_solve(v0, &cfg)?;
    if let Some(s) = traj.stopped_at {
        return Err(SolverError::Config(format!("non-finite state at s = {s}")));
    }
    Ok(traj.last().clone())
}

fn run_sweep<F>(seq: &HbarSequence, f: F) -> Vec<HbarRow>
where
    F: Fn(f64) -> HbarRow + Sync,
{
    seq.values().par_iter().map(|&hb| f(hb)).collect()
}

fn check_grid(grid: &GridSpec, d: usize) -> Result<(), ExperimentError> {
    if grid.d() != d {
        return Err(ExperimentError::Config(format!("grid dimension {} differs from d = {d}", grid.d())));
    }
    Ok(())
}

/// Energy-space instability sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thm1Config {
    pub d: usize,
    pub p: u32,
    pub omega: i32,
    pub eps: f64,
    pub cutoff: CutoffSpec,
    pub grid: GridSpec,
    /// Upper bound on the solver step; the stability budget may shrink it.
    pub dt: f64,
    pub hbar: HbarSequence,
    /// `ν = nu_fraction·εβ` in the `H^{1+ν}` difference norm.
    pub nu_fraction: f64,
    pub hplus_ratio_max: f64,
    pub separation_fraction: f64,
    pub isolation_factor: f64,
    pub slope_tolerance: f64,
    /// Forces `δ_h = 0`.
    pub zero_perturbation: bool,
}

impl Default for Thm1Config {
    fn default() -> Self {
        Self {
            d: 3,
            p: 7,
            omega: 1,
            eps: 0.3,
            cutoff: CutoffSpec { eta: 0.5, radius: 4.0 },
            grid: GridSpec::new(3, 96, 6.0).expect("valid grid"),
            dt: 1e-3,
            hbar: HbarSequence::default(),
            nu_fraction: 0.5,
            hplus_ratio_max: 4.0,
            separation_fraction: 0.25,
            isolation_factor: 3.0,
            slope_tolerance: 0.1,
            zero_perturbation: false,
        }
    }
}

impl Thm1Config {
    pub fn q_list(&self) -> [f64; 3] {
        let q = self.p as f64 + 1.0;
        [q, 2.0 * q, 4.0 * q]
    }

    /// Checks the config without running; returns the exponents.
    pub fn validate(&self) -> Result<Exponents, ExperimentError> {
        check_grid(&self.grid, self.d)?;
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(ExperimentError::Config(format!("eps = {} must lie in (0, 1)", self.eps)));
        }
        if !(self.nu_fraction > 0.0 && self.nu_fraction < 1.0) {
            return Err(ExperimentError::Config("nu_fraction must lie in (0, 1)".into()));
        }
        let e = energy_space_params(self.d, self.p, self.omega)?;
        if !(e.beta > 0.0) {
            return Err(ExperimentError::Config(format!(
                "(d, p) = ({}, {}) is not energy-supercritical: beta = {}",
                self.d, self.p, e.beta
            )));
        }
        Ok(e)
    }
}

fn lq_key(q: f64) -> String {
    format!("diff0_L{q}")
}

pub fn thm1_run(cfg: &Thm1Config) -> Result<ExperimentReport, ExperimentError> {
    let e = cfg.validate()?;
    let a0 = gaussian_profile(cfg.grid);
    let nu = cfg.nu_fraction * cfg.eps * e.beta;
    let qs = cfg.q_list();
    let q_sep = cfg.p as f64 + 1.0;
    let mut warnings = Vec::new();
    let mut data = Vec::new();
    for &hb in cfg.hbar.values() {
        let params = e.with_hbar(hb)?;
        let datum = initial_datum(&a0, &params, Some(cfg.cutoff))?;
        if let Some(w) = datum.warning() {
            warnings.push(format!("hbar = {hb}: {w}"));
        }
        data.push((params, datum.v));
    }
    let rows = run_sweep(&cfg.hbar, |hb| {
        let idx = cfg.hbar.values().iter().position(|x| *x == hb).expect("member");
        let (params, v0) = &data[idx];
        let h = params.h;
        let delta = if cfg.zero_perturbation { 0.0 } else { perturbation_size(hb, e.beta, cfg.eps) };
        let s_h = observation_time(h, cfg.eps);
        let vt0 = v0.scale(C64::new(1.0 + delta, 0.0));
        let mut values = BTreeMap::new();
        values.insert("delta".to_string(), delta);
        values.insert("delta_s_over_h".to_string(), delta * s_h / h);
        values.insert("hplus_u0".to_string(), hplus_energy(v0, params, true).total());
        values.insert("hplus_ut0".to_string(), hplus_energy(&vt0, params, true).total());
        let diff0 = &vt0 - v0;
        values.insert("diff0_H1nu".to_string(), physical_sobolev_norm(&diff0, params, 1.0 + nu));
        for q in qs {
            values.insert(lq_key(q), physical_lebesgue_norm(&diff0, params, q));
        }
        let u0_norm = physical_lebesgue_norm(v0, params, q_sep);
        values.insert("u0_Lp1".to_string(), u0_norm);
        let status = match (
            solve_to(v0, h, cfg.p, cfg.omega, cfg.dt, s_h),
            solve_to(&vt0, h, cfg.p, cfg.omega, cfg.dt, s_h),
        ) {
            (Ok(v), Ok(vt)) => {
                let sep = physical_lebesgue_norm(&(&v - &vt), params, q_sep);
                values.insert("separation".to_string(), sep);
                values.insert("separation_ratio".to_string(), sep / u0_norm);
                let gap = v.abs().max_diff(&vt.abs());
                let scale = delta * v.max_abs();
                values.insert("modulus_gap_ratio".to_string(), if gap == 0.0 { 0.0 } else { gap / scale });
                values.insert("top_third".to_string(), top_third_fraction(&vt));
                RunStatus::Ok
            }
            (Err(err), _) | (_, Err(err)) => RunStatus::Aborted(err.to_string()),
        };
        HbarRow { hbar: hb, h, s_obs: s_h, values, status }
    });

    let d = cfg.d as f64;
    let pred_h = e.gamma + d / 2.0 - (1.0 + nu) + cfg.eps * e.beta;
    let pred_l = e.gamma + d / q_sep + cfg.eps * e.beta;
    let mut fits = Vec::new();
    fits.extend(fit_line(&rows, "diff0_H1nu", pred_h, cfg.slope_tolerance, "gamma + d/2 - (1+nu) + eps*beta, log factor excluded"));
    fits.extend(fit_line(&rows, &lq_key(q_sep), pred_l, cfg.slope_tolerance, "gamma + d/q + eps*beta, log factor excluded"));
    for q in &qs[1..] {
        fits.extend(fit_line(&rows, &lq_key(*q), e.gamma + d / q + cfg.eps * e.beta, cfg.slope_tolerance, "gamma + d/q + eps*beta, log factor excluded"));
    }

    let mut verdicts = Vec::new();
    let hp: Vec<f64> = rows.iter().filter_map(|r| r.get("hplus_u0")).collect();
    let hmax = hp.iter().copied().fold(f64::MIN, f64::max);
    let hmin = hp.iter().copied().fold(f64::MAX, f64::min);
    let ratio = hmax / hmin;
    verdicts.push(Verdict {
        name: "hplus_bounded".into(),
        pass: hmin > 0.0 && ratio < cfg.hplus_ratio_max,
        detail: format!("max/min H+(u0) = {ratio:.4} (limit {})", cfg.hplus_ratio_max),
    });

    let mut dec_pass = true;
    let mut dec_detail = Vec::new();
    for key in ["diff0_H1nu".to_string(), lq_key(q_sep)] {
        let pts: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.get(&key).map(|v| (r.hbar, v))).collect();
        let dec = strictly_decreasing(&pts);
        let f = fits.iter().find(|f| f.quantity == key);
        let ok = dec && f.is_some_and(|f| f.slope > 0.0 && f.within_tolerance());
        dec_pass &= ok;
        match f {
            Some(f) => dec_detail.push(format!(
                "{key}: decreasing={dec}, slope {:.4} ± {:.4} (predicted {:.4} ± {})",
                f.slope, f.stderr, f.predicted, f.tolerance
            )),
            None => dec_detail.push(format!("{key}: no fit")),
        }
    }
    verdicts.push(Verdict { name: "difference_decreasing".into(), pass: dec_pass, detail: dec_detail.join("; ") });

    let aborted = rows.iter().filter(|r| r.status != RunStatus::Ok).count();
    let seps: Vec<f64> = rows.iter().filter_map(|r| r.get("separation_ratio")).collect();
    let min_sep = seps.iter().copied().fold(f64::INFINITY, f64::min);
    verdicts.push(Verdict {
        name: "separation".into(),
        pass: aborted == 0 && min_sep >= cfg.separation_fraction,
        detail: format!(
            "min separation / ||u0||_L{q_sep} = {min_sep:.4} (threshold {}), aborted runs {aborted}",
            cfg.separation_fraction
        ),
    });
    let gaps: Vec<f64> = rows.iter().filter_map(|r| r.get("modulus_gap_ratio")).collect();
    let max_gap = gaps.iter().copied().fold(0.0, f64::max);
    verdicts.push(Verdict {
        name: "isolation".into(),
        pass: aborted == 0 && max_gap < cfg.isolation_factor && min_sep >= cfg.separation_fraction,
        detail: format!(
            "max | |v|-|v~| | / (delta max|v|) = {max_gap:.4} (limit {}), separation held: {}",
            cfg.isolation_factor,
            min_sep >= cfg.separation_fraction
        ),
    });

    let mut extras = BTreeMap::new();
    let q0 = qs.iter().rev().find(|q| {
        let pts: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.get(&lq_key(**q)).map(|v| (r.hbar, v))).collect();
        pts.len() == rows.len() && strictly_decreasing(&pts)
    });
    extras.insert("largest_decreasing_q".into(), serde_json::json!(q0));
    extras.insert("nu".into(), serde_json::json!(nu));
    for r in &rows {
        if let RunStatus::Aborted(why) = &r.status {
            warnings.push(format!("hbar = {}: solver aborted: {why}", r.hbar));
        }
    }
    Ok(ExperimentReport { experiment: "thm1".into(), exponents: e, rows, fits, verdicts, extras, warnings })
}

/// Which observation time of the norm inflation experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Observation at `s = s*`.
    Upper,
    /// Observation at `s = ħ^κ s*` with `κ = β − 1 + 2ε`.
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thm2Config {
    pub d: usize,
    pub p: u32,
    pub omega: i32,
    pub sigma: f64,
    pub rho: f64,
    pub eps: f64,
    pub grid: GridSpec,
    pub dt: f64,
    pub s_star: f64,
    pub hbar: HbarSequence,
    pub branch: Branch,
    pub tolerance_t0: f64,
    pub tolerance_th: f64,
}

impl Default for Thm2Config {
    fn default() -> Self {
        Self {
            d: 3,
            p: 7,
            omega: 1,
            sigma: 0.5,
            rho: 0.3,
            eps: 0.05,
            grid: GridSpec::new(3, 96, 6.0).expect("valid grid"),
            dt: 1e-3,
            s_star: 0.1,
            hbar: HbarSequence::default(),
            branch: Branch::Upper,
            tolerance_t0: 0.05,
            tolerance_th: 0.08,
        }
    }
}

impl Thm2Config {
    /// The fast one-dimensional variant.
    pub fn fast_1d() -> Self {
        Self {
            d: 1,
            sigma: 0.05,
            rho: 0.05,
            eps: 0.005,
            grid: GridSpec::new(1, 128, 8.0).expect("valid grid"),
            tolerance_t0: 0.02,
            tolerance_th: 0.02,
            ..Self::default()
        }
    }
}

/// Predicted slopes `(t = 0, t = t_h)` of the norm inflation experiment.
pub fn thm2_predictions(e: &Exponents, sigma: f64, rho: f64, eps: f64, branch: Branch) -> (f64, f64) {
    let d = e.d as f64;
    let kappa = match branch {
        Branch::Upper => 0.0,
        Branch::Lower => e.beta - 1.0 + 2.0 * eps,
    };
    (e.gamma - sigma + d / 2.0, e.gamma - (e.beta + 1.0 - kappa) * rho + d / 2.0)
}

/// Rejects `(σ, ρ, ε)` violating the conditions of the norm inflation
/// construction; `label` names the failing condition.
pub fn thm2_admissibility(d: usize, p: u32, sigma: f64, rho: f64, eps: f64, branch: Branch) -> Result<Exponents, ExperimentError> {
    let dh = d as f64 / 2.0;
    let pm = (p as f64 - 1.0) / 2.0;
    let fail = |label: &'static str, detail: String| Err(ExperimentError::Inadmissible { label, detail });
    let sc = critical_indices(d, p).sigma_c_f64();
    if !(sigma > 0.0 && sigma < sc) {
        return fail("sigma-range", format!("need 0 < sigma = {sigma} < sigma_c = {sc}"));
    }
    if !(eps > 0.0) {
        return fail("(50)", format!("gamma - sigma + d/2 = eps = {eps} must be positive"));
    }
    let gamma = sigma - dh + eps;
    let beta = -pm * gamma - 1.0;
    match branch {
        Branch::Upper => {
            let growth = gamma - (beta + 1.0) * rho + dh;
            if !(growth < 0.0) {
                return fail("(51)", format!("gamma - (beta+1) rho + d/2 = {growth} must be negative"));
            }
            if !(sigma < dh - 2.0 / (p as f64 - 1.0) - eps) {
                return fail("(52)", format!("sigma = {sigma} must be below d/2 - 2/(p-1) - eps"));
            }
            let bound = (sigma + eps) / (pm * (dh - sigma - eps));
            if !(rho > bound) {
                return fail("(53)", format!("rho = {rho} must exceed {bound}"));
            }
            let lower = sigma / (pm * (dh - sigma));
            if !(rho > lower && rho <= sigma) {
                return fail("(window)", format!("rho = {rho} outside ]{lower}, {sigma}]"));
            }
        }
        Branch::Lower => {
            let kappa = beta - 1.0 + 2.0 * eps;
            let growth = gamma - (beta + 1.0 - kappa) * rho + dh;
            if !(growth < 0.0) {
                return fail("(51)", format!("gamma - (beta+1-kappa) rho + d/2 = {growth} must be negative"));
            }
            if !(sigma < dh - 4.0 / (p as f64 - 1.0)) {
                return fail("(lower-branch)", format!("sigma = {sigma} must be below d/2 - 4/(p-1)"));
            }
            if !(beta > 0.0) {
                return fail("(52)", format!("beta = {beta} must be positive"));
            }
            if !(rho <= sigma) {
                return fail("(window)", format!("rho = {rho} must not exceed sigma = {sigma}"));
            }
        }
    }
    Ok(norm_inflation_params(d, p, 1, sigma, eps)?)
}

impl Thm2Config {
    /// Checks the config without running; returns the exponents.
    pub fn validate(&self) -> Result<Exponents, ExperimentError> {
        check_grid(&self.grid, self.d)?;
        thm2_admissibility(self.d, self.p, self.sigma, self.rho, self.eps, self.branch)?;
        Ok(norm_inflation_params(self.d, self.p, self.omega, self.sigma, self.eps)?)
    }
}

pub fn thm2_run(cfg: &Thm2Config) -> Result<ExperimentReport, ExperimentError> {
    let e = cfg.validate()?;
    let kappa = match cfg.branch {
        Branch::Upper => 0.0,
        Branch::Lower => e.beta - 1.0 + 2.0 * cfg.eps,
    };
    let a0 = gaussian_profile(cfg.grid);
    let params: Vec<SemiclassicalParams> =
        cfg.hbar.values().iter().map(|&hb| e.with_hbar(hb)).collect::<Result<_, _>>()?;
    let rows = run_sweep(&cfg.hbar, |hb| {
        let idx = cfg.hbar.values().iter().position(|x| *x == hb).expect("member");
        let par = &params[idx];
        let s_obs = hb.powf(kappa) * cfg.s_star;
        let mut values = BTreeMap::new();
        values.insert("norm_t0".to_string(), physical_sobolev_norm(&a0, par, cfg.sigma));
        let status = match solve_to(&a0, par.h, cfg.p, cfg.omega, cfg.dt, s_obs) {
            Ok(v) => {
                values.insert("norm_th".to_string(), physical_sobolev_norm(&v, par, cfg.rho));
                values.insert("top_third".to_string(), top_third_fraction(&v));
                RunStatus::Ok
            }
            Err(err) => RunStatus::Aborted(err.to_string()),
        };
        HbarRow { hbar: hb, h: par.h, s_obs, values, status }
    });
    let (p0, p1) = thm2_predictions(&e, cfg.sigma, cfg.rho, cfg.eps, cfg.branch);
    let mut fits = Vec::new();
    fits.extend(fit_line(&rows, "norm_t0", p0, cfg.tolerance_t0, "gamma - sigma + d/2"));
    let prov = match cfg.branch {
        Branch::Upper => "gamma - (beta+1) rho + d/2",
        Branch::Lower => "gamma - (beta+1-kappa) rho + d/2, kappa = beta - 1 + 2 eps",
    };
    fits.extend(fit_line(&rows, "norm_th", p1, cfg.tolerance_th, prov));
    let verdict = |name: &str, key: &str, sign: f64| -> Verdict {
        match fits.iter().find(|f| f.quantity == key) {
            Some(f) => Verdict {
                name: name.into(),
                pass: f.within_tolerance() && f.slope * sign > 0.0,
                detail: format!("slope {:.4} ± {:.4}, predicted {:.4} ± {}", f.slope, f.stderr, f.predicted, f.tolerance),
            },
            None => Verdict { name: name.into(), pass: false, detail: "fewer than 4 completed runs".into() },
        }
    };
    let verdicts = vec![verdict("slope_t0", "norm_t0", 1.0), verdict("slope_th", "norm_th", -1.0)];
    let mut warnings = Vec::new();
    for r in &rows {
        if let RunStatus::Aborted(why) = &r.status {
            warnings.push(format!("hbar = {}: solver aborted: {why}", r.hbar));
        }
    }
    let mut extras = BTreeMap::new();
    extras.insert("kappa".into(), serde_json::json!(kappa));
    Ok(ExperimentReport { experiment: "thm2".into(), exponents: e, rows, fits, verdicts, extras, warnings })
}

/// Phase mechanism check on the hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub d: usize,
    pub p: u32,
    pub omega: i32,
    pub eps: f64,
    pub cutoff: CutoffSpec,
    pub grid: GridSpec,
    pub dt: f64,
    pub order: usize,
    pub hbar: HbarSequence,
    pub taylor_tolerance: f64,
    /// Bulk region: `(χa⁰)^{p−1} > bulk_fraction·max`.
    pub bulk_fraction: f64,
    pub resolution_guard: Option<f64>,
    pub zero_perturbation: bool,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            d: 3,
            p: 7,
            omega: 1,
            eps: 0.3,
            cutoff: CutoffSpec { eta: 0.5, radius: 4.0 },
            grid: GridSpec::new(3, 24, 4.0).expect("valid grid"),
            dt: 2e-3,
            order: 0,
            hbar: HbarSequence::default(),
            taylor_tolerance: 0.1,
            bulk_fraction: 0.1,
            resolution_guard: None,
            zero_perturbation: false,
        }
    }
}

/// Leading Taylor term `−ω(p−1)δ s (χa⁰)^{p−1}` of the phase gap.
pub fn taylor_phase_gap(a0: &Field, p: u32, omega: f64, delta: f64, s: f64) -> Field {
    let c = -omega * (p as f64 - 1.0) * delta * s;
    a0.map(|v| C64::new(c * v.norm().powi(p as i32 - 1), 0.0))
}

/// Step bound `1/(v ξ_max √d)` for RK4 on the transport terms, with the
/// speed `v = 2 s |ω| sup|∇|a|^{p−1}|` that `∇S` reaches from rest by time `s`.
pub fn transport_step_bound(a: &Field, p: u32, omega: f64, s: f64) -> f64 {
    let spec = a.spec();
    let f = a.map(|v| C64::new(v.norm().powi(p as i32 - 1), 0.0));
    let g = crate::grid::gradient(&f);
    let slope = (0..spec.d())
        .map(|i| g[i].values().iter().map(|v| v.norm_sqr()).collect::<Vec<_>>())
        .fold(vec![0.0; spec.len()], |acc, c| acc.iter().zip(c).map(|(x, y)| x + y).collect())
        .into_iter()
        .fold(0.0, f64::max)
        .sqrt();
    let v = 2.0 * s * omega.abs() * slope;
    if v == 0.0 {
        f64::INFINITY
    } else {
        1.0 / (v * spec.xi_max() * (spec.d() as f64).sqrt())
    }
}

impl PhaseConfig {
    /// Checks the config without running; returns the exponents.
    pub fn validate(&self) -> Result<Exponents, ExperimentError> {
        check_grid(&self.grid, self.d)?;
        let e = energy_space_params(self.d, self.p, self.omega)?;
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(ExperimentError::Config(format!("eps = {} must lie in (0, 1)", self.eps)));
        }
        Ok(e)
    }
}

pub fn phase_divergence_check(cfg: &PhaseConfig) -> Result<ExperimentReport, ExperimentError> {
    let e = cfg.validate()?;
    let a0 = gaussian_profile(cfg.grid);
    let omega = cfg.omega as f64;
    let data: Vec<(SemiclassicalParams, Field)> = cfg
        .hbar
        .values()
        .iter()
        .map(|&hb| {
            let par = e.with_hbar(hb)?;
            Ok((par, initial_datum(&a0, &par, Some(cfg.cutoff))?.v))
        })
        .collect::<Result<_, ExperimentError>>()?;
    let rows = run_sweep(&cfg.hbar, |hb| {
        let idx = cfg.hbar.values().iter().position(|x| *x == hb).expect("member");
        let (par, v0) = &data[idx];
        let h = par.h;
        let delta = if cfg.zero_perturbation { 0.0 } else { perturbation_size(hb, e.beta, cfg.eps) };
        let s_h = observation_time(h, cfg.eps);
        let mut values = BTreeMap::new();
        values.insert("delta".to_string(), delta);
        let run = |amp: &Field| -> Result<Field, WkbError> {
            let dt = cfg.dt.min(transport_step_bound(amp, cfg.p, omega, s_h));
            let hc = HierarchyConfig { dt, s_max: s_h, resolution_guard: cfg.resolution_guard, ..Default::default() };
            let st = WkbState::leading(Field::zeros(cfg.grid), amp.clone(), cfg.order, cfg.p, omega)?;
            Ok(integrate_wkb(&st, s_h, &hc)?.last().phase.clone())
        };
        let status = match (run(v0), run(&v0.scale(C64::new(1.0 + delta, 0.0)))) {
            (Ok(s), Ok(st)) => {
                let gap = &st - &s;
                let pred = taylor_phase_gap(v0, cfg.p, omega, delta, s_h);
                let weight = v0.map(|v| C64::new(v.norm().powi(cfg.p as i32 - 1), 0.0));
                let wmax = weight.max_abs();
                let mut rel: f64 = 0.0;
                for ((g, pr), w) in gap.values().iter().zip(pred.values()).zip(weight.values()) {
                    if w.re > cfg.bulk_fraction * wmax && pr.norm() > 0.0 {
                        rel = rel.max((g - pr).norm() / pr.norm());
                    }
                }
                values.insert("taylor_rel_error".to_string(), if delta == 0.0 { 0.0 } else { rel });
                values.insert("max_phase_gap".to_string(), gap.max_abs() / h);
                values.insert("phase_gap_l2".to_string(), lebesgue_norm(&gap, 2.0));
                RunStatus::Ok
            }
            (Err(err), _) | (_, Err(err)) => RunStatus::Aborted(err.to_string()),
        };
        HbarRow { hbar: hb, h, s_obs: s_h, values, status }
    });
    let rel: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.get("taylor_rel_error").map(|v| (r.hbar, v))).collect();
    let complete = rel.len() == rows.len();
    let worst = rel.iter().map(|x| x.1).fold(0.0, f64::max);
    let smallest = rows.last().and_then(|r| r.get("max_phase_gap"));
    let verdicts = vec![
        Verdict {
            name: "taylor".into(),
            pass: complete && worst <= cfg.taylor_tolerance,
            detail: format!(
                "max bulk relative error {worst:.4} (limit {}), completed runs {}/{}",
                cfg.taylor_tolerance,
                rel.len(),
                rows.len()
            ),
        },
        Verdict {
            name: "phase_gap".into(),
            pass: smallest.is_some_and(|g| g >= std::f64::consts::FRAC_PI_2),
            detail: match smallest {
                Some(g) => format!("max (S~-S)/h at hbar = {} is {g:.4} (need >= pi/2)", cfg.hbar.smallest()),
                None => "run at the smallest hbar did not complete".into(),
            },
        },
    ];
    let warnings = rows
        .iter()
        .filter_map(|r| match &r.status {
            RunStatus::Aborted(why) => Some(format!("hbar = {}: hierarchy aborted: {why}", r.hbar)),
            RunStatus::Ok => None,
        })
        .collect();
    Ok(ExperimentReport { experiment: "phase".into(), exponents: e, rows, fits: Vec::new(), verdicts, extras: BTreeMap::new(), warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hbar_sequence_invariants() {
        assert!(HbarSequence::new(vec![0.4, 0.3, 0.2]).is_err());
        assert!(HbarSequence::new(vec![0.4, 0.3, 0.3, 0.2]).is_err());
        assert!(HbarSequence::new(vec![1.0, 0.3, 0.25, 0.2]).is_err());
        let s = HbarSequence::default();
        assert_eq!(s.values().len(), 6);
        assert_eq!(s.smallest(), 0.20);
    }

    #[test]
    fn cutoff_shape() {
        assert_eq!(cutoff(0.0, 4.0), 1.0);
        assert_eq!(cutoff(2.0, 4.0), 1.0);
        assert_eq!(cutoff(4.0, 4.0), 0.0);
        let mid = cutoff(3.0, 4.0);
        assert!(mid > 0.0 && mid < 1.0);
        assert!(cutoff(2.5, 4.0) > cutoff(3.5, 4.0));
    }

    #[test]
    fn predicted_t0_slope_is_eps() {
        for (d, p, sigma, rho, eps) in [(3, 7, 0.5, 0.3, 0.05), (1, 7, 0.05, 0.05, 0.005), (3, 9, 0.4, 0.3, 0.02)] {
            let e = thm2_admissibility(d, p, sigma, rho, eps, Branch::Upper).unwrap();
            let (p0, _) = thm2_predictions(&e, sigma, rho, eps, Branch::Upper);
            assert!((p0 - eps).abs() < 1e-14);
        }
    }

    #[test]
    fn inflation_prediction_by_substitution() {
        let e = thm2_admissibility(3, 7, 0.5, 0.3, 0.05, Branch::Upper).unwrap();
        assert!((e.gamma + 0.95).abs() < 1e-14 && (e.beta - 1.85).abs() < 1e-14);
        let (_, p1) = thm2_predictions(&e, 0.5, 0.3, 0.05, Branch::Upper);
        assert!((p1 + 0.305).abs() < 1e-12);
        let e1 = thm2_admissibility(1, 7, 0.05, 0.05, 0.005, Branch::Upper).unwrap();
        let (q0, q1) = thm2_predictions(&e1, 0.05, 0.05, 0.005, Branch::Upper);
        assert!((q0 - 0.005).abs() < 1e-14 && (q1 + 0.01175).abs() < 1e-12);
    }

    #[test]
    fn admissibility_rejections() {
        let lower = 0.5 / (3.0 * (1.5 - 0.5));
        match thm2_admissibility(3, 7, 0.5, lower + 1e-12, 0.05, Branch::Upper) {
            Err(ExperimentError::Inadmissible { label, .. }) => assert_eq!(label, "(51)"),
            other => panic!("{other:?}"),
        }
        match thm2_admissibility(3, 7, 0.5, 0.3, 0.0, Branch::Upper) {
            Err(ExperimentError::Inadmissible { label, .. }) => assert_eq!(label, "(50)"),
            other => panic!("{other:?}"),
        }
        match thm2_admissibility(3, 7, 0.5, 0.6, 0.05, Branch::Upper) {
            Err(ExperimentError::Inadmissible { label, .. }) => assert_eq!(label, "(window)"),
            other => panic!("{other:?}"),
        }
        assert!(thm2_admissibility(3, 7, 0.9, 0.3, 0.05, Branch::Upper).is_err());
    }

    #[test]
    fn divergence_rate_identity() {
        let e = energy_space_params(3, 7, 1).unwrap();
        for hb in [0.45f64, 0.3, 0.2, 0.01] {
            let h = hb.powf(e.beta);
            let ratio = perturbation_size(hb, e.beta, 0.3) * observation_time(h, 0.3) / h;
            assert!((ratio - (1.0 / h).ln() / e.beta).abs() < 1e-12 * ratio);
        }
    }

    #[test]
    fn datum_without_cutoff_is_profile() {
        let spec = GridSpec::new(1, 64, 8.0).unwrap();
        let a0 = gaussian_profile(spec);
        let par = energy_space_params(3, 7, 1).unwrap().with_hbar(0.1).unwrap();
        let d = initial_datum(&a0, &par, None).unwrap();
        assert_eq!(d.v, a0);
        let c = initial_datum(&a0, &par, Some(CutoffSpec { eta: 0.5, radius: 4.0 })).unwrap();
        assert!(c.v.max_diff(&a0) < 1e-12);
        assert!(initial_datum(&a0, &par, Some(CutoffSpec { eta: 1.0, radius: 4.0 })).is_err());
    }
}
