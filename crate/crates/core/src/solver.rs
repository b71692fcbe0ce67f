//! Strang split-step solver for `ih∂ₛv + h²Δv = ω|v|^{p−1}v` and the error
//! measurements comparing it with the WKB ansatz.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{self, apply_table, lebesgue_norm, sobolev_norm, top_third_fraction, Field, GridSpec, C64};
use crate::rescale::{gradient_energy, SemiclassicalParams};
use crate::wkb::{assemble_vapp, step_count, WkbState, WkbTrajectory};

/// Largest admissible top-third spectral fraction of the initial datum.
pub const RESOLUTION_LIMIT: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid solver config: {0}")]
    Config(String),
    #[error("dt = {dt} exceeds the {which} stability budget {budget}")]
    Stability { which: &'static str, dt: f64, budget: f64 },
    #[error("initial datum under-resolved: top-third spectral fraction {0:e}")]
    Resolution(f64),
    #[error("initial datum is not finite")]
    NonFinite,
    #[error("time grids do not match: no wkb slice within interpolation tolerance of s = {0}")]
    TimeGrid(f64),
    #[error("trajectories live on different grids")]
    Mismatch,
    #[error("k = {k} must exceed d/2 = {half_d}")]
    Regularity { k: f64, half_d: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub h: f64,
    pub p: u32,
    pub omega: f64,
    pub dt: f64,
    pub s_end: f64,
    pub record_every: usize,
}

impl SolveConfig {
    pub fn new(h: f64, p: u32, omega: i32, dt: f64, s_end: f64, record_every: usize) -> Result<Self, SolverError> {
        if omega != 1 && omega != -1 {
            return Err(SolverError::Config(format!("omega = {omega} must be +1 or -1")));
        }
        let c = Self { h, p, omega: omega as f64, dt, s_end, record_every };
        c.validate()?;
        Ok(c)
    }

    /// Linear (`ω = 0`) evolution, for free-propagation checks.
    pub fn linear(h: f64, dt: f64, s_end: f64, record_every: usize) -> Self {
        Self { h, p: 3, omega: 0.0, dt, s_end, record_every }
    }

    fn validate(&self) -> Result<(), SolverError> {
        if !(self.h > 0.0 && self.h <= 1.0) {
            return Err(SolverError::Config(format!("h = {} must lie in (0, 1]", self.h)));
        }
        if self.p < 3 || self.p % 2 == 0 {
            return Err(SolverError::Config(format!("p = {} must be odd and >= 3", self.p)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SolverError::Config(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.s_end >= 0.0 && self.s_end.is_finite()) {
            return Err(SolverError::Config(format!("s_end = {} must be nonnegative", self.s_end)));
        }
        if self.record_every == 0 {
            return Err(SolverError::Config("record_every must be >= 1".into()));
        }
        Ok(())
    }

    /// `(nonlinear, kinetic)` step bounds `0.5h/(|ω| max|v₀|^{p−1})` and `π/(h|ξ|²_max)`.
    pub fn stability_budget(&self, v0: &Field) -> (f64, f64) {
        let spec = v0.spec();
        let amp = v0.max_abs().powi(self.p as i32 - 1);
        let nonlinear = if self.omega == 0.0 || amp == 0.0 {
            f64::INFINITY
        } else {
            0.5 * self.h / (self.omega.abs() * amp)
        };
        let xi2 = spec.d() as f64 * spec.xi_max().powi(2);
        (nonlinear, std::f64::consts::PI / (self.h * xi2))
    }

    /// Largest step within both budgets and at most `self.dt`.
    pub fn admissible_dt(&self, v0: &Field) -> f64 {
        let (a, b) = self.stability_budget(v0);
        self.dt.min(a).min(b)
    }

    pub fn check(&self, v0: &Field) -> Result<(), SolverError> {
        self.validate()?;
        if !v0.is_finite() {
            return Err(SolverError::NonFinite);
        }
        let (nl, kin) = self.stability_budget(v0);
        if self.dt > nl {
            return Err(SolverError::Stability { which: "nonlinear", dt: self.dt, budget: nl });
        }
        if self.dt > kin {
            return Err(SolverError::Stability { which: "kinetic", dt: self.dt, budget: kin });
        }
        let frac = top_third_fraction(v0);
        if frac > RESOLUTION_LIMIT {
            return Err(SolverError::Resolution(frac));
        }
        Ok(())
    }
}

/// Recorded slices of a solver run.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeTrajectory {
    pub times: Vec<f64>,
    pub slices: Vec<Field>,
    /// Step actually used (the requested step shrunk to divide `s_end`).
    pub dt: f64,
    /// Set when a non-finite state stopped the run; the last slice is the last
    /// finite state.
    pub stopped_at: Option<f64>,
}

impl PdeTrajectory {
    /// Ansatz slices `v_app(s)` of a hierarchy trajectory, as a trajectory.
    pub fn from_wkb(traj: &WkbTrajectory, h: f64, n: usize) -> Self {
        Self {
            times: traj.times(),
            slices: traj.states.iter().map(|s| assemble_vapp(s, h, Some(n))).collect(),
            dt: traj.dt,
            stopped_at: None,
        }
    }

    pub fn last(&self) -> &Field {
        self.slices.last().expect("trajectory is never empty")
    }
}

fn nonlinear_half(v: &mut [C64], c: f64, p: u32) {
    let m = (p as i32 - 1) / 2;
    for x in v.iter_mut() {
        let r = x.norm_sqr().powi(m);
        *x *= C64::from_polar(1.0, -c * r);
    }
}

/// Strang splitting: half nonlinear rotation, kinetic multiplier
/// `e^{−ih|ξ|²dt}`, half nonlinear rotation.
pub fn split_step_solve(v0: &Field, cfg: &SolveConfig) -> Result<PdeTrajectory, SolverError> {
    cfg.check(v0)?;
    let spec = *v0.spec();
    let steps = if cfg.s_end == 0.0 { 0 } else { step_count(cfg.s_end, cfg.dt) };
    let dt = if steps == 0 { cfg.dt } else { cfg.s_end / steps as f64 };
    let kinetic: Vec<C64> = spec.xi_squared().iter().map(|k2| C64::from_polar(1.0, -cfg.h * k2 * dt)).collect();
    let c = cfg.omega * dt / (2.0 * cfg.h);
    let mut v = v0.values().to_vec();
    let mut times = vec![0.0];
    let mut slices = vec![v0.clone()];
    let mut last_valid = v.clone();
    for k in 1..=steps {
        if c != 0.0 {
            nonlinear_half(&mut v, c, cfg.p);
        }
        grid::fft_forward(&spec, &mut v);
        for (x, m) in v.iter_mut().zip(&kinetic) {
            *x *= m;
        }
        grid::fft_inverse(&spec, &mut v);
        if c != 0.0 {
            nonlinear_half(&mut v, c, cfg.p);
        }
        let s = k as f64 * dt;
        if !v.iter().all(|x| x.re.is_finite() && x.im.is_finite()) {
            let prev = (k - 1) as f64 * dt;
            if times.last() != Some(&prev) {
                times.push(prev);
                slices.push(Field::from_values(spec, last_valid).expect("length"));
            }
            return Ok(PdeTrajectory { times, slices, dt, stopped_at: Some(s) });
        }
        if k % cfg.record_every == 0 || k == steps {
            times.push(s);
            slices.push(Field::from_values(spec, v.clone()).expect("length"));
        }
        last_valid.copy_from_slice(&v);
    }
    Ok(PdeTrajectory { times, slices, dt, stopped_at: None })
}

/// `(‖v‖_{L²}, ∫ (h²/2)|∇v|² + (ω/(p+1))|v|^{p+1})`.
pub fn conserved_quantities(v: &Field, cfg: &SolveConfig) -> (f64, f64) {
    let mass = lebesgue_norm(v, 2.0);
    let q = cfg.p as f64 + 1.0;
    let potential = if cfg.omega == 0.0 { 0.0 } else { cfg.omega / q * lebesgue_norm(v, q).powf(q) };
    (mass, cfg.h * cfg.h * gradient_energy(v) + potential)
}

fn interpolated_state(traj: &WkbTrajectory, s: f64, h: f64) -> Result<WkbState, SolverError> {
    let states = &traj.states;
    let tol = 1e-9 * s.abs().max(1.0);
    if let Some(st) = states.iter().find(|st| (st.s - s).abs() <= tol) {
        return Ok(st.clone());
    }
    let k = states.iter().position(|st| st.s > s).ok_or(SolverError::TimeGrid(s))?;
    if k == 0 {
        return Err(SolverError::TimeGrid(s));
    }
    let (a, b) = (&states[k - 1], &states[k]);
    let w = (s - a.s) / (b.s - a.s);
    // Interpolation error of a linear interpolant ≈ max|f''|Δs²/8; the second
    // difference is taken from the nearest triple of slices.
    let mid = if k >= 2 { k - 1 } else if k + 1 < states.len() { k } else { return Err(SolverError::TimeGrid(s)) };
    let (l, c, r) = (&states[mid - 1], &states[mid], &states[mid + 1]);
    let amp = c.amps[0].max_abs().max(1e-300);
    let mut err = (&(&l.phase + &r.phase) - &(&c.phase * 2.0)).max_abs() * amp / (8.0 * h);
    for j in 0..c.amps.len() {
        let d2 = (&(&l.amps[j] + &r.amps[j]) - &(&c.amps[j] * 2.0)).max_abs();
        err = err.max(d2 * h.powi(j as i32) / 8.0);
    }
    if err >= 1e-8 {
        return Err(SolverError::TimeGrid(s));
    }
    let lerp = |x: &Field, y: &Field| {
        let mut out = x * (1.0 - w);
        out.axpy(C64::new(w, 0.0), y);
        out
    };
    Ok(WkbState {
        s,
        phase: lerp(&a.phase, &b.phase),
        amps: a.amps.iter().zip(&b.amps).map(|(x, y)| lerp(x, y)).collect(),
        p: a.p,
        omega: a.omega,
    })
}

/// `e(s) = ‖(1−h²Δ)^{k/2}(v − v_app)(s)‖_{L²}` at every PDE slice.
pub fn compare_to_ansatz(
    traj_pde: &PdeTrajectory,
    traj_wkb: &WkbTrajectory,
    h: f64,
    n: usize,
    k: f64,
) -> Result<Vec<(f64, f64)>, SolverError> {
    if traj_pde.slices[0].spec() != traj_wkb.states[0].spec() {
        return Err(SolverError::Mismatch);
    }
    traj_pde
        .times
        .iter()
        .zip(&traj_pde.slices)
        .map(|(&s, v)| {
            let st = interpolated_state(traj_wkb, s, h)?;
            let w = v - &assemble_vapp(&st, h, Some(n));
            Ok((s, sobolev_norm(&w, k, h)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GronwallReport {
    pub k: f64,
    pub hbar: f64,
    /// Samples `(s, τ = ħ^{γ(p−1)}t, ‖w‖_{H^k_ħ})`.
    pub samples: Vec<(f64, f64, f64)>,
    pub c_star: f64,
    pub growth_star: f64,
    /// Bootstrap threshold `ħ^{γ+(β+1)k}`.
    pub threshold: f64,
    pub crossing: Option<f64>,
    /// Largest sampled `s` with every earlier sample below both the fitted
    /// envelope and the threshold.
    pub validity_s: f64,
}

/// Measures `w = u − u_app` in `H^k_ħ` and fits the envelope `c*·e^{C*τ}`.
///
/// `C*` is the least-squares slope of `log‖w‖` against `τ` (clamped at 0) and
/// `c*` the smallest prefactor putting every sample under the envelope.
pub fn gronwall_bound_check(
    traj_pde: &PdeTrajectory,
    traj_wkb: &WkbTrajectory,
    params: &SemiclassicalParams,
    k: f64,
    n: usize,
) -> Result<GronwallReport, SolverError> {
    let d = params.d() as f64;
    if k <= d / 2.0 {
        return Err(SolverError::Regularity { k, half_d: d / 2.0 });
    }
    let h = params.h;
    let hbar = params.hbar;
    let e = params.exponents;
    let scale = hbar.powf(e.gamma + d / 2.0);
    let rate = hbar.powf(e.gamma * (e.p as f64 - 1.0) + e.alpha);
    let curve = compare_to_ansatz(traj_pde, traj_wkb, h, n, k)?;
    let samples: Vec<(f64, f64, f64)> = curve.iter().map(|&(s, w)| (s, rate * s, scale * w)).collect();
    let threshold = hbar.powf(e.gamma + (e.beta + 1.0) * k);

    let pts: Vec<(f64, f64)> = samples.iter().filter(|x| x.2 > 0.0).map(|x| (x.1, x.2.ln())).collect();
    let growth_star = if pts.len() >= 2 {
        let m = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        if sxx > 0.0 { (sxy / sxx).max(0.0) } else { 0.0 }
    } else {
        0.0
    };
    let c_star = samples.iter().map(|x| x.2 * (-growth_star * x.1).exp()).fold(0.0, f64::max);
    let crossing = samples.iter().find(|x| x.2 > threshold).map(|x| x.0);
    let validity_s = samples
        .iter()
        .take_while(|x| x.2 <= threshold && x.2 <= c_star * (growth_star * x.1).exp() * (1.0 + 1e-12))
        .last()
        .map_or(0.0, |x| x.0);
    Ok(GronwallReport { k, hbar, samples, c_star, growth_star, threshold, crossing, validity_s })
}

/// Writes slices as field binaries plus `manifest.json` in the wkb layout.
pub fn export_trajectory(
    dir: &Path,
    traj: &PdeTrajectory,
    cfg: &SolveConfig,
    meta: serde_json::Value,
) -> std::io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(traj.slices.len());
    for (k, v) in traj.slices.iter().enumerate() {
        let name = format!("slice{k:05}_v.bin");
        let mut w = BufWriter::new(fs::File::create(dir.join(&name))?);
        grid::write_binary(&mut w, v)?;
        files.push(vec![name]);
    }
    let grid: GridSpec = *traj.slices[0].spec();
    let manifest = crate::wkb::TrajectoryManifest {
        kind: "pde".into(),
        times: traj.times.clone(),
        order: 0,
        dt: traj.dt,
        p: cfg.p,
        omega: cfg.omega,
        grid,
        files,
        h: Some(cfg.h),
        meta,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}

/// Exact linear propagator `e^{ihsΔ}`.
pub fn free_propagate(v: &Field, h: f64, s: f64) -> Field {
    let spec = *v.spec();
    let table: Vec<C64> = spec.xi_squared().iter().map(|k2| C64::from_polar(1.0, -h * k2 * s)).collect();
    apply_table(&spec, &v.spectrum(), &table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_data_is_exact() {
        let spec = GridSpec::new(1, 32, 5.0).unwrap();
        let c = 0.7;
        let cfg = SolveConfig::new(0.1, 7, 1, 1e-3, 0.2, 10).unwrap();
        let tr = split_step_solve(&Field::constant(spec, C64::new(c, 0.0)), &cfg).unwrap();
        for (s, v) in tr.times.iter().zip(&tr.slices) {
            let expect = C64::from_polar(c, -c.powi(6) * s / 0.1);
            assert!(v.values().iter().all(|x| (x - expect).norm() < 1e-10));
        }
        assert_eq!(tr.times.len(), 21);
    }

    #[test]
    fn free_evolution_of_a_mode() {
        let l = 4.0;
        let spec = GridSpec::new(1, 32, l).unwrap();
        let k0 = 3.0 * PI / l;
        let h = 0.2;
        let v0 = Field::from_fn(spec, |x| C64::from_polar(1.0, k0 * x[0]));
        let cfg = SolveConfig::linear(h, 1e-2, 0.5, 50);
        let tr = split_step_solve(&v0, &cfg).unwrap();
        let expect = Field::from_fn(spec, |x| C64::from_polar(1.0, k0 * x[0] - h * k0 * k0 * 0.5));
        assert!(tr.last().max_diff(&expect) < 1e-12);
        assert!(free_propagate(&v0, h, 0.5).max_diff(&expect) < 1e-12);
    }

    #[test]
    fn conserved_quantities_examples() {
        let spec = GridSpec::new(2, 16, 3.0).unwrap();
        let cfg = SolveConfig::new(0.5, 3, -1, 1e-3, 0.1, 1).unwrap();
        assert_eq!(conserved_quantities(&Field::zeros(spec), &cfg), (0.0, 0.0));
        let c = 1.5;
        let (m, e) = conserved_quantities(&Field::constant(spec, C64::new(0.0, c)), &cfg);
        assert!((m - c * 6.0).abs() < 1e-12);
        assert!((e + c.powi(4) / 4.0 * 36.0).abs() < 1e-10);
    }

    #[test]
    fn budgets_enforced() {
        let spec = GridSpec::new(1, 64, 10.0).unwrap();
        let v0 = Field::constant(spec, C64::new(2.0, 0.0));
        let cfg = SolveConfig::new(0.1, 7, 1, 1e-3, 0.1, 1).unwrap();
        assert!(matches!(split_step_solve(&v0, &cfg), Err(SolverError::Stability { which: "nonlinear", .. })));
        assert!(SolveConfig::new(0.1, 4, 1, 1e-3, 0.1, 1).is_err());
        assert!(SolveConfig::new(0.1, 3, 0, 1e-3, 0.1, 1).is_err());
        let rough = Field::from_fn(spec, |x| C64::from_polar(0.1, 30.0 * PI / 10.0 * x[0]));
        let cfg = SolveConfig::new(0.1, 3, 1, 1e-4, 0.1, 1).unwrap();
        assert!(matches!(split_step_solve(&rough, &cfg), Err(SolverError::Resolution(_))));
    }
}
