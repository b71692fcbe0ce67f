//! Geometric-optics hierarchy for `v = a e^{iS/h}`, `a = Σ_j a_j h^j`:
//!
//! ```text
//! ∂ₛS   = −|∇S|² − ω|a₀|^{p−1}
//! ∂ₛa_j = −2∇S·∇a_j − a_jΔS + iΔa_{j−1} − iω([f(a)a]_{j+1} − |a₀|^{p−1}a_{j+1})
//! ```
//!
//! closed at order `J` by `a_{J+1} = 0`, where `[·]_k` is the `h^k`
//! coefficient of the truncated series.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{
    self, dealias, gradient_and_laplacian, lebesgue_norm, upper_band_fraction, Field, GridSpec, C64,
};
use crate::series::{self, MAX_TERMS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WkbError {
    #[error("closure order {0} exceeds the supported maximum {max}", max = MAX_TERMS - 2)]
    Order(usize),
    #[error("fields do not share one grid")]
    Mismatch,
    #[error("phase is not real (max |Im S| = {0:e})")]
    ComplexPhase(f64),
    #[error("invalid hierarchy config: {0}")]
    Config(String),
    #[error("s_end = {s_end} exceeds s_max = {s_max}")]
    Horizon { s_end: f64, s_max: f64 },
    #[error("amplitude blow-up at s = {s}: sup|a0| grew by {growth:e}")]
    BlowUp { s: f64, growth: f64 },
    #[error("loss of resolution at s = {s}: upper-band spectral fraction {fraction:e}")]
    Resolution { s: f64, fraction: f64 },
    #[error("non-finite state at s = {0}")]
    NonFinite(f64),
    #[error("trajectory has {0} slices; at least 5 are needed")]
    TooFewSlices(usize),
    #[error("trajectory time step is not uniform")]
    NonUniform,
    #[error("n = {n} exceeds the closure order {j}")]
    TruncationOrder { n: usize, j: usize },
}

/// One time slice of the hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct WkbState {
    pub s: f64,
    pub phase: Field,
    pub amps: Vec<Field>,
    pub p: u32,
    /// `+1` defocusing, `−1` focusing, `0` linear (gauge checks).
    pub omega: f64,
}

impl WkbState {
    pub fn new(phase: Field, amps: Vec<Field>, p: u32, omega: f64) -> Result<Self, WkbError> {
        if amps.is_empty() || amps.len() > MAX_TERMS - 1 {
            return Err(WkbError::Order(amps.len().saturating_sub(1)));
        }
        if amps.iter().any(|a| a.spec() != phase.spec()) {
            return Err(WkbError::Mismatch);
        }
        if !phase.is_real() {
            return Err(WkbError::ComplexPhase(phase.max_imag()));
        }
        if p < 3 || p % 2 == 0 {
            return Err(WkbError::Config(format!("p = {p} must be odd and >= 3")));
        }
        Ok(Self { s: 0.0, phase, amps, p, omega })
    }

    /// Leading-order data `(S⁰, a⁰)` padded with zero corrections up to order `j`.
    pub fn leading(phase: Field, a0: Field, j: usize, p: u32, omega: f64) -> Result<Self, WkbError> {
        let spec = *a0.spec();
        let mut amps = vec![a0];
        amps.extend((0..j).map(|_| Field::zeros(spec)));
        Self::new(phase, amps, p, omega)
    }

    pub fn order(&self) -> usize {
        self.amps.len() - 1
    }

    pub fn spec(&self) -> &GridSpec {
        self.phase.spec()
    }

    fn fields(&self) -> impl Iterator<Item = &Field> {
        std::iter::once(&self.phase).chain(self.amps.iter())
    }

    fn combine(&self, k: &WkbDerivative, c: f64) -> Self {
        let mut out = self.clone();
        out.phase.axpy(C64::new(c, 0.0), &k.phase);
        for (a, da) in out.amps.iter_mut().zip(&k.amps) {
            a.axpy(C64::new(c, 0.0), da);
        }
        out
    }
}

/// Time derivative of a [`WkbState`].
#[derive(Debug, Clone, PartialEq)]
pub struct WkbDerivative {
    pub phase: Field,
    pub amps: Vec<Field>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HierarchyConfig {
    pub dt: f64,
    /// Longest admissible integration horizon.
    pub s_max: f64,
    /// Abort when `sup|a₀|` exceeds this multiple of its initial value.
    pub blowup_factor: f64,
    /// Abort when the spectral energy fraction of `S` or `a₀` in the upper half
    /// of the dealiased band exceeds this value.
    pub resolution_guard: Option<f64>,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self { dt: 1e-3, s_max: 0.2, blowup_factor: 1e3, resolution_guard: None }
    }
}

impl HierarchyConfig {
    pub fn validate(&self) -> Result<(), WkbError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(WkbError::Config(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.s_max > 0.0) {
            return Err(WkbError::Config(format!("s_max = {} must be positive", self.s_max)));
        }
        if !(self.blowup_factor > 1.0) {
            return Err(WkbError::Config("blowup_factor must exceed 1".into()));
        }
        Ok(())
    }
}

/// Right-hand side of the closed hierarchy.
pub fn hierarchy_rhs(state: &WkbState) -> WkbDerivative {
    let spec = *state.spec();
    let xi2 = spec.xi_squared();
    let p = state.p;
    let omega = state.omega;
    let jmax = state.order();
    let len = jmax + 2;

    let (grad_s, lap_s) = gradient_and_laplacian(&state.phase, &xi2);
    let a0 = state.amps[0].values();
    let mut grad2 = vec![0.0; spec.len()];
    for g in &grad_s {
        for (acc, v) in grad2.iter_mut().zip(g.values()) {
            *acc += v.re * v.re + v.im * v.im;
        }
    }
    let pm = (p - 1) as i32 / 2;
    let f0: Vec<f64> = a0.iter().map(|v| v.norm_sqr().powi(pm)).collect();
    let dphase: Vec<C64> = grad2.iter().zip(&f0).map(|(g, f)| C64::new(-g - omega * f, 0.0)).collect();
    let dphase = dealias(&Field::from_values(spec, dphase).expect("length"));

    // Nonlinear corrections N_j for j = 0..=J, pointwise.
    let mut nl: Vec<Vec<C64>> = vec![vec![C64::new(0.0, 0.0); spec.len()]; jmax + 1];
    if omega != 0.0 {
        let mut coef = [C64::new(0.0, 0.0); MAX_TERMS];
        let mut pw = [C64::new(0.0, 0.0); MAX_TERMS];
        let iw = C64::new(0.0, omega);
        for i in 0..spec.len() {
            for (j, a) in state.amps.iter().enumerate() {
                coef[j] = a.values()[i];
            }
            coef[jmax + 1] = C64::new(0.0, 0.0);
            series::nonlinear_power_into(&coef[..len], p, &mut pw[..len]);
            for j in 0..=jmax {
                nl[j][i] = iw * (pw[j + 1] - coef[j + 1] * f0[i]);
            }
        }
    }

    let mut amps = Vec::with_capacity(jmax + 1);
    let mut prev_lap: Option<Field> = None;
    for (j, a) in state.amps.iter().enumerate() {
        let (grad_a, lap_a) = gradient_and_laplacian(a, &xi2);
        let mut rhs = vec![C64::new(0.0, 0.0); spec.len()];
        for (gs, ga) in grad_s.iter().zip(&grad_a) {
            for (r, (x, y)) in rhs.iter_mut().zip(gs.values().iter().zip(ga.values())) {
                *r -= 2.0 * x * y;
            }
        }
        for (i, r) in rhs.iter_mut().enumerate() {
            *r -= a.values()[i] * lap_s.values()[i] + nl[j][i];
        }
        let mut rhs = dealias(&Field::from_values(spec, rhs).expect("length"));
        if let Some(l) = &prev_lap {
            rhs.axpy(C64::new(0.0, 1.0), l);
        }
        prev_lap = Some(lap_a);
        amps.push(rhs);
    }
    WkbDerivative { phase: dphase, amps }
}

/// Trajectory of the hierarchy on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WkbTrajectory {
    pub states: Vec<WkbState>,
    pub dt: f64,
}

impl WkbTrajectory {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.s).collect()
    }

    pub fn last(&self) -> &WkbState {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn order(&self) -> usize {
        self.states[0].order()
    }
}

fn rk4_step(state: &WkbState, dt: f64) -> WkbState {
    let k1 = hierarchy_rhs(state);
    let k2 = hierarchy_rhs(&state.combine(&k1, 0.5 * dt));
    let k3 = hierarchy_rhs(&state.combine(&k2, 0.5 * dt));
    let k4 = hierarchy_rhs(&state.combine(&k3, dt));
    let mut out = state.clone();
    let w = [dt / 6.0, dt / 3.0, dt / 3.0, dt / 6.0];
    for (k, c) in [&k1, &k2, &k3, &k4].into_iter().zip(w) {
        out.phase.axpy(C64::new(c, 0.0), &k.phase);
        for (a, da) in out.amps.iter_mut().zip(&k.amps) {
            a.axpy(C64::new(c, 0.0), da);
        }
    }
    out.s = state.s + dt;
    out
}

/// Number of uniform steps covering `[s0, s1]` with step at most `dt`.
pub fn step_count(span: f64, dt: f64) -> usize {
    ((span / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// Classical RK4 from `state0.s` to `s_end`, keeping every step. The step is
/// shrunk to `(s_end − s₀)/⌈(s_end − s₀)/dt⌉` so the grid is uniform.
pub fn integrate_wkb(state0: &WkbState, s_end: f64, cfg: &HierarchyConfig) -> Result<WkbTrajectory, WkbError> {
    cfg.validate()?;
    if s_end > cfg.s_max * (1.0 + 1e-12) {
        return Err(WkbError::Horizon { s_end, s_max: cfg.s_max });
    }
    let span = s_end - state0.s;
    if span < 0.0 {
        return Err(WkbError::Config(format!("s_end = {s_end} precedes the initial time")));
    }
    let steps = if span == 0.0 { 0 } else { step_count(span, cfg.dt) };
    let dt = if steps == 0 { cfg.dt } else { span / steps as f64 };
    let a0_init = state0.amps[0].max_abs();
    let mut states = Vec::with_capacity(steps + 1);
    states.push(state0.clone());
    for k in 1..=steps {
        let mut next = rk4_step(states.last().expect("nonempty"), dt);
        next.s = state0.s + k as f64 * dt;
        if !next.fields().all(Field::is_finite) {
            return Err(WkbError::NonFinite(next.s));
        }
        let a0 = next.amps[0].max_abs();
        if a0_init > 0.0 && a0 > cfg.blowup_factor * a0_init {
            return Err(WkbError::BlowUp { s: next.s, growth: a0 / a0_init });
        }
        if let Some(limit) = cfg.resolution_guard {
            let fraction = upper_band_fraction(&next.amps[0]).max(upper_band_fraction(&next.phase));
            if fraction > limit {
                return Err(WkbError::Resolution { s: next.s, fraction });
            }
        }
        states.push(next);
    }
    Ok(WkbTrajectory { states, dt })
}

/// Halves `cfg.dt` until the final state changes by less than `tol` in sup
/// norm, up to `max_halvings`; returns the trajectory at the accepted step.
pub fn integrate_wkb_refined(
    state0: &WkbState,
    s_end: f64,
    cfg: &HierarchyConfig,
    tol: f64,
    max_halvings: usize,
) -> Result<WkbTrajectory, WkbError> {
    let mut c = *cfg;
    let mut coarse = integrate_wkb(state0, s_end, &c)?;
    for _ in 0..max_halvings {
        c.dt *= 0.5;
        let fine = integrate_wkb(state0, s_end, &c)?;
        let change = coarse
            .last()
            .fields()
            .zip(fine.last().fields())
            .map(|(a, b)| a.max_diff(b))
            .fold(0.0, f64::max);
        coarse = fine;
        if change < tol {
            break;
        }
    }
    Ok(coarse)
}

/// First time `sup|a₀|` doubles, scanning up to `s_cap`; `None` if it never does.
pub fn blowup_proxy_time(state0: &WkbState, s_cap: f64, cfg: &HierarchyConfig) -> Option<f64> {
    let mut c = *cfg;
    c.s_max = c.s_max.max(s_cap);
    c.blowup_factor = c.blowup_factor.max(2.0);
    let a0 = state0.amps[0].max_abs();
    let steps = step_count(s_cap - state0.s, c.dt);
    let dt = (s_cap - state0.s) / steps as f64;
    let mut st = state0.clone();
    for k in 1..=steps {
        st = rk4_step(&st, dt);
        if !st.amps[0].is_finite() || st.amps[0].max_abs() >= 2.0 * a0 {
            return Some(state0.s + k as f64 * dt);
        }
    }
    None
}

/// Truncation order used by [`assemble_vapp`]: `min(J, n_override or ⌊c₀/h⌋)`.
pub fn truncation_order(j: usize, h: f64, n_override: Option<usize>, c0: Option<f64>) -> usize {
    let n = match (n_override, c0) {
        (Some(n), _) => n,
        (None, Some(c0)) => (c0 / h).floor().max(0.0) as usize,
        (None, None) => j,
    };
    n.min(j)
}

/// `a^{(n)} = Σ_{j≤n} a_j h^j`.
pub fn truncated_amplitude(state: &WkbState, h: f64, n: usize) -> Field {
    let mut a = state.amps[0].clone();
    let mut hj = 1.0;
    for aj in state.amps.iter().take(n + 1).skip(1) {
        hj *= h;
        a.axpy(C64::new(hj, 0.0), aj);
    }
    a
}

/// `v_app = a^{(n)} e^{iS/h}`.
pub fn assemble_vapp(state: &WkbState, h: f64, n_override: Option<usize>) -> Field {
    assemble_vapp_with(state, h, n_override, None)
}

pub fn assemble_vapp_with(state: &WkbState, h: f64, n_override: Option<usize>, c0: Option<f64>) -> Field {
    let n = truncation_order(state.order(), h, n_override, c0);
    let a = truncated_amplitude(state, h, n);
    a.zip_map(&state.phase, |a, s| a * C64::from_polar(1.0, s.re / h))
}

fn check_uniform(times: &[f64]) -> Result<f64, WkbError> {
    let dt = times[1] - times[0];
    let ok = times.windows(2).all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt.abs().max(1e-300));
    if ok && dt > 0.0 {
        Ok(dt)
    } else {
        Err(WkbError::NonUniform)
    }
}

/// Fourth-order central difference `(f₋₂ − 8f₋₁ + 8f₁ − f₂)/(12Δ)`.
fn central4(fm2: &Field, fm1: &Field, fp1: &Field, fp2: &Field, dt: f64) -> Field {
    let mut out = fm2 - fp2;
    out.axpy(C64::new(8.0, 0.0), fp1);
    out.axpy(C64::new(-8.0, 0.0), fm1);
    out.map(|v| v / (12.0 * dt))
}

/// Residual `‖ih∂ₛv_app + h²Δv_app − ω|v_app|^{p−1}v_app‖_{L²}` at every
/// interior slice (two slices dropped at each end). The phase factor is
/// removed analytically, so `e^{iS/h}` never has to be resolved:
///
/// ```text
/// r e^{−iS/h} = ih∂ₛa − a∂ₛS + h²Δa + 2ih∇S·∇a + ihaΔS − a|∇S|² − ω|a|^{p−1}a
/// ```
pub fn wkb_residual(traj: &WkbTrajectory, h: f64, n: usize) -> Result<Vec<(f64, f64)>, WkbError> {
    let m = traj.states.len();
    if m < 5 {
        return Err(WkbError::TooFewSlices(m));
    }
    let j = traj.order();
    if n > j {
        return Err(WkbError::TruncationOrder { n, j });
    }
    let times = traj.times();
    let dt = check_uniform(&times)?;
    let amp: Vec<Field> = traj.states.iter().map(|st| truncated_amplitude(st, h, n)).collect();
    let spec = *traj.states[0].spec();
    let xi2 = spec.xi_squared();
    let p = traj.states[0].p;
    let omega = traj.states[0].omega;
    let ih = C64::new(0.0, h);
    let mut out = Vec::with_capacity(m - 4);
    for k in 2..m - 2 {
        let st = &traj.states[k];
        let a = &amp[k];
        let da = central4(&amp[k - 2], &amp[k - 1], &amp[k + 1], &amp[k + 2], dt);
        let ps = |i: usize| &traj.states[i].phase;
        let ds = central4(ps(k - 2), ps(k - 1), ps(k + 1), ps(k + 2), dt);
        let (grad_s, lap_s) = gradient_and_laplacian(&st.phase, &xi2);
        let (grad_a, lap_a) = gradient_and_laplacian(a, &xi2);
        let mut r = vec![C64::new(0.0, 0.0); spec.len()];
        for i in 0..spec.len() {
            let av = a.values()[i];
            let mut gsga = C64::new(0.0, 0.0);
            let mut gs2 = 0.0;
            for (gs, ga) in grad_s.iter().zip(&grad_a) {
                gsga += gs.values()[i] * ga.values()[i];
                gs2 += gs.values()[i].re * gs.values()[i].re;
            }
            let f = av.norm_sqr().powi((p as i32 - 1) / 2);
            r[i] = ih * da.values()[i] - av * ds.values()[i].re
                + lap_a.values()[i] * (h * h)
                + 2.0 * ih * gsga
                + ih * av * lap_s.values()[i].re
                - av * gs2
                - av * f * omega;
        }
        let r = Field::from_values(spec, r).expect("length");
        out.push((st.s, lebesgue_norm(&r, 2.0)));
    }
    Ok(out)
}

/// Metadata written next to exported slices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryManifest {
    pub kind: String,
    pub times: Vec<f64>,
    pub order: usize,
    pub dt: f64,
    pub p: u32,
    pub omega: f64,
    pub grid: GridSpec,
    pub files: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

fn write_field(path: &Path, f: &Field) -> std::io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    grid::write_binary(&mut w, f)
}

/// Writes one binary per field of every slice plus `manifest.json`; the
/// `files` entry of slice `k` lists `S` first, then `a_0..a_J`.
pub fn export_trajectory(
    dir: &Path,
    traj: &WkbTrajectory,
    meta: serde_json::Value,
) -> std::io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(traj.states.len());
    for (k, st) in traj.states.iter().enumerate() {
        let mut names = Vec::with_capacity(st.amps.len() + 1);
        let name = format!("slice{k:05}_S.bin");
        write_field(&dir.join(&name), &st.phase)?;
        names.push(name);
        for (j, a) in st.amps.iter().enumerate() {
            let name = format!("slice{k:05}_a{j}.bin");
            write_field(&dir.join(&name), a)?;
            names.push(name);
        }
        files.push(names);
    }
    let s0 = &traj.states[0];
    let manifest = TrajectoryManifest {
        kind: "wkb".into(),
        times: traj.times(),
        order: traj.order(),
        dt: traj.dt,
        p: s0.p,
        omega: s0.omega,
        grid: *s0.spec(),
        files,
        h: None,
        meta,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}
