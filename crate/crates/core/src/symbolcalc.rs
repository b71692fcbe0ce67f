//! Truncated analytic symbols `b = Σ_{j≤J} b_j(s, z) h^j` on a space-time
//! grid, the majorant norms
//!
//! ```text
//! ‖b‖_θ = Σ_j ε^j/j! · sup_{0<τ<1} sup_{0≤s<s₀(1−τ)} sup_{|Im z|<lτ} |W(z) b_j(s,z)| (1−τ−s/s₀)^{j+θ}
//! ```
//!
//! with `W(z) = e^{(1+z²)^{1/2}}`, the operators `∂ₛ⁻¹`, `∂ₛ⁻²`, and the
//! fixed point `u = F(s, u)` for `u = (∂ₛ²φ, ∂ₛ²a)`, `φ = ∇S`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{
    apply_table, dealias, gradient, laplacian, strip_table, Field, GridError, GridSpec, C64,
};
use crate::series::{self, MAX_TERMS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SymbolError {
    #[error("invalid majorant parameters: {0}")]
    Params(String),
    #[error("|Im z| = {0} violates the strip |Im z| < 1/2")]
    Strip(f64),
    #[error("symbol covers s <= {have} but the norm needs s0*(1-1/tau_samples) = {need}")]
    Coverage { have: f64, need: f64 },
    #[error("symbol families do not share one grid")]
    Mismatch,
    #[error("time antiderivative needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("initial phase gradient is not curl-free (spectral curl {0:e})")]
    NotIrrotational(f64),
    #[error("initial phase gradient has nonzero mean {0:e}; no periodic potential exists")]
    NoPotential(f64),
    #[error("h = {h} must satisfy 0 < h < eps = {eps}")]
    SmallParameter { h: f64, eps: f64 },
    #[error("Picard iteration diverged at s0 = {s0}: distance ratios {ratios:?}")]
    Divergence { s0: f64, ratios: Vec<f64> },
    #[error("series order {0} exceeds the supported maximum")]
    Order(usize),
}

/// Parameters of the space `H(s₀, l, B)` and of the discretized sups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MajorantParams {
    pub s0: f64,
    pub l: f64,
    pub b: f64,
    pub eps: f64,
    pub theta: f64,
    pub tau_samples: usize,
    /// Shifts per axis for the sup over `Im z`, including 0 (odd).
    pub strip_samples: usize,
    /// The sup over `Re z` is taken over `|Re z_a| ≤ x_window·L`, away from the
    /// periodic seam where `|W| ~ e^{L}` amplifies wrap-around error.
    pub x_window: f64,
}

impl Default for MajorantParams {
    fn default() -> Self {
        Self { s0: 0.05, l: 0.25, b: 1.0, eps: 0.5, theta: 1.0, tau_samples: 32, strip_samples: 9, x_window: 0.5 }
    }
}

impl MajorantParams {
    pub fn validate(&self) -> Result<(), SymbolError> {
        let bad = |m: &str| Err(SymbolError::Params(m.to_string()));
        if !(self.s0 > 0.0 && self.s0.is_finite()) {
            return bad("s0 must be positive");
        }
        if !(self.l > 0.0 && self.l < 0.5) {
            return bad("l must lie in (0, 1/2)");
        }
        if !(self.b > 0.0) {
            return bad("B must be positive");
        }
        if !(self.eps > 0.0 && self.eps < 1.0 / self.b) {
            return bad("eps must lie in (0, 1/B)");
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return bad("theta must lie in [0, 1]");
        }
        if self.tau_samples < 1 {
            return bad("tau_samples must be >= 1");
        }
        if self.strip_samples < 1 || self.strip_samples % 2 == 0 {
            return bad("strip_samples must be odd");
        }
        if !(self.x_window > 0.0 && self.x_window <= 1.0) {
            return bad("x_window must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn with_s0(&self, s0: f64) -> Self {
        Self { s0, ..*self }
    }

    /// Doubles the τ and strip sample counts (keeping the strip count odd).
    pub fn doubled_samples(&self) -> Self {
        Self { tau_samples: 2 * self.tau_samples, strip_samples: 2 * self.strip_samples - 1, ..*self }
    }
}

/// `W(z) = exp(√(1+z²))` on the principal branch, `z² = Σ z_a²`.
pub fn weight(z: &[C64]) -> Result<C64, SymbolError> {
    if let Some(v) = z.iter().find(|v| v.im.abs() >= 0.5) {
        return Err(SymbolError::Strip(v.im.abs()));
    }
    let z2: C64 = z.iter().map(|v| v * v).sum();
    Ok((C64::new(1.0, 0.0) + z2).sqrt().exp())
}

/// Symbol coefficients `b_j(s_k, ·)` on the uniform grid `s_k = k·ds`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolSeries {
    spec: GridSpec,
    ds: f64,
    coeffs: Vec<Vec<Field>>,
}

impl SymbolSeries {
    pub fn new(spec: GridSpec, ds: f64, coeffs: Vec<Vec<Field>>) -> Result<Self, SymbolError> {
        if coeffs.is_empty() || coeffs[0].is_empty() {
            return Err(SymbolError::TooFewSamples(0));
        }
        let m = coeffs[0].len();
        if coeffs.iter().any(|c| c.len() != m || c.iter().any(|f| *f.spec() != spec)) {
            return Err(SymbolError::Mismatch);
        }
        if !(ds > 0.0) {
            return Err(SymbolError::Params("ds must be positive".into()));
        }
        Ok(Self { spec, ds, coeffs })
    }

    pub fn zeros(spec: GridSpec, order: usize, s0_used: f64, samples: usize) -> Self {
        let ds = s0_used / (samples.max(2) - 1) as f64;
        Self { spec, ds, coeffs: vec![vec![Field::zeros(spec); samples]; order + 1] }
    }

    /// Samples `b_j(s, z) = f(j, s, z)` on `samples` points of `[0, s0_used]`.
    pub fn from_fn(
        spec: GridSpec,
        order: usize,
        s0_used: f64,
        samples: usize,
        f: impl Fn(usize, f64, &[f64]) -> C64,
    ) -> Self {
        let ds = s0_used / (samples.max(2) - 1) as f64;
        let coeffs = (0..=order)
            .map(|j| (0..samples).map(|k| Field::from_fn(spec, |x| f(j, k as f64 * ds, x))).collect())
            .collect();
        Self { spec, ds, coeffs }
    }

    /// Time-independent symbol with the given coefficients.
    pub fn constant_in_time(coeffs: &[Field], s0_used: f64, samples: usize) -> Result<Self, SymbolError> {
        let spec = *coeffs.first().ok_or(SymbolError::TooFewSamples(0))?.spec();
        let ds = s0_used / (samples.max(2) - 1) as f64;
        Self::new(spec, ds, coeffs.iter().map(|c| vec![c.clone(); samples]).collect())
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn samples(&self) -> usize {
        self.coeffs[0].len()
    }

    pub fn ds(&self) -> f64 {
        self.ds
    }

    pub fn s0_used(&self) -> f64 {
        self.ds * (self.samples() - 1) as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.samples()).map(|k| k as f64 * self.ds).collect()
    }

    pub fn coeff(&self, j: usize, k: usize) -> &Field {
        &self.coeffs[j][k]
    }

    pub fn coeffs(&self) -> &[Vec<Field>] {
        &self.coeffs
    }

    /// Coefficients at time index `k`.
    pub fn slice(&self, k: usize) -> Vec<Field> {
        self.coeffs.iter().map(|c| c[k].clone()).collect()
    }

    /// `Σ_j b_j(s_k) h^j`.
    pub fn evaluate(&self, h: f64, k: usize) -> Field {
        let mut acc = self.coeffs[0][k].clone();
        let mut hj = 1.0;
        for c in &self.coeffs[1..] {
            hj *= h;
            acc.axpy(C64::new(hj, 0.0), &c[k]);
        }
        acc
    }

    fn map_fields(&self, f: impl Fn(&Field) -> Field) -> Self {
        Self { spec: self.spec, ds: self.ds, coeffs: self.coeffs.iter().map(|c| c.iter().map(&f).collect()).collect() }
    }

    fn same_grid(&self, other: &Self) -> bool {
        self.spec == other.spec && self.samples() == other.samples() && (self.ds - other.ds).abs() <= 1e-14 * self.ds
    }

    pub fn scale(&self, c: C64) -> Self {
        self.map_fields(|f| f.scale(c))
    }

    /// Coefficientwise `self + c·other`, padding the shorter series with zeros.
    pub fn add_scaled(&self, c: C64, other: &Self) -> Result<Self, SymbolError> {
        if !self.same_grid(other) {
            return Err(SymbolError::Mismatch);
        }
        let order = self.order().max(other.order());
        let coeffs = (0..=order)
            .map(|j| {
                (0..self.samples())
                    .map(|k| {
                        let mut f = self.coeffs.get(j).map_or_else(|| Field::zeros(self.spec), |c| c[k].clone());
                        if let Some(o) = other.coeffs.get(j) {
                            f.axpy(c, &o[k]);
                        }
                        f
                    })
                    .collect()
            })
            .collect();
        Ok(Self { spec: self.spec, ds: self.ds, coeffs })
    }

    /// Keeps the samples with `s ≤ s_new`.
    pub fn restrict(&self, s_new: f64) -> Self {
        let keep = ((s_new / self.ds) * (1.0 + 1e-12)).floor() as usize + 1;
        let keep = keep.min(self.samples());
        Self {
            spec: self.spec,
            ds: self.ds,
            coeffs: self.coeffs.iter().map(|c| c[..keep].to_vec()).collect(),
        }
    }

    /// `∂_{z_a} b` for each axis.
    pub fn gradient(&self) -> Vec<Self> {
        let per: Vec<Vec<Vec<Field>>> =
            self.coeffs.iter().map(|c| c.iter().map(gradient).collect()).collect();
        (0..self.spec.d())
            .map(|a| Self {
                spec: self.spec,
                ds: self.ds,
                coeffs: per.iter().map(|c| c.iter().map(|g| g[a].clone()).collect()).collect(),
            })
            .collect()
    }

    /// `hΔb = Σ_j Δb_j h^{j+1}`.
    pub fn h_laplacian(&self) -> Self {
        let mut coeffs = vec![vec![Field::zeros(self.spec); self.samples()]];
        coeffs.extend(self.coeffs.iter().map(|c| c.iter().map(laplacian).collect()));
        Self { spec: self.spec, ds: self.ds, coeffs }
    }

    /// `(b − b₀)/h = Σ_j b_{j+1} h^j`.
    pub fn shift_down(&self) -> Self {
        let coeffs = if self.order() == 0 {
            vec![vec![Field::zeros(self.spec); self.samples()]]
        } else {
            self.coeffs[1..].to_vec()
        };
        Self { spec: self.spec, ds: self.ds, coeffs }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.iter().all(|f| f.max_abs() == 0.0))
    }
}

/// Cumulative composite trapezoid `∫₀^s b(σ) dσ`, coefficientwise.
pub fn time_antiderivative(b: &SymbolSeries) -> Result<SymbolSeries, SymbolError> {
    let m = b.samples();
    if m < 2 {
        return Err(SymbolError::TooFewSamples(m));
    }
    let half = C64::new(0.5 * b.ds, 0.0);
    let coeffs = b
        .coeffs
        .iter()
        .map(|c| {
            let mut out = Vec::with_capacity(m);
            let mut acc = Field::zeros(b.spec);
            out.push(acc.clone());
            for k in 1..m {
                acc.axpy(half, &c[k - 1]);
                acc.axpy(half, &c[k]);
                out.push(acc.clone());
            }
            out
        })
        .collect();
    Ok(SymbolSeries { spec: b.spec, ds: b.ds, coeffs })
}

/// Default truncation cap of [`symbol_product`].
pub const J_CAP: usize = 8;

/// Cauchy product `Σ_j (Σ_{k≤j} b¹_k b²_{j−k}) h^j`, truncated at
/// `min(J₁+J₂, cap)` and dealiased.
pub fn symbol_product(b1: &SymbolSeries, b2: &SymbolSeries, cap: usize) -> Result<SymbolSeries, SymbolError> {
    if !b1.same_grid(b2) {
        return Err(SymbolError::Mismatch);
    }
    let order = (b1.order() + b2.order()).min(cap);
    let m = b1.samples();
    let mut coeffs = vec![Vec::with_capacity(m); order + 1];
    for k in 0..m {
        let s1 = b1.slice(k);
        let s2 = b2.slice(k);
        for (j, f) in series::field_product(&s1, &s2, order + 1).into_iter().enumerate() {
            coeffs[j].push(f);
        }
    }
    Ok(SymbolSeries { spec: b1.spec, ds: b1.ds, coeffs })
}

/// Evaluator for `‖·‖_θ` caching strip tables and weights for one grid.
pub struct MajorantNorm {
    mp: MajorantParams,
    spec: GridSpec,
    taus: Vec<(f64, Vec<usize>)>,
    tables: Vec<Vec<C64>>,
    weights: Vec<Vec<f64>>,
    window: Vec<usize>,
}

impl MajorantNorm {
    pub fn new(spec: GridSpec, mp: MajorantParams) -> Result<Self, SymbolError> {
        mp.validate()?;
        let d = spec.d();
        let k = (mp.strip_samples - 1) / 2;
        let xcap = mp.x_window * spec.half_width() * (1.0 + 1e-12);
        let mut window = Vec::new();
        spec.for_each_point(|i, x| {
            if x.iter().all(|v| v.abs() <= xcap) {
                window.push(i);
            }
        });
        let mut points = vec![[0.0f64; 3]; spec.len()];
        spec.for_each_point(|i, x| points[i][..d].copy_from_slice(x));

        let mut shifts: Vec<Vec<f64>> = Vec::new();
        let mut taus = Vec::with_capacity(mp.tau_samples);
        let per_axis = mp.strip_samples;
        let combos = per_axis.pow(d as u32);
        for i in 1..=mp.tau_samples {
            let tau = i as f64 / (mp.tau_samples + 1) as f64;
            let radius = mp.l * tau;
            let mut idx = Vec::new();
            for c in 0..combos {
                let mut rem = c;
                let mut y = vec![0.0; d];
                for a in 0..d {
                    let m = (rem % per_axis) as f64 - k as f64;
                    rem /= per_axis;
                    y[a] = if k == 0 { 0.0 } else { radius * m / k as f64 };
                }
                let r = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                if r > radius * (1.0 + 1e-12) {
                    continue;
                }
                let pos = match shifts.iter().position(|s| s == &y) {
                    Some(p) => p,
                    None => {
                        shifts.push(y);
                        shifts.len() - 1
                    }
                };
                idx.push(pos);
            }
            taus.push((tau, idx));
        }
        let mut tables = Vec::with_capacity(shifts.len());
        let mut weights = Vec::with_capacity(shifts.len());
        let mut z = vec![C64::new(0.0, 0.0); d];
        for y in &shifts {
            tables.push(strip_table(&spec, y)?);
            let mut w = Vec::with_capacity(window.len());
            for &i in &window {
                for a in 0..d {
                    z[a] = C64::new(points[i][a], y[a]);
                }
                w.push(weight(&z)?.norm());
            }
            weights.push(w);
        }
        Ok(Self { mp, spec, taus, tables, weights, window })
    }

    pub fn params(&self) -> &MajorantParams {
        &self.mp
    }

    /// `sup_x |W(x+iy) f(x+iy)|` over the window, for every cached shift.
    fn strip_sups(&self, f: &Field) -> Vec<f64> {
        let spectrum = f.spectrum();
        self.tables
            .iter()
            .zip(&self.weights)
            .map(|(t, w)| {
                let g = apply_table(&self.spec, &spectrum, t);
                let v = g.values();
                self.window.iter().zip(w).map(|(&i, wi)| wi * v[i].norm()).fold(0.0, f64::max)
            })
            .collect()
    }

    /// Discretized `sup_τ sup_s sup_y |W b_j|(1−τ−s/s₀)^{j+θ}` for one coefficient family.
    fn coefficient_sup(&self, fam: &[Field], ds: f64, exponent: f64) -> f64 {
        let s0 = self.mp.s0;
        let tau_min = self.taus.first().map_or(0.0, |t| t.0);
        let mut best = 0.0f64;
        let sups: Vec<Option<Vec<f64>>> = fam
            .iter()
            .enumerate()
            .map(|(k, f)| {
                let s = k as f64 * ds;
                (s < s0 * (1.0 - tau_min) && f.max_abs() > 0.0).then(|| self.strip_sups(f))
            })
            .collect();
        for (tau, idx) in &self.taus {
            for (k, sv) in sups.iter().enumerate() {
                let s = k as f64 * ds;
                let bracket = 1.0 - tau - s / s0;
                let Some(sv) = sv else { continue };
                if bracket <= 0.0 {
                    continue;
                }
                let m = idx.iter().map(|&i| sv[i]).fold(0.0, f64::max);
                best = best.max(m * bracket.powf(exponent));
            }
        }
        best
    }

    pub fn norm(&self, b: &SymbolSeries, theta: f64) -> Result<f64, SymbolError> {
        if b.spec != self.spec {
            return Err(SymbolError::Mismatch);
        }
        let need = self.mp.s0 * (1.0 - 1.0 / self.mp.tau_samples as f64);
        if b.s0_used() < need * (1.0 - 1e-12) {
            return Err(SymbolError::Coverage { have: b.s0_used(), need });
        }
        let mut total = 0.0;
        let mut fact = 1.0;
        for (j, fam) in b.coeffs.iter().enumerate() {
            if j > 0 {
                fact *= j as f64;
            }
            let c = self.mp.eps.powi(j as i32) / fact;
            total += c * self.coefficient_sup(fam, b.ds, j as f64 + theta);
        }
        Ok(total)
    }

    /// Sum of the norms of the components of a vector symbol.
    pub fn norm_vec(&self, b: &[SymbolSeries], theta: f64) -> Result<f64, SymbolError> {
        b.iter().map(|x| self.norm(x, theta)).sum()
    }
}

pub fn majorant_norm(b: &SymbolSeries, mp: &MajorantParams, theta: f64) -> Result<f64, SymbolError> {
    MajorantNorm::new(b.spec, *mp)?.norm(b, theta)
}

/// A measured ratio, or `Vacuous` when its denominator vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ratio {
    Value(f64),
    Vacuous,
}

impl Ratio {
    fn of(num: f64, den: f64) -> Self {
        if den > 0.0 {
            Ratio::Value(num / den)
        } else {
            Ratio::Vacuous
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Ratio::Value(v) => Some(*v),
            Ratio::Vacuous => None,
        }
    }
}

/// `‖b¹b²‖_θ / (‖b¹‖₀‖b²‖_θ)`.
pub fn check_product_inequality(
    ev: &MajorantNorm,
    b1: &SymbolSeries,
    b2: &SymbolSeries,
    theta: f64,
) -> Result<Ratio, SymbolError> {
    let den = ev.norm(b1, 0.0)? * ev.norm(b2, theta)?;
    if den == 0.0 {
        return Ok(Ratio::Vacuous);
    }
    let prod = symbol_product(b1, b2, J_CAP)?;
    Ok(Ratio::of(ev.norm(&prod, theta)?, den))
}

/// Ratios of the smoothing estimates for one symbol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingRatios {
    /// `‖∂ₛ⁻¹∇b‖₁ / (s₀‖b‖₁)`.
    pub gradient: Ratio,
    /// `‖∂ₛ⁻¹hΔb‖₁ / (s₀‖b‖₁)`.
    pub h_laplacian: Ratio,
    /// `‖∂ₛ⁻¹((b−b₀)/h)‖₁ / (s₀‖b‖₁)`.
    pub shift: Ratio,
    /// `‖∂ₛ⁻¹b‖_θ / (s₀‖b‖₁)` at `θ = mp.theta`.
    pub antiderivative: Ratio,
    /// `‖∂ₛ⁻²b‖₀ / (s₀‖b‖₁)`.
    pub double_antiderivative: Ratio,
}

pub fn check_smoothing_inequalities(ev: &MajorantNorm, b: &SymbolSeries) -> Result<SmoothingRatios, SymbolError> {
    let s0 = ev.mp.s0;
    let den = s0 * ev.norm(b, 1.0)?;
    if den == 0.0 {
        return Ok(SmoothingRatios {
            gradient: Ratio::Vacuous,
            h_laplacian: Ratio::Vacuous,
            shift: Ratio::Vacuous,
            antiderivative: Ratio::Vacuous,
            double_antiderivative: Ratio::Vacuous,
        });
    }
    let ib = time_antiderivative(b)?;
    let grad: Vec<SymbolSeries> = ib.gradient();
    let g = ev.norm_vec(&grad, 1.0)?;
    let hl = ev.norm(&ib.h_laplacian(), 1.0)?;
    let sh = ev.norm(&ib.shift_down(), 1.0)?;
    let a1 = ev.norm(&ib, ev.mp.theta)?;
    let a2 = ev.norm(&time_antiderivative(&ib)?, 0.0)?;
    Ok(SmoothingRatios {
        gradient: Ratio::of(g, den),
        h_laplacian: Ratio::of(hl, den),
        shift: Ratio::of(sh, den),
        antiderivative: Ratio::of(a1, den),
        double_antiderivative: Ratio::of(a2, den),
    })
}

/// `‖(∂ₛ⁻¹b¹)(∂ₛ⁻¹b²)‖₁ / (s₀²‖b¹‖₁‖b²‖₁)`.
pub fn check_antiderivative_product(ev: &MajorantNorm, b1: &SymbolSeries, b2: &SymbolSeries) -> Result<Ratio, SymbolError> {
    let s0 = ev.mp.s0;
    let den = s0 * s0 * ev.norm(b1, 1.0)? * ev.norm(b2, 1.0)?;
    if den == 0.0 {
        return Ok(Ratio::Vacuous);
    }
    let p = symbol_product(&time_antiderivative(b1)?, &time_antiderivative(b2)?, J_CAP)?;
    Ok(Ratio::of(ev.norm(&p, 1.0)?, den))
}

/// Closed-form random symbol used by the corpus:
/// `b_j(s, z) = (α_j + β_j s/s_ref) e^{−(z−c_j)²/w_j²} (1 + ½Σ_k (u_{jk} cos kz + v_{jk} sin kz))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSymbol {
    pub terms: Vec<RandomTerm>,
    pub s_ref: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomTerm {
    pub alpha: (f64, f64),
    pub beta: (f64, f64),
    pub center: f64,
    pub width: f64,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl RandomSymbol {
    pub fn draw(rng: &mut impl Rng, order: usize, s_ref: f64) -> Self {
        let mut c = |a: f64, b: f64| rng.gen_range(a..b);
        let terms = (0..=order)
            .map(|_| RandomTerm {
                alpha: (c(-1.0, 1.0), c(-1.0, 1.0)),
                beta: (c(-1.0, 1.0), c(-1.0, 1.0)),
                center: c(-1.0, 1.0),
                width: c(0.8, 1.5),
                cos: (0..2).map(|_| c(-1.0, 1.0)).collect(),
                sin: (0..2).map(|_| c(-1.0, 1.0)).collect(),
            })
            .collect();
        Self { terms, s_ref }
    }

    pub fn value(&self, j: usize, s: f64, z: f64) -> C64 {
        let t = &self.terms[j];
        let amp = C64::new(t.alpha.0, t.alpha.1) + C64::new(t.beta.0, t.beta.1) * (s / self.s_ref);
        let env = (-(z - t.center).powi(2) / (t.width * t.width)).exp();
        let mut trig = 1.0;
        for (k, (a, b)) in t.cos.iter().zip(&t.sin).enumerate() {
            let kz = (k + 1) as f64 * z;
            trig += 0.5 * (a * kz.cos() + b * kz.sin());
        }
        amp * env * trig
    }

    pub fn sample(&self, spec: GridSpec, s0_used: f64, samples: usize) -> SymbolSeries {
        SymbolSeries::from_fn(spec, self.terms.len() - 1, s0_used, samples, |j, s, x| self.value(j, s, x[0]))
    }
}

/// Deterministic corpus of `count` two-term symbols from `seed`.
pub fn symbol_corpus(seed: u64, count: usize, s_ref: f64) -> Vec<RandomSymbol> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| RandomSymbol::draw(&mut rng, 1, s_ref)).collect()
}

/// Corpus statistics of one inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityStats {
    pub ratio_max: f64,
    pub ratio_mean: f64,
    pub samples: usize,
    pub vacuous: usize,
}

impl InequalityStats {
    fn from(r: &[Ratio]) -> Self {
        let v: Vec<f64> = r.iter().filter_map(Ratio::value).collect();
        let n = v.len();
        Self {
            ratio_max: v.iter().copied().fold(0.0, f64::max),
            ratio_mean: if n > 0 { v.iter().sum::<f64>() / n as f64 } else { 0.0 },
            samples: n,
            vacuous: r.len() - n,
        }
    }
}

pub const INEQUALITIES: [&str; 7] = [
    "product",
    "gradient",
    "h_laplacian",
    "shift",
    "antiderivative",
    "double_antiderivative",
    "antiderivative_product",
];

/// Full corpus report, regenerable from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub seed: u64,
    pub count: usize,
    pub grid: GridSpec,
    pub time_samples: usize,
    pub params: MajorantParams,
    pub inequalities: Vec<(String, InequalityStats)>,
}

impl CorpusReport {
    pub fn get(&self, name: &str) -> Option<&InequalityStats> {
        self.inequalities.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }
}

/// Runs every lemma check on the corpus; pair checks use `(b_i, b_{i+1 mod n})`.
/// Symbols are sampled on `[0, mp.s0]` with `time_samples` points.
pub fn corpus_checks(
    corpus: &[RandomSymbol],
    seed: u64,
    spec: GridSpec,
    mp: &MajorantParams,
    time_samples: usize,
) -> Result<CorpusReport, SymbolError> {
    let ev = MajorantNorm::new(spec, *mp)?;
    let symbols: Vec<SymbolSeries> = corpus.iter().map(|s| s.sample(spec, mp.s0, time_samples)).collect();
    let n = symbols.len();
    let rows: Vec<Result<[Ratio; 7], SymbolError>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let b = &symbols[i];
            let next = &symbols[(i + 1) % n];
            let prod = check_product_inequality(&ev, b, next, mp.theta)?;
            let sm = check_smoothing_inequalities(&ev, b)?;
            let ap = check_antiderivative_product(&ev, b, next)?;
            Ok([prod, sm.gradient, sm.h_laplacian, sm.shift, sm.antiderivative, sm.double_antiderivative, ap])
        })
        .collect();
    let rows: Vec<[Ratio; 7]> = rows.into_iter().collect::<Result<_, _>>()?;
    let inequalities = INEQUALITIES
        .iter()
        .enumerate()
        .map(|(c, name)| (name.to_string(), InequalityStats::from(&rows.iter().map(|r| r[c]).collect::<Vec<_>>())))
        .collect();
    Ok(CorpusReport { seed, count: n, grid: spec, time_samples, params: *mp, inequalities })
}

/// Options of [`picard_solve`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardConfig {
    pub p: u32,
    pub omega: f64,
    /// Time steps on `[0, s₀]`.
    pub steps: usize,
    pub iters: usize,
    /// Stop once the iterate distance falls below `tol·max(1, ‖u‖₁)`.
    pub tol: f64,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self { p: 3, omega: 1.0, steps: 64, iters: 30, tol: 1e-9 }
    }
}

/// Output of [`picard_solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct PicardSolution {
    /// Components of `φ = ∇S`.
    pub phi: Vec<SymbolSeries>,
    pub amplitude: SymbolSeries,
    /// `S` recovered by time integration of `−(φ·φ + ωf(a₀))`.
    pub phase: SymbolSeries,
    /// `‖u⁽ᵏ⁾ − u⁽ᵏ⁻¹⁾‖₁` for `k = 1, 2, …`.
    pub distances: Vec<f64>,
    /// `distances[k]/distances[k−1]`.
    pub ratios: Vec<f64>,
    /// Grid sup of the first-order system residual, by central differences in `s`.
    pub residual: f64,
}

struct Fields<'a> {
    phi: &'a [Field],
    dphi: &'a [Field],
    a: &'a [Field],
    da: &'a [Field],
}

/// Right-hand side of the first-order system at one time slice:
/// `∂ₛφ = −2(φ·∇)φ − ω∇f(a₀)` and the amplitude hierarchy with `∇S = φ`.
fn first_order_rhs(phi: &[Field], a: &[Field], p: u32, omega: f64) -> (Vec<Field>, Vec<Field>) {
    let spec = *a[0].spec();
    let d = spec.d();
    let jmax = a.len() - 1;
    let len = jmax + 2;
    let f0 = a[0].map(|v| C64::new(v.norm_sqr().powi((p as i32 - 1) / 2), 0.0));
    let grad_f0 = gradient(&f0);
    let jac: Vec<Vec<Field>> = phi.iter().map(gradient).collect();
    let div = (0..d).fold(Field::zeros(spec), |acc, c| &acc + &jac[c][c]);
    let dphi = (0..d)
        .map(|c| {
            let mut adv = Field::zeros(spec);
            for b in 0..d {
                adv += &(&phi[b] * &jac[c][b]);
            }
            let mut out = &adv * -2.0;
            out.axpy(C64::new(-omega, 0.0), &grad_f0[c]);
            dealias(&out)
        })
        .collect();
    let nl = nonlinear_terms(a, &f0, p, omega, len);
    let mut da = Vec::with_capacity(jmax + 1);
    for j in 0..=jmax {
        let ga = gradient(&a[j]);
        let mut out = &(&a[j] * &div) * -1.0;
        for b in 0..d {
            out.axpy(C64::new(-2.0, 0.0), &(&phi[b] * &ga[b]));
        }
        out -= &nl[j];
        let mut out = dealias(&out);
        if j > 0 {
            out.axpy(C64::new(0.0, 1.0), &laplacian(&a[j - 1]));
        }
        da.push(out);
    }
    (dphi, da)
}

fn nonlinear_terms(a: &[Field], f0: &Field, p: u32, omega: f64, len: usize) -> Vec<Field> {
    let jmax = len - 2;
    let ext: Vec<Field> = a.iter().cloned().chain(std::iter::once(Field::zeros(*a[0].spec()))).collect();
    series::pointwise(&[&ext, std::slice::from_ref(f0)], jmax + 1, |c| {
        let mut pw = [C64::new(0.0, 0.0); MAX_TERMS];
        series::nonlinear_power_into(&c[0], p, &mut pw[..len]);
        (0..=jmax).map(|j| C64::new(0.0, omega) * (pw[j + 1] - c[0][j + 1] * c[1][0].re)).collect()
    })
}

/// `s`-derivative of [`first_order_rhs`] along `(∂ₛφ, ∂ₛa)`.
fn second_order_rhs(x: &Fields, p: u32, omega: f64) -> (Vec<Field>, Vec<Field>) {
    let spec = *x.a[0].spec();
    let d = spec.d();
    let jmax = x.a.len() - 1;
    let len = jmax + 2;
    let pm = (p as i32 - 1) / 2;
    // ∂ₛ f(a₀) = (p−1)|a₀|^{p−3} Re(ā₀ ∂ₛa₀)
    let df0 = x.a[0].zip_map(&x.da[0], |a, da| {
        let r = a.norm_sqr();
        let base = if pm == 1 { 1.0 } else { r.powi(pm - 1) };
        C64::new((p as f64 - 1.0) * base * (a.conj() * da).re, 0.0)
    });
    let f0 = x.a[0].map(|v| C64::new(v.norm_sqr().powi(pm), 0.0));
    let grad_df0 = gradient(&df0);
    let jac: Vec<Vec<Field>> = x.phi.iter().map(gradient).collect();
    let djac: Vec<Vec<Field>> = x.dphi.iter().map(gradient).collect();
    let div = (0..d).fold(Field::zeros(spec), |acc, c| &acc + &jac[c][c]);
    let ddiv = (0..d).fold(Field::zeros(spec), |acc, c| &acc + &djac[c][c]);
    let u1 = (0..d)
        .map(|c| {
            let mut adv = Field::zeros(spec);
            for b in 0..d {
                adv += &(&x.dphi[b] * &jac[c][b]);
                adv += &(&x.phi[b] * &djac[c][b]);
            }
            let mut out = &adv * -2.0;
            out.axpy(C64::new(-omega, 0.0), &grad_df0[c]);
            dealias(&out)
        })
        .collect();

    let ext = |v: &[Field]| -> Vec<Field> { v.iter().cloned().chain(std::iter::once(Field::zeros(spec))).collect() };
    let a_ext = ext(x.a);
    let da_ext = ext(x.da);
    let dnl = series::pointwise(
        &[&a_ext, &da_ext, std::slice::from_ref(&f0), std::slice::from_ref(&df0)],
        jmax + 1,
        |c| {
            let mut dpw = [C64::new(0.0, 0.0); MAX_TERMS];
            series::nonlinear_power_derivative_into(&c[0], &c[1], p, &mut dpw[..len]);
            (0..=jmax)
                .map(|j| {
                    C64::new(0.0, omega) * (dpw[j + 1] - c[1][j + 1] * c[2][0].re - c[0][j + 1] * c[3][0].re)
                })
                .collect()
        },
    );
    let mut u2 = Vec::with_capacity(jmax + 1);
    for j in 0..=jmax {
        let ga = gradient(&x.a[j]);
        let gda = gradient(&x.da[j]);
        let mut out = &(&x.a[j] * &ddiv) * -1.0;
        out -= &(&x.da[j] * &div);
        for b in 0..d {
            out.axpy(C64::new(-2.0, 0.0), &(&x.dphi[b] * &ga[b]));
            out.axpy(C64::new(-2.0, 0.0), &(&x.phi[b] * &gda[b]));
        }
        out -= &dnl[j];
        let mut out = dealias(&out);
        if j > 0 {
            out.axpy(C64::new(0.0, 1.0), &laplacian(&x.da[j - 1]));
        }
        u2.push(out);
    }
    (u1, u2)
}

/// Periodic potential `S⁰` with `∇S⁰ = φ⁰` and zero mean, after checking that
/// `φ⁰` is curl-free and mean-free.
pub fn phase_potential(phi0: &[Field]) -> Result<Field, SymbolError> {
    let spec = *phi0[0].spec();
    let d = spec.d();
    let scale = phi0.iter().map(Field::max_abs).fold(0.0, f64::max).max(1e-300);
    for a in 0..d {
        for b in a + 1..d {
            let ca = gradient(&phi0[b])[a].clone();
            let cb = gradient(&phi0[a])[b].clone();
            let curl = ca.max_diff(&cb);
            if curl > 1e-8 * scale.max(1.0) {
                return Err(SymbolError::NotIrrotational(curl));
            }
        }
    }
    let mean = phi0.iter().map(|f| (f.integral() / spec.volume()).norm()).fold(0.0, f64::max);
    if mean > 1e-8 * scale.max(1.0) {
        return Err(SymbolError::NoPotential(mean));
    }
    let xi = spec.wavenumbers();
    let n = spec.n_points();
    let spectra: Vec<Vec<C64>> = phi0.iter().map(Field::spectrum).collect();
    let mut s = vec![C64::new(0.0, 0.0); spec.len()];
    let mut ix = [0usize; 3];
    for (i, v) in s.iter_mut().enumerate() {
        spec.unflatten(i, &mut ix[..d]);
        // Use the axis with the largest |ξ_a| to divide; Nyquist modes are dropped.
        let mut best: Option<(usize, f64)> = None;
        for a in 0..d {
            if ix[a] == n / 2 {
                continue;
            }
            let k = xi[ix[a]];
            if k != 0.0 && best.map_or(true, |(_, kb)| k.abs() > kb.abs()) {
                best = Some((a, k));
            }
        }
        if let Some((a, k)) = best {
            *v = spectra[a][i] / C64::new(0.0, k);
        }
    }
    Ok(Field::from_spectrum(spec, s)?.real_part())
}

fn component_series(fam: Vec<Vec<Field>>, spec: GridSpec, ds: f64) -> Vec<SymbolSeries> {
    // fam[k][c] -> one series per component c
    let d = fam[0].len();
    (0..d)
        .map(|c| SymbolSeries { spec, ds, coeffs: vec![fam.iter().map(|f| f[c].clone()).collect()] })
        .collect()
}

fn amp_series(fam: Vec<Vec<Field>>, spec: GridSpec, ds: f64) -> SymbolSeries {
    let order = fam[0].len();
    SymbolSeries { spec, ds, coeffs: (0..order).map(|j| fam.iter().map(|f| f[j].clone()).collect()).collect() }
}

/// Fixed point `u = F(s, u)` for `u = (∂ₛ²φ, ∂ₛ²a)`, started from `u⁽⁰⁾ = 0`
/// with `(∂ₛφ, ∂ₛa)(0)` taken from the first-order system at `s = 0`.
/// `a0` holds the coefficients `a_j(0, ·)` of the initial amplitude.
pub fn picard_solve(
    phi0: &[Field],
    a0: &[Field],
    mp: &MajorantParams,
    h: f64,
    cfg: &PicardConfig,
) -> Result<PicardSolution, SymbolError> {
    mp.validate()?;
    if !(h > 0.0 && h < mp.eps) {
        return Err(SymbolError::SmallParameter { h, eps: mp.eps });
    }
    if a0.is_empty() || a0.len() > MAX_TERMS - 1 {
        return Err(SymbolError::Order(a0.len()));
    }
    let spec = *a0[0].spec();
    if phi0.len() != spec.d() || phi0.iter().chain(a0).any(|f| *f.spec() != spec) {
        return Err(SymbolError::Mismatch);
    }
    let s_phase0 = phase_potential(phi0)?;
    let m = cfg.steps.max(2) + 1;
    let ds = mp.s0 / (m - 1) as f64;
    let times: Vec<f64> = (0..m).map(|k| k as f64 * ds).collect();
    let (dphi0, da0) = first_order_rhs(phi0, a0, cfg.p, cfg.omega);
    let ev = MajorantNorm::new(spec, *mp)?;
    let d = spec.d();
    let jn = a0.len();

    let zero_u1 = vec![vec![Field::zeros(spec); d]; m];
    let zero_u2 = vec![vec![Field::zeros(spec); jn]; m];
    let mut u1 = zero_u1;
    let mut u2 = zero_u2;

    // ∫₀^s and ∫₀^s∫₀^σ by cumulative trapezoid, per slice family.
    let integrate = |fam: &[Vec<Field>]| -> Vec<Vec<Field>> {
        let width = fam[0].len();
        let mut out = Vec::with_capacity(m);
        let mut acc = vec![Field::zeros(spec); width];
        out.push(acc.clone());
        for k in 1..m {
            for c in 0..width {
                acc[c].axpy(C64::new(0.5 * ds, 0.0), &fam[k - 1][c]);
                acc[c].axpy(C64::new(0.5 * ds, 0.0), &fam[k][c]);
            }
            out.push(acc.clone());
        }
        out
    };
    let reconstruct = |u: &[Vec<Field>], v0: &[Field], dv0: &[Field]| -> (Vec<Vec<Field>>, Vec<Vec<Field>>) {
        let iu = integrate(u);
        let iiu = integrate(&iu);
        let dv: Vec<Vec<Field>> = iu
            .iter()
            .map(|row| row.iter().zip(dv0).map(|(x, y)| x + y).collect())
            .collect();
        let v: Vec<Vec<Field>> = iiu
            .iter()
            .zip(&times)
            .map(|(row, &s)| {
                row.iter()
                    .zip(v0.iter().zip(dv0))
                    .map(|(x, (a, b))| {
                        let mut out = x + a;
                        out.axpy(C64::new(s, 0.0), b);
                        out
                    })
                    .collect()
            })
            .collect();
        (v, dv)
    };

    let mut distances = Vec::new();
    let mut ratios = Vec::new();
    let mut above_one = 0usize;
    for _ in 0..cfg.iters.max(1) {
        let (phi, dphi) = reconstruct(&u1, phi0, &dphi0);
        let (a, da) = reconstruct(&u2, a0, &da0);
        let new: Vec<(Vec<Field>, Vec<Field>)> = (0..m)
            .into_par_iter()
            .map(|k| second_order_rhs(&Fields { phi: &phi[k], dphi: &dphi[k], a: &a[k], da: &da[k] }, cfg.p, cfg.omega))
            .collect();
        let (n1, n2): (Vec<_>, Vec<_>) = new.into_iter().unzip();
        let diff1: Vec<Vec<Field>> = n1.iter().zip(&u1).map(|(x, y)| x.iter().zip(y).map(|(a, b)| a - b).collect()).collect();
        let diff2: Vec<Vec<Field>> = n2.iter().zip(&u2).map(|(x, y)| x.iter().zip(y).map(|(a, b)| a - b).collect()).collect();
        let dist = ev.norm_vec(&component_series(diff1, spec, ds), 1.0)? + ev.norm(&amp_series(diff2, spec, ds), 1.0)?;
        u1 = n1;
        u2 = n2;
        let size = ev.norm_vec(&component_series(u1.clone(), spec, ds), 1.0)?
            + ev.norm(&amp_series(u2.clone(), spec, ds), 1.0)?;
        if let Some(&prev) = distances.last() {
            let r: f64 = if prev > 0.0 { dist / prev } else { 0.0 };
            ratios.push(r);
            above_one = if r > 1.0 { above_one + 1 } else { 0 };
            if above_one >= 3 {
                return Err(SymbolError::Divergence { s0: mp.s0, ratios });
            }
        }
        distances.push(dist);
        if dist <= cfg.tol * size.max(1.0) {
            break;
        }
    }

    let (phi, dphi) = reconstruct(&u1, phi0, &dphi0);
    let (a, da) = reconstruct(&u2, a0, &da0);
    let _ = (&dphi, &da);

    // S = S⁰ − ∫₀^s (φ·φ + ωf(a₀)).
    let integrand: Vec<Vec<Field>> = (0..m)
        .map(|k| {
            let mut g = Field::zeros(spec);
            for c in 0..d {
                g += &(&phi[k][c] * &phi[k][c]);
            }
            let f0 = a[k][0].map(|v| C64::new(v.norm_sqr().powi((cfg.p as i32 - 1) / 2), 0.0));
            g.axpy(C64::new(cfg.omega, 0.0), &f0);
            vec![g]
        })
        .collect();
    let ig = integrate(&integrand);
    let phase_fam: Vec<Vec<Field>> = ig
        .iter()
        .map(|row| {
            let mut s = s_phase0.clone();
            s.axpy(C64::new(-1.0, 0.0), &row[0]);
            vec![s]
        })
        .collect();

    let residual = first_order_residual(&phi, &a, ds, cfg);
    Ok(PicardSolution {
        phi: component_series(phi, spec, ds),
        amplitude: amp_series(a, spec, ds),
        phase: amp_series(phase_fam, spec, ds),
        distances,
        ratios,
        residual,
    })
}

/// Sup over interior slices of `|∂ₛ(φ, a) − G(φ, a)|`, with 4th-order central
/// differences in `s`.
fn first_order_residual(phi: &[Vec<Field>], a: &[Vec<Field>], ds: f64, cfg: &PicardConfig) -> f64 {
    let m = phi.len();
    if m < 5 {
        return f64::NAN;
    }
    let fd = |fam: &[Vec<Field>], k: usize, c: usize| -> Field {
        let mut out = &fam[k - 2][c] - &fam[k + 2][c];
        out.axpy(C64::new(8.0, 0.0), &fam[k + 1][c]);
        out.axpy(C64::new(-8.0, 0.0), &fam[k - 1][c]);
        out.map(|v| v / (12.0 * ds))
    };
    (2..m - 2)
        .into_par_iter()
        .map(|k| {
            let (gphi, ga) = first_order_rhs(&phi[k], &a[k], cfg.p, cfg.omega);
            let r1 = (0..gphi.len()).map(|c| fd(phi, k, c).max_diff(&gphi[c])).fold(0.0, f64::max);
            let r2 = (0..ga.len()).map(|c| fd(a, k, c).max_diff(&ga[c])).fold(0.0, f64::max);
            r1.max(r2)
        })
        .reduce(|| 0.0, f64::max)
}
