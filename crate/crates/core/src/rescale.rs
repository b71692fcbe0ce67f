//! Bookkeeping between physical variables `(t, x, u)` and semiclassical
//! variables `(s, z, v)` under `t = ħ^α s`, `x = ħ z`, `u = ħ^γ v`, `h = ħ^β`.

use num_rational::Ratio;
use num_traits::{Signed, ToPrimitive};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{lebesgue_norm, Field};

pub type Q = Ratio<i64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RescaleError {
    #[error("p = {0} must be an odd integer >= 3")]
    Exponent(u32),
    #[error("beta = {0} must be positive")]
    Beta(f64),
    #[error("omega = {0} must be +1 or -1")]
    Omega(i32),
    #[error("hbar = {0} must lie in (0, 1)")]
    Hbar(f64),
    #[error("dimension {0} not supported")]
    Dimension(usize),
}

/// Which relation fixed `(β, γ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Convention {
    /// β given, γ forced by scaling.
    Scaling,
    /// γ = −d/(p+1), β derived.
    EnergySpace,
    /// γ = σ − d/2 + ε, β derived.
    NormInflation { sigma: f64, eps: f64 },
}

/// Exact rational exponents, present whenever every input was rational.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactExponents {
    pub alpha: Q,
    pub beta: Q,
    pub gamma: Q,
}

/// `(d, p, ω)` together with `α = β + 2` and `(p−1)γ = −2(β+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exponents {
    pub d: usize,
    pub p: u32,
    pub omega: i32,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub convention: Convention,
    pub exact: Option<ExactExponents>,
}

/// [`Exponents`] evaluated at a concrete `ħ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemiclassicalParams {
    #[serde(flatten)]
    pub exponents: Exponents,
    pub hbar: f64,
    pub h: f64,
}

pub fn q_to_f64(q: Q) -> f64 {
    q.numer().to_f64().unwrap_or(f64::NAN) / q.denom().to_f64().unwrap_or(f64::NAN)
}

/// Rational with `f64` value exactly `x`, when a small one exists.
pub fn exact_rational(x: f64) -> Option<Q> {
    let q = Q::approximate_float(x)?;
    (q_to_f64(q) == x).then_some(q)
}

fn check_common(d: usize, p: u32, omega: i32) -> Result<(), RescaleError> {
    if p < 3 || p % 2 == 0 {
        return Err(RescaleError::Exponent(p));
    }
    if omega != 1 && omega != -1 {
        return Err(RescaleError::Omega(omega));
    }
    if d == 0 {
        return Err(RescaleError::Dimension(d));
    }
    Ok(())
}

fn from_exact(d: usize, p: u32, omega: i32, beta: Q, convention: Convention) -> Result<Exponents, RescaleError> {
    check_common(d, p, omega)?;
    if !beta.is_positive() {
        return Err(RescaleError::Beta(q_to_f64(beta)));
    }
    let two = Q::from_integer(2);
    let alpha = beta + two;
    let gamma = -two * (beta + Q::from_integer(1)) / Q::from_integer(p as i64 - 1);
    Ok(Exponents {
        d,
        p,
        omega,
        alpha: q_to_f64(alpha),
        beta: q_to_f64(beta),
        gamma: q_to_f64(gamma),
        convention,
        exact: Some(ExactExponents { alpha, beta, gamma }),
    })
}

fn from_float(d: usize, p: u32, omega: i32, beta: f64, convention: Convention) -> Result<Exponents, RescaleError> {
    check_common(d, p, omega)?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(RescaleError::Beta(beta));
    }
    if let Some(q) = exact_rational(beta) {
        return from_exact(d, p, omega, q, convention);
    }
    Ok(Exponents {
        d,
        p,
        omega,
        alpha: beta + 2.0,
        beta,
        gamma: -2.0 * (beta + 1.0) / (p as f64 - 1.0),
        convention,
        exact: None,
    })
}

/// Scaling convention: β free, γ forced.
pub fn make_params(d: usize, p: u32, omega: i32, beta: f64) -> Result<Exponents, RescaleError> {
    from_float(d, p, omega, beta, Convention::Scaling)
}

pub fn make_params_exact(d: usize, p: u32, omega: i32, beta: Q) -> Result<Exponents, RescaleError> {
    from_exact(d, p, omega, beta, Convention::Scaling)
}

/// γ = −d/(p+1), hence β = d(p−1)/(2(p+1)) − 1.
pub fn energy_space_params(d: usize, p: u32, omega: i32) -> Result<Exponents, RescaleError> {
    check_common(d, p, omega)?;
    let beta = Q::new((d as i64) * (p as i64 - 1), 2 * (p as i64 + 1)) - Q::from_integer(1);
    from_exact(d, p, omega, beta, Convention::EnergySpace)
}

/// γ = σ − d/2 + ε, hence β = −((p−1)/2)γ − 1.
pub fn norm_inflation_params(d: usize, p: u32, omega: i32, sigma: f64, eps: f64) -> Result<Exponents, RescaleError> {
    check_common(d, p, omega)?;
    let convention = Convention::NormInflation { sigma, eps };
    match (exact_rational(sigma), exact_rational(eps)) {
        (Some(s), Some(e)) => {
            let gamma = s - Q::new(d as i64, 2) + e;
            let beta = -Q::new(p as i64 - 1, 2) * gamma - Q::from_integer(1);
            from_exact(d, p, omega, beta, convention)
        }
        _ => {
            let gamma = sigma - d as f64 / 2.0 + eps;
            let beta = -((p as f64 - 1.0) / 2.0) * gamma - 1.0;
            from_float(d, p, omega, beta, convention)
        }
    }
}

impl Exponents {
    pub fn with_hbar(&self, hbar: f64) -> Result<SemiclassicalParams, RescaleError> {
        if !(hbar > 0.0 && hbar < 1.0) {
            return Err(RescaleError::Hbar(hbar));
        }
        Ok(SemiclassicalParams { exponents: *self, hbar, h: hbar.powf(self.beta) })
    }

    /// Exact invariants `α = β+2` and `(p−1)γ = −2(β+1)` on the rational representation.
    pub fn relations_hold_exactly(&self) -> bool {
        match self.exact {
            Some(e) => {
                let one = Q::from_integer(1);
                e.alpha == e.beta + Q::from_integer(2)
                    && Q::from_integer(self.p as i64 - 1) * e.gamma == -Q::from_integer(2) * (e.beta + one)
            }
            None => self.alpha == self.beta + 2.0,
        }
    }
}

impl SemiclassicalParams {
    pub fn d(&self) -> usize {
        self.exponents.d
    }

    pub fn p(&self) -> u32 {
        self.exponents.p
    }

    pub fn gamma(&self) -> f64 {
        self.exponents.gamma
    }

    pub fn beta(&self) -> f64 {
        self.exponents.beta
    }

    pub fn alpha(&self) -> f64 {
        self.exponents.alpha
    }

    /// Physical time of semiclassical time `s`.
    pub fn physical_time(&self, s: f64) -> f64 {
        self.hbar.powf(self.exponents.alpha) * s
    }
}

/// Critical Sobolev indices of `(d, p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalIndices {
    pub d: usize,
    pub p: u32,
    /// `d/2 − 2/(p−1)`.
    pub sigma_c: Q,
    /// `d/2 − d/(p+1)`.
    pub sigma_sob: Q,
    /// Branch point `d/2 − 4/(p−1)` of the inflation index.
    pub breakpoint: Q,
}

pub fn critical_indices(d: usize, p: u32) -> CriticalIndices {
    let half_d = Q::new(d as i64, 2);
    let pm = p as i64 - 1;
    CriticalIndices {
        d,
        p,
        sigma_c: half_d - Q::new(2, pm),
        sigma_sob: half_d - Q::new(d as i64, p as i64 + 1),
        breakpoint: half_d - Q::new(4, pm),
    }
}

impl CriticalIndices {
    /// Two-branch index `I(σ)` for `0 < σ < σ_c`.
    pub fn inflation_index(&self, sigma: Q) -> Option<Q> {
        if !sigma.is_positive() || sigma >= self.sigma_c {
            return None;
        }
        if sigma <= self.breakpoint {
            Some(sigma / 2)
        } else {
            let k = Q::new(self.p as i64 - 1, 2);
            Some(sigma / (k * (Q::new(self.d as i64, 2) - sigma)))
        }
    }

    pub fn inflation_index_f64(&self, sigma: f64) -> Option<f64> {
        if let Some(q) = exact_rational(sigma) {
            return self.inflation_index(q).map(q_to_f64);
        }
        let sc = q_to_f64(self.sigma_c);
        if !(sigma > 0.0 && sigma < sc) {
            return None;
        }
        if sigma <= q_to_f64(self.breakpoint) {
            Some(sigma / 2.0)
        } else {
            Some(sigma / ((self.p as f64 - 1.0) / 2.0 * (self.d as f64 / 2.0 - sigma)))
        }
    }

    pub fn sigma_c_f64(&self) -> f64 {
        q_to_f64(self.sigma_c)
    }
}

/// `‖u‖_{H^σ}` of `u(x) = ħ^γ v(x/ħ)` computed on the semiclassical spectrum.
pub fn physical_sobolev_norm(v: &Field, params: &SemiclassicalParams, sigma: f64) -> f64 {
    let d = v.spec().d() as f64;
    let scale = params.hbar.powf(params.gamma() + d / 2.0);
    scale * crate::grid::sobolev_norm(v, sigma, 1.0 / params.hbar)
}

/// `‖u‖_{L^q}` of the physical field.
pub fn physical_lebesgue_norm(v: &Field, params: &SemiclassicalParams, q: f64) -> f64 {
    let d = v.spec().d() as f64;
    params.hbar.powf(params.gamma() + d / q) * lebesgue_norm(v, q)
}

/// Kinetic and potential parts of `H⁺`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HPlus {
    pub kinetic: f64,
    pub potential: f64,
}

impl HPlus {
    pub fn total(&self) -> f64 {
        self.kinetic + self.potential
    }
}

/// `∫ ½|∇v|²` via Plancherel.
pub fn gradient_energy(v: &Field) -> f64 {
    let spec = v.spec();
    let s = v.spectrum();
    let xi2 = spec.xi_squared();
    let sum: f64 = s.iter().zip(&xi2).map(|(c, k2)| k2 * c.norm_sqr()).sum();
    let n = spec.len() as f64;
    0.5 * spec.volume() * sum / (n * n)
}

/// `H⁺ = ∫ ½|∇·|² + (1/(p+1))|·|^{p+1}`, of `v` itself or, with `physical`,
/// of the physical field through the exponents `2γ+d−2` and `(p+1)γ+d`.
pub fn hplus_energy(v: &Field, params: &SemiclassicalParams, physical: bool) -> HPlus {
    let p = params.p() as f64;
    let kinetic = gradient_energy(v);
    let potential = lebesgue_norm(v, p + 1.0).powf(p + 1.0) / (p + 1.0);
    if !physical {
        return HPlus { kinetic, potential };
    }
    let (kx, px) = hplus_exponents(&params.exponents);
    HPlus { kinetic: params.hbar.powf(kx) * kinetic, potential: params.hbar.powf(px) * potential }
}

/// `(2γ+d−2, (p+1)γ+d)`.
pub fn hplus_exponents(e: &Exponents) -> (f64, f64) {
    if let Some(x) = hplus_exponents_exact(e) {
        return (q_to_f64(x.0), q_to_f64(x.1));
    }
    let d = e.d as f64;
    (2.0 * e.gamma + d - 2.0, (e.p as f64 + 1.0) * e.gamma + d)
}

pub fn hplus_exponents_exact(e: &Exponents) -> Option<(Q, Q)> {
    let x = e.exact?;
    let d = Q::from_integer(e.d as i64);
    Some((
        Q::from_integer(2) * x.gamma + d - Q::from_integer(2),
        Q::from_integer(e.p as i64 + 1) * x.gamma + d,
    ))
}

/// Sign test used by the energy-space equivalence: `p > (d+2)/(d−2)`.
pub fn energy_supercritical(d: usize, p: u32) -> bool {
    if d <= 2 {
        return true;
    }
    let lhs = Q::from_integer(p as i64);
    lhs > Q::new(d as i64 + 2, d as i64 - 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{sobolev_norm, GridSpec};
    use num_complex::Complex64 as C64;

    #[test]
    fn scaling_substitution() {
        let e = make_params(3, 3, 1, 1.0).unwrap();
        assert_eq!(e.alpha, 3.0);
        assert_eq!(e.gamma, -2.0);
        assert!(e.relations_hold_exactly());
        assert!(make_params(3, 4, 1, 1.0).is_err());
        assert!(make_params(3, 3, 1, 0.0).is_err());
        assert!(make_params(3, 3, 0, 1.0).is_err());
    }

    #[test]
    fn energy_space_substitution() {
        let e = energy_space_params(3, 7, 1).unwrap();
        let x = e.exact.unwrap();
        assert_eq!(x.gamma, Q::new(-3, 8));
        assert_eq!(x.beta, Q::new(1, 8));
        assert_eq!(x.alpha, Q::new(17, 8));
        assert_eq!(e.beta, 0.125);
        assert_eq!(e.alpha, 2.125);
        let (k, p) = hplus_exponents_exact(&e).unwrap();
        assert_eq!(k, Q::new(1, 4));
        assert_eq!(p, Q::from_integer(0));
    }

    #[test]
    fn norm_inflation_substitution() {
        let e = norm_inflation_params(1, 7, 1, 0.05, 0.005).unwrap();
        assert_eq!(e.exact.unwrap().gamma, Q::new(-89, 200));
        assert_eq!(e.gamma, -0.445);
        assert_eq!(e.beta, 0.335);
        let e3 = norm_inflation_params(3, 7, 1, 0.5, 0.05).unwrap();
        assert_eq!(e3.gamma, -0.95);
        assert_eq!(e3.beta, 1.85);
        assert!(e3.relations_hold_exactly());
    }

    #[test]
    fn critical_substitution() {
        let c = critical_indices(3, 7);
        assert_eq!(c.sigma_c, Q::new(7, 6));
        assert_eq!(c.sigma_sob, Q::new(9, 8));
        assert_eq!(c.breakpoint, Q::new(5, 6));
        assert_eq!(c.inflation_index(Q::new(1, 5)), Some(Q::new(1, 10)));
        assert_eq!(c.inflation_index(Q::from_integer(1)), Some(Q::new(2, 3)));
        assert_eq!(c.inflation_index_f64(0.2), Some(0.1));
        assert_eq!(c.inflation_index(Q::new(7, 6)), None);
    }

    #[test]
    fn hbar_range_enforced() {
        let e = make_params(1, 3, 1, 1.0).unwrap();
        assert!(e.with_hbar(1.0).is_err());
        assert!(e.with_hbar(0.0).is_err());
        let p = e.with_hbar(0.25).unwrap();
        assert_eq!(p.h, 0.25);
    }

    #[test]
    fn physical_norm_scaling() {
        let spec = GridSpec::new(1, 128, 10.0).unwrap();
        let v = Field::from_real_fn(spec, |x| (-x[0] * x[0]).exp());
        let p = make_params(1, 3, 1, 1.0).unwrap().with_hbar(0.3).unwrap();
        let ratio = physical_sobolev_norm(&v, &p, 0.0) / lebesgue_norm(&v, 2.0);
        let expect = 0.3f64.powf(p.gamma() + 0.5);
        assert!((ratio / expect - 1.0).abs() < 1e-12);
        let l = spec.half_width();
        let eta0 = 3.0 * std::f64::consts::PI / l;
        let m = Field::from_fn(spec, |x| C64::from_polar(1.0, eta0 * x[0]));
        let want = expect * (2.0 * l).sqrt() * (1.0 + eta0 * eta0 / 0.09).powf(0.35);
        assert!((physical_sobolev_norm(&m, &p, 0.7) / want - 1.0).abs() < 1e-12);
        assert!(sobolev_norm(&v, 1.0, 1.0) > 0.0);
    }

    #[test]
    fn hplus_zero_and_potential_invariance() {
        let spec = GridSpec::new(3, 16, 4.0).unwrap();
        let e = energy_space_params(3, 7, 1).unwrap();
        let v = Field::from_real_fn(spec, |x| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp());
        let a = hplus_energy(&v, &e.with_hbar(0.4).unwrap(), true);
        let b = hplus_energy(&v, &e.with_hbar(0.2).unwrap(), true);
        assert_eq!(a.potential, b.potential);
        assert!(b.kinetic < a.kinetic);
        let z = hplus_energy(&Field::zeros(spec), &e.with_hbar(0.4).unwrap(), true);
        assert_eq!(z.total(), 0.0);
    }
}
