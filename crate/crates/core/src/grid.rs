//! Periodic pseudospectral grids on `[-L, L)^d` and the Fourier-multiplier
//! calculus built on them.

use std::io::{self, Read, Write};
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type C64 = Complex64;

/// Spectral energy fraction above which products get 2/3-rule truncation.
pub const DEALIAS_TRIGGER: f64 = 1e-8;
/// Largest admissible `|y|·ξ_max` for strip evaluation.
pub const STRIP_GUARD: f64 = 700.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("dimension {0} not in 1..=3")]
    Dimension(usize),
    #[error("n_points {0} must be >= 8 and of the form 2^a or 3*2^a")]
    PointCount(usize),
    #[error("half width {0} must be positive and finite")]
    HalfWidth(f64),
    #[error("expected {expected} values, got {got}")]
    ValueCount { expected: usize, got: usize },
    #[error("multiplier is not finite at wavenumber {0:?}")]
    NonFiniteMultiplier(Vec<f64>),
    #[error("strip shift |y|*xi_max = {0} exceeds the overflow guard")]
    StripGuard(f64),
    #[error("field contains non-finite values")]
    NonFinite,
    #[error("grid mismatch")]
    Mismatch,
    #[error("shift vector has {got} components for a {d}-dimensional grid")]
    ShiftDimension { d: usize, got: usize },
    #[error("csv export requires d = 1")]
    CsvDimension,
    #[error("malformed field binary: {0}")]
    Format(String),
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Uniform periodic grid with `n_points` nodes per axis on `[-L, L)^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    d: usize,
    n_points: usize,
    half_width: f64,
}

fn fft_friendly(n: usize) -> bool {
    if n < 8 || n % 2 != 0 {
        return false;
    }
    let m = if n % 3 == 0 { n / 3 } else { n };
    m.is_power_of_two()
}

impl GridSpec {
    pub fn new(d: usize, n_points: usize, half_width: f64) -> Result<Self, GridError> {
        if !(1..=3).contains(&d) {
            return Err(GridError::Dimension(d));
        }
        if !fft_friendly(n_points) {
            return Err(GridError::PointCount(n_points));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(GridError::HalfWidth(half_width));
        }
        Ok(Self { d, n_points, half_width })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Total number of nodes, `n_points^d`.
    pub fn len(&self) -> usize {
        self.n_points.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.n_points as f64
    }

    /// Quadrature weight `(2L/N)^d`.
    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.d as i32)
    }

    /// Box volume `(2L)^d`.
    pub fn volume(&self) -> f64 {
        (2.0 * self.half_width).powi(self.d as i32)
    }

    /// Node coordinates along one axis.
    pub fn coords(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.n_points).map(|i| -self.half_width + i as f64 * dx).collect()
    }

    /// Signed integer frequency of spectral index `k`; the Nyquist index maps to `-n/2`.
    pub fn signed_index(&self, k: usize) -> i64 {
        let n = self.n_points as i64;
        let k = k as i64;
        if k < n / 2 {
            k
        } else {
            k - n
        }
    }

    /// Axis wavenumbers `ξ_k = πk/L` in FFT order.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let c = std::f64::consts::PI / self.half_width;
        (0..self.n_points).map(|k| c * self.signed_index(k) as f64).collect()
    }

    /// Largest represented axis wavenumber `πN/(2L)`.
    pub fn xi_max(&self) -> f64 {
        std::f64::consts::PI * self.n_points as f64 / (2.0 * self.half_width)
    }

    pub fn is_nyquist(&self, k: usize) -> bool {
        k == self.n_points / 2
    }

    /// Row-major multi-index of a flat index (last axis fastest).
    pub fn unflatten(&self, mut idx: usize, out: &mut [usize]) {
        for a in (0..self.d).rev() {
            out[a] = idx % self.n_points;
            idx /= self.n_points;
        }
    }

    /// Calls `f(flat, wavevector)` for every spectral index.
    pub fn for_each_wavevector(&self, mut f: impl FnMut(usize, &[f64])) {
        let xi = self.wavenumbers();
        let mut ix = [0usize; 3];
        let mut k = [0.0f64; 3];
        for idx in 0..self.len() {
            self.unflatten(idx, &mut ix[..self.d]);
            for a in 0..self.d {
                k[a] = xi[ix[a]];
            }
            f(idx, &k[..self.d]);
        }
    }

    /// `|ξ|²` for every spectral index.
    pub fn xi_squared(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.for_each_wavevector(|i, k| out[i] = k.iter().map(|x| x * x).sum());
        out
    }

    /// Calls `f(flat, point)` for every node.
    pub fn for_each_point(&self, mut f: impl FnMut(usize, &[f64])) {
        let x = self.coords();
        let mut ix = [0usize; 3];
        let mut z = [0.0f64; 3];
        for idx in 0..self.len() {
            self.unflatten(idx, &mut ix[..self.d]);
            for a in 0..self.d {
                z[a] = x[ix[a]];
            }
            f(idx, &z[..self.d]);
        }
    }
}

fn planner() -> &'static Mutex<FftPlanner<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    PLANNER.get_or_init(|| Mutex::new(FftPlanner::new()))
}

fn plan(n: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    let mut p = planner().lock().unwrap_or_else(|e| e.into_inner());
    if forward {
        p.plan_fft_forward(n)
    } else {
        p.plan_fft_inverse(n)
    }
}

fn transform(spec: &GridSpec, data: &mut [C64], forward: bool) {
    let n = spec.n_points;
    let fft = plan(n, forward);
    let mut scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    fft.process_with_scratch(data, &mut scratch);
    if spec.d == 1 {
        return;
    }
    let mut block = Vec::new();
    for axis in 0..spec.d - 1 {
        let stride = n.pow((spec.d - 1 - axis) as u32);
        let span = n * stride;
        block.resize(span, C64::new(0.0, 0.0));
        for chunk in data.chunks_mut(span) {
            for k in 0..n {
                for inner in 0..stride {
                    block[inner * n + k] = chunk[k * stride + inner];
                }
            }
            fft.process_with_scratch(&mut block, &mut scratch);
            for k in 0..n {
                for inner in 0..stride {
                    chunk[k * stride + inner] = block[inner * n + k];
                }
            }
        }
    }
}

/// Unnormalized forward DFT in place.
pub fn fft_forward(spec: &GridSpec, data: &mut [C64]) {
    transform(spec, data, true);
}

/// Inverse DFT in place, normalized so that it inverts [`fft_forward`].
pub fn fft_inverse(spec: &GridSpec, data: &mut [C64]) {
    transform(spec, data, false);
    let s = 1.0 / spec.len() as f64;
    for v in data.iter_mut() {
        *v *= s;
    }
}

/// Complex grid function.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    spec: GridSpec,
    values: Vec<C64>,
}

impl Field {
    pub fn zeros(spec: GridSpec) -> Self {
        Self { spec, values: vec![C64::new(0.0, 0.0); spec.len()] }
    }

    pub fn constant(spec: GridSpec, c: C64) -> Self {
        Self { spec, values: vec![c; spec.len()] }
    }

    pub fn from_values(spec: GridSpec, values: Vec<C64>) -> Result<Self, GridError> {
        if values.len() != spec.len() {
            return Err(GridError::ValueCount { expected: spec.len(), got: values.len() });
        }
        Ok(Self { spec, values })
    }

    /// Samples `f` at every node.
    pub fn from_fn(spec: GridSpec, mut f: impl FnMut(&[f64]) -> C64) -> Self {
        let mut values = vec![C64::new(0.0, 0.0); spec.len()];
        spec.for_each_point(|i, x| values[i] = f(x));
        Self { spec, values }
    }

    pub fn from_real_fn(spec: GridSpec, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        Self::from_fn(spec, |x| C64::new(f(x), 0.0))
    }

    /// Builds a field from its unnormalized DFT coefficients.
    pub fn from_spectrum(spec: GridSpec, mut spectrum: Vec<C64>) -> Result<Self, GridError> {
        if spectrum.len() != spec.len() {
            return Err(GridError::ValueCount { expected: spec.len(), got: spectrum.len() });
        }
        fft_inverse(&spec, &mut spectrum);
        Ok(Self { spec, values: spectrum })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    /// Unnormalized DFT coefficients.
    pub fn spectrum(&self) -> Vec<C64> {
        let mut s = self.values.clone();
        fft_forward(&self.spec, &mut s);
        s
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn max_imag(&self) -> f64 {
        self.values.iter().map(|v| v.im.abs()).fold(0.0, f64::max)
    }

    /// True when imaginary parts are below `1e-12` of the max modulus.
    pub fn is_real(&self) -> bool {
        self.max_imag() <= 1e-12 * self.max_abs()
    }

    pub fn real_part(&self) -> Self {
        self.map(|v| C64::new(v.re, 0.0))
    }

    pub fn conj(&self) -> Self {
        self.map(|v| v.conj())
    }

    pub fn abs(&self) -> Self {
        self.map(|v| C64::new(v.norm(), 0.0))
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Self {
        Self { spec: self.spec, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(C64, C64) -> C64) -> Self {
        assert_eq!(self.spec, other.spec, "grid mismatch");
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self { spec: self.spec, values }
    }

    pub fn scale(&self, c: C64) -> Self {
        self.map(|v| v * c)
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: C64, other: &Field) {
        assert_eq!(self.spec, other.spec, "grid mismatch");
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    /// Grid sup-norm distance.
    pub fn max_diff(&self, other: &Field) -> f64 {
        assert_eq!(self.spec, other.spec, "grid mismatch");
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    /// Equal-weight quadrature of `∫ f`.
    pub fn integral(&self) -> C64 {
        self.values.iter().sum::<C64>() * self.spec.cell_volume()
    }

    /// Pointwise product, truncated by the 2/3 rule when the result carries
    /// more than [`DEALIAS_TRIGGER`] of its energy in the top third.
    pub fn mul_dealiased(&self, other: &Field) -> Self {
        dealias(&(self * other))
    }
}

macro_rules! field_binop {
    ($tr:ident, $m:ident, $atr:ident, $am:ident, $op:tt) => {
        impl $tr<&Field> for &Field {
            type Output = Field;
            fn $m(self, rhs: &Field) -> Field {
                self.zip_map(rhs, |a, b| a $op b)
            }
        }
        impl $tr<Field> for Field {
            type Output = Field;
            fn $m(mut self, rhs: Field) -> Field {
                self.$am(&rhs);
                self
            }
        }
        impl $atr<&Field> for Field {
            fn $am(&mut self, rhs: &Field) {
                assert_eq!(self.spec, rhs.spec, "grid mismatch");
                for (a, &b) in self.values.iter_mut().zip(&rhs.values) {
                    *a = *a $op b;
                }
            }
        }
    };
}

field_binop!(Add, add, AddAssign, add_assign, +);
field_binop!(Sub, sub, SubAssign, sub_assign, -);
field_binop!(Mul, mul, MulAssign, mul_assign, *);

impl Mul<C64> for &Field {
    type Output = Field;
    fn mul(self, c: C64) -> Field {
        self.scale(c)
    }
}

impl Mul<f64> for &Field {
    type Output = Field;
    fn mul(self, c: f64) -> Field {
        self.map(|v| v * c)
    }
}

impl Neg for &Field {
    type Output = Field;
    fn neg(self) -> Field {
        self.map(|v| -v)
    }
}

/// Evaluates `m` on every represented wavevector.
pub fn multiplier_table(
    spec: &GridSpec,
    m: impl Fn(&[f64]) -> C64,
) -> Result<Vec<C64>, GridError> {
    let mut table = vec![C64::new(0.0, 0.0); spec.len()];
    let mut bad = None;
    spec.for_each_wavevector(|i, k| {
        let v = m(k);
        if !(v.re.is_finite() && v.im.is_finite()) && bad.is_none() {
            bad = Some(k.to_vec());
        }
        table[i] = v;
    });
    match bad {
        Some(k) => Err(GridError::NonFiniteMultiplier(k)),
        None => Ok(table),
    }
}

/// Multiplies a spectrum by a precomputed table and transforms back.
pub fn apply_table(spec: &GridSpec, spectrum: &[C64], table: &[C64]) -> Field {
    let mut s: Vec<C64> = spectrum.iter().zip(table).map(|(a, b)| a * b).collect();
    fft_inverse(spec, &mut s);
    Field { spec: *spec, values: s }
}

/// Inverse transform of `m(ξ)·f̂(ξ)`.
pub fn fourier_multiplier(f: &Field, m: impl Fn(&[f64]) -> C64) -> Result<Field, GridError> {
    if !f.is_finite() {
        return Err(GridError::NonFinite);
    }
    let table = multiplier_table(&f.spec, m)?;
    Ok(apply_table(&f.spec, &f.spectrum(), &table))
}

/// Spectral `∂/∂z_axis` of a field given by its spectrum. The Nyquist mode is
/// dropped so that real fields have real derivatives.
pub fn partial_from_spectrum(spec: &GridSpec, spectrum: &[C64], axis: usize) -> Field {
    let xi = spec.wavenumbers();
    let n = spec.n_points;
    let stride = n.pow((spec.d - 1 - axis) as u32);
    let mut s = spectrum.to_vec();
    for (i, v) in s.iter_mut().enumerate() {
        let k = (i / stride) % n;
        *v = if spec.is_nyquist(k) { C64::new(0.0, 0.0) } else { *v * C64::new(0.0, xi[k]) };
    }
    fft_inverse(spec, &mut s);
    Field { spec: *spec, values: s }
}

pub fn laplacian_from_spectrum(spec: &GridSpec, spectrum: &[C64], xi2: &[f64]) -> Field {
    let mut s: Vec<C64> = spectrum.iter().zip(xi2).map(|(v, k2)| -v * k2).collect();
    fft_inverse(spec, &mut s);
    Field { spec: *spec, values: s }
}

pub fn gradient(f: &Field) -> Vec<Field> {
    let s = f.spectrum();
    (0..f.spec.d).map(|a| partial_from_spectrum(&f.spec, &s, a)).collect()
}

pub fn laplacian(f: &Field) -> Field {
    laplacian_from_spectrum(&f.spec, &f.spectrum(), &f.spec.xi_squared())
}

/// Gradient and Laplacian sharing one forward transform.
pub fn gradient_and_laplacian(f: &Field, xi2: &[f64]) -> (Vec<Field>, Field) {
    let s = f.spectrum();
    let g = (0..f.spec.d).map(|a| partial_from_spectrum(&f.spec, &s, a)).collect();
    (g, laplacian_from_spectrum(&f.spec, &s, xi2))
}

/// `Σ_a u_a · v_a`, dealiased.
pub fn dot(u: &[Field], v: &[Field]) -> Field {
    let mut acc = &u[0] * &v[0];
    for (a, b) in u.iter().zip(v).skip(1) {
        acc += &(a * b);
    }
    dealias(&acc)
}

/// `‖(1−μ²Δ)^{s/2} f‖_{L²}` via Plancherel.
pub fn sobolev_norm(f: &Field, s: f64, mu: f64) -> f64 {
    let spec = f.spec;
    let spectrum = f.spectrum();
    let xi2 = spec.xi_squared();
    let mu2 = mu * mu;
    let sum: f64 = spectrum
        .iter()
        .zip(&xi2)
        .map(|(v, k2)| (1.0 + mu2 * k2).powf(s) * v.norm_sqr())
        .sum();
    let n = spec.len() as f64;
    (spec.volume() * sum).sqrt() / n
}

/// `(∫|f|^q)^{1/q}` with the uniform weight `(2L/N)^d`.
pub fn lebesgue_norm(f: &Field, q: f64) -> f64 {
    let sum: f64 = f.values.iter().map(|v| v.norm().powf(q)).sum();
    (sum * f.spec.cell_volume()).powf(1.0 / q)
}

/// Analytic continuation `f(· + iy)` of a band-limited field.
pub fn strip_shift(f: &Field, y: &[f64]) -> Result<Field, GridError> {
    let spec = f.spec;
    let table = strip_table(&spec, y)?;
    Ok(apply_table(&spec, &f.spectrum(), &table))
}

/// Spectral factors `e^{-y·ξ}` for [`strip_shift`].
pub fn strip_table(spec: &GridSpec, y: &[f64]) -> Result<Vec<C64>, GridError> {
    if y.len() != spec.d {
        return Err(GridError::ShiftDimension { d: spec.d, got: y.len() });
    }
    let guard = y.iter().map(|v| v * v).sum::<f64>().sqrt() * spec.xi_max() * (spec.d as f64).sqrt();
    if guard > STRIP_GUARD {
        return Err(GridError::StripGuard(guard));
    }
    multiplier_table(spec, |k| {
        let e: f64 = k.iter().zip(y).map(|(a, b)| a * b).sum();
        C64::new((-e).exp(), 0.0)
    })
}

fn outside_two_thirds(spec: &GridSpec) -> Vec<bool> {
    outside_band(spec, spec.n_points as i64 / 3)
}

fn outside_band(spec: &GridSpec, cut: i64) -> Vec<bool> {
    let mut ix = [0usize; 3];
    (0..spec.len())
        .map(|i| {
            spec.unflatten(i, &mut ix[..spec.d]);
            ix[..spec.d].iter().any(|&k| spec.signed_index(k).abs() > cut)
        })
        .collect()
}

/// Fraction of spectral energy outside the 2/3-rule box.
pub fn top_third_fraction(f: &Field) -> f64 {
    top_third_fraction_of(&f.spec, &f.spectrum())
}

/// Fraction of spectral energy in modes with some `|k_a| > n/6`, the upper
/// half of the band kept by dealiasing.
pub fn upper_band_fraction(f: &Field) -> f64 {
    band_fraction_of(&outside_band(&f.spec, f.spec.n_points as i64 / 6), &f.spectrum())
}

fn top_third_fraction_of(spec: &GridSpec, spectrum: &[C64]) -> f64 {
    band_fraction_of(&outside_two_thirds(spec), spectrum)
}

fn band_fraction_of(mask: &[bool], spectrum: &[C64]) -> f64 {
    let mut hi = 0.0;
    let mut total = 0.0;
    for (v, &m) in spectrum.iter().zip(mask) {
        let e = v.norm_sqr();
        total += e;
        if m {
            hi += e;
        }
    }
    if total > 0.0 {
        hi / total
    } else {
        0.0
    }
}

/// Zeroes the top-third modes when their energy fraction exceeds
/// [`DEALIAS_TRIGGER`]; otherwise returns the field unchanged.
pub fn dealias(f: &Field) -> Field {
    let spec = f.spec;
    let mut s = f.spectrum();
    if top_third_fraction_of(&spec, &s) <= DEALIAS_TRIGGER {
        return f.clone();
    }
    for (v, m) in s.iter_mut().zip(outside_two_thirds(&spec)) {
        if m {
            *v = C64::new(0.0, 0.0);
        }
    }
    fft_inverse(&spec, &mut s);
    Field { spec, values: s }
}

/// Writes the flat binary layout: `d`, `n_points` as LE u64, `L` as LE f64,
/// then interleaved re/im LE f64 values in row-major order.
pub fn write_binary<W: Write>(w: &mut W, f: &Field) -> io::Result<()> {
    w.write_all(&(f.spec.d as u64).to_le_bytes())?;
    w.write_all(&(f.spec.n_points as u64).to_le_bytes())?;
    w.write_all(&f.spec.half_width.to_le_bytes())?;
    let mut buf = Vec::with_capacity(16 * f.values.len());
    for v in &f.values {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_binary<R: Read>(r: &mut R) -> Result<Field, IoError> {
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let d = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let n = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let l = f64::from_le_bytes(word);
    let spec = GridSpec::new(d, n, l)?;
    let mut bytes = vec![0u8; 16 * spec.len()];
    r.read_exact(&mut bytes)?;
    let values = bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            C64::new(re, im)
        })
        .collect();
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(GridError::Format(format!("{} trailing bytes", rest.len())).into());
    }
    Ok(Field { spec, values })
}

/// CSV with columns `x,re,im` (d = 1 only).
pub fn write_csv<W: Write>(w: &mut W, f: &Field) -> Result<(), IoError> {
    if f.spec.d != 1 {
        return Err(GridError::CsvDimension.into());
    }
    writeln!(w, "x,re,im")?;
    for (x, v) in f.spec.coords().iter().zip(&f.values) {
        writeln!(w, "{x:e},{:e},{:e}", v.re, v.im)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn spec1(n: usize, l: f64) -> GridSpec {
        GridSpec::new(1, n, l).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(GridSpec::new(0, 16, 1.0).is_err());
        assert!(GridSpec::new(4, 16, 1.0).is_err());
        assert!(GridSpec::new(1, 4, 1.0).is_err());
        assert!(GridSpec::new(1, 100, 1.0).is_err());
        assert!(GridSpec::new(1, 16, 0.0).is_err());
        assert!(GridSpec::new(3, 96, 6.0).is_ok());
        let s = spec1(16, 2.0);
        let xi = s.wavenumbers();
        assert_eq!(xi.len(), 16);
        assert!((xi[1] - PI / 2.0).abs() < 1e-15);
        assert!((xi[8] + 8.0 * PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn identity_multiplier() {
        let s = spec1(64, 5.0);
        let f = Field::from_fn(s, |x| C64::new((-x[0] * x[0]).exp(), x[0].sin()));
        let g = fourier_multiplier(&f, |_| C64::new(1.0, 0.0)).unwrap();
        assert!(g.max_diff(&f) < 1e-14);
    }

    #[test]
    fn derivative_of_resolved_mode() {
        let l = 3.0;
        let s = spec1(32, l);
        let f = Field::from_real_fn(s, |x| (PI * x[0] / l).sin());
        let g = fourier_multiplier(&f, |k| C64::new(0.0, k[0])).unwrap();
        let expect = Field::from_real_fn(s, |x| PI / l * (PI * x[0] / l).cos());
        assert!(g.max_diff(&expect) < 1e-13);
    }

    #[test]
    fn nonfinite_multiplier_rejected() {
        let s = spec1(16, 1.0);
        let f = Field::constant(s, C64::new(1.0, 0.0));
        assert!(matches!(
            fourier_multiplier(&f, |k| C64::new(1.0 / k[0], 0.0)),
            Err(GridError::NonFiniteMultiplier(_))
        ));
    }

    #[test]
    fn fft_round_trip_3d() {
        let s = GridSpec::new(3, 24, 2.0).unwrap();
        let f = Field::from_fn(s, |x| C64::new(x[0] * x[1] - x[2], (x[1] + 0.3 * x[2]).cos()));
        let g = Field::from_spectrum(s, f.spectrum()).unwrap();
        assert!(g.max_diff(&f) < 1e-12);
    }

    #[test]
    fn three_d_mode_derivatives() {
        let l = 2.0;
        let s = GridSpec::new(3, 16, l).unwrap();
        let k = [PI / l, 2.0 * PI / l, -3.0 * PI / l];
        let f = Field::from_fn(s, |x| C64::from_polar(1.0, k[0] * x[0] + k[1] * x[1] + k[2] * x[2]));
        let g = gradient(&f);
        for a in 0..3 {
            let e = f.scale(C64::new(0.0, k[a]));
            assert!(g[a].max_diff(&e) < 1e-11, "axis {a}");
        }
        let lap = laplacian(&f);
        let k2: f64 = k.iter().map(|v| v * v).sum();
        assert!(lap.max_diff(&f.scale(C64::new(-k2, 0.0))) < 1e-10);
    }

    #[test]
    fn sobolev_single_mode() {
        let l = 4.0;
        let s = GridSpec::new(2, 16, l).unwrap();
        let k0 = [3.0 * PI / l, -PI / l];
        let f = Field::from_fn(s, |x| C64::from_polar(1.0, k0[0] * x[0] + k0[1] * x[1]));
        let k2 = k0[0] * k0[0] + k0[1] * k0[1];
        for &sv in &[0.0, 0.5, 1.0, 2.5] {
            let expect = (1.0 + k2).powf(sv / 2.0) * (2.0 * l);
            assert!((sobolev_norm(&f, sv, 1.0) / expect - 1.0).abs() < 1e-12);
        }
        assert!((sobolev_norm(&f, 3.0, 0.0) - 2.0 * l).abs() < 1e-12);
        assert_eq!(sobolev_norm(&Field::zeros(s), 1.0, 1.0), 0.0);
    }

    #[test]
    fn lebesgue_examples() {
        let s = GridSpec::new(2, 16, 1.5).unwrap();
        let c = C64::new(0.6, -0.8) * 2.0;
        let f = Field::constant(s, c);
        for &q in &[1.0, 2.0, 8.0] {
            let expect = 2.0 * (3.0f64).powf(2.0 / q);
            assert!((lebesgue_norm(&f, q) / expect - 1.0).abs() < 1e-13);
        }
        let s1 = spec1(64, 30.0);
        let g = Field::from_real_fn(s1, |x| (-x[0] * x[0]).exp());
        assert!((lebesgue_norm(&g, 2.0) - sobolev_norm(&g, 0.0, 1.0)).abs() < 1e-12);
        let m = Field::from_fn(s1, |x| C64::from_polar(1.0, 3.0 * PI / 30.0 * x[0]));
        assert!((lebesgue_norm(&m, 4.0) / 60f64.powf(0.25) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn strip_single_mode_and_guard() {
        let l = 5.0;
        let s = spec1(32, l);
        let k0 = 4.0 * PI / l;
        let f = Field::from_fn(s, |x| C64::from_polar(1.0, k0 * x[0]));
        let g = strip_shift(&f, &[0.2]).unwrap();
        assert!(g.max_diff(&f.scale(C64::new((-0.2 * k0).exp(), 0.0))) < 1e-13);
        assert!(strip_shift(&f, &[0.0]).unwrap().max_diff(&f) < 1e-15);
        assert!(matches!(strip_shift(&f, &[500.0]), Err(GridError::StripGuard(_))));
        assert!(strip_shift(&f, &[0.1, 0.1]).is_err());
    }

    #[test]
    fn dealias_only_when_triggered() {
        let s = spec1(64, 10.0);
        let smooth = Field::from_real_fn(s, |x| (-x[0] * x[0]).exp());
        assert_eq!(dealias(&smooth), smooth);
        let rough = Field::from_fn(s, |x| C64::from_polar(1.0, 30.0 * PI / 10.0 * x[0]));
        assert!(top_third_fraction(&rough) > 0.99);
        assert!(dealias(&rough).max_abs() < 1e-12);
    }

    #[test]
    fn binary_and_csv_round_trip() {
        let s = GridSpec::new(2, 8, 1.25).unwrap();
        let f = Field::from_fn(s, |x| C64::new(x[0], x[1] * x[0]));
        let mut buf = Vec::new();
        write_binary(&mut buf, &f).unwrap();
        assert_eq!(buf.len(), 24 + 16 * 64);
        assert_eq!(&buf[..8], &2u64.to_le_bytes());
        assert_eq!(&buf[16..24], &1.25f64.to_le_bytes());
        let g = read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(f, g);
        assert!(write_csv(&mut Vec::new(), &f).is_err());
        let f1 = Field::constant(spec1(8, 1.0), C64::new(1.0, 2.0));
        let mut csv = Vec::new();
        write_csv(&mut csv, &f1).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 9);
        assert!(text.starts_with("x,re,im\n-1e0,1e0,2e0"));
    }
}
