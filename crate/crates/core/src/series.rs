//! Truncated power series in `h` with complex coefficients, evaluated pointwise
//! on a grid. A series `Σ_j a_j h^j` is a slice of coefficients.

use crate::grid::{dealias, Field, C64};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// `out = a·b` truncated at `out.len()` terms.
pub fn mul_trunc(a: &[C64], b: &[C64], out: &mut [C64]) {
    for (j, o) in out.iter_mut().enumerate() {
        let mut acc = ZERO;
        for k in 0..=j {
            if k < a.len() && j - k < b.len() {
                acc += a[k] * b[j - k];
            }
        }
        *o = acc;
    }
}

/// Longest series handled by the allocation-free routines.
pub const MAX_TERMS: usize = 12;

/// `out = a^k` truncated at `out.len()` terms; `a^0` is the unit series.
pub fn pow_into(a: &[C64], k: usize, out: &mut [C64]) {
    let len = out.len();
    assert!(len <= MAX_TERMS, "series longer than MAX_TERMS");
    out.fill(ZERO);
    if len == 0 {
        return;
    }
    out[0] = C64::new(1.0, 0.0);
    let mut tmp = [ZERO; MAX_TERMS];
    for _ in 0..k {
        mul_trunc(out, a, &mut tmp[..len]);
        out.copy_from_slice(&tmp[..len]);
    }
}

pub fn pow_trunc(a: &[C64], k: usize, len: usize) -> Vec<C64> {
    let mut out = vec![ZERO; len];
    pow_into(a, k, &mut out);
    out
}

fn conj_into(a: &[C64], out: &mut [C64; MAX_TERMS]) -> usize {
    let n = a.len().min(MAX_TERMS);
    for (o, v) in out.iter_mut().zip(&a[..n]) {
        *o = v.conj();
    }
    n
}

/// `out = A^{(p+1)/2} Ā^{(p−1)/2}`, the series of `f(A)A` with
/// `f(A) = (AĀ)^{(p−1)/2}`, truncated at `out.len()` terms.
pub fn nonlinear_power_into(a: &[C64], p: u32, out: &mut [C64]) {
    let len = out.len();
    let mut ab = [ZERO; MAX_TERMS];
    let na = conj_into(a, &mut ab);
    let m = (p as usize + 1) / 2;
    let mut pa = [ZERO; MAX_TERMS];
    let mut pb = [ZERO; MAX_TERMS];
    pow_into(a, m, &mut pa[..len]);
    pow_into(&ab[..na], m - 1, &mut pb[..len]);
    mul_trunc(&pa[..len], &pb[..len], out);
}

pub fn nonlinear_power(a: &[C64], p: u32, len: usize) -> Vec<C64> {
    let mut out = vec![ZERO; len];
    nonlinear_power_into(a, p, &mut out);
    out
}

/// Directional derivative of [`nonlinear_power_into`] at `a` along `da`.
pub fn nonlinear_power_derivative_into(a: &[C64], da: &[C64], p: u32, out: &mut [C64]) {
    let len = out.len();
    let mut ab = [ZERO; MAX_TERMS];
    let mut dab = [ZERO; MAX_TERMS];
    let na = conj_into(a, &mut ab);
    let nda = conj_into(da, &mut dab);
    let m = (p as usize + 1) / 2;
    let n = m - 1;
    let mut x = [ZERO; MAX_TERMS];
    let mut y = [ZERO; MAX_TERMS];
    let mut t = [ZERO; MAX_TERMS];
    out.fill(ZERO);
    pow_into(a, m - 1, &mut x[..len]);
    pow_into(&ab[..na], n, &mut y[..len]);
    mul_trunc(&x[..len], &y[..len], &mut t[..len]);
    mul_trunc(&t[..len], da, &mut x[..len]);
    for (o, v) in out.iter_mut().zip(&x[..len]) {
        *o += *v * m as f64;
    }
    if n > 0 {
        pow_into(a, m, &mut x[..len]);
        pow_into(&ab[..na], n - 1, &mut y[..len]);
        mul_trunc(&x[..len], &y[..len], &mut t[..len]);
        mul_trunc(&t[..len], &dab[..nda], &mut x[..len]);
        for (o, v) in out.iter_mut().zip(&x[..len]) {
            *o += *v * n as f64;
        }
    }
}

pub fn nonlinear_power_derivative(a: &[C64], da: &[C64], p: u32, len: usize) -> Vec<C64> {
    let mut out = vec![ZERO; len];
    nonlinear_power_derivative_into(a, da, p, &mut out);
    out
}

/// Evaluates `Σ a_j h^j`.
pub fn evaluate(a: &[C64], h: f64) -> C64 {
    a.iter().rev().fold(ZERO, |acc, &c| acc * h + c)
}

/// Pointwise application of a series map to families of fields. `inputs[k]`
/// is a list of coefficient fields; `f` receives the coefficients at one node.
pub fn pointwise(
    inputs: &[&[Field]],
    out_len: usize,
    mut f: impl FnMut(&[Vec<C64>]) -> Vec<C64>,
) -> Vec<Field> {
    let spec = *inputs[0][0].spec();
    let mut outs: Vec<Vec<C64>> = vec![vec![ZERO; spec.len()]; out_len];
    let mut buf: Vec<Vec<C64>> = inputs.iter().map(|s| vec![ZERO; s.len()]).collect();
    for i in 0..spec.len() {
        for (b, s) in buf.iter_mut().zip(inputs) {
            for (slot, fld) in b.iter_mut().zip(s.iter()) {
                *slot = fld.values()[i];
            }
        }
        let r = f(&buf);
        for (o, v) in outs.iter_mut().zip(r) {
            o[i] = v;
        }
    }
    outs.into_iter()
        .map(|v| Field::from_values(spec, v).expect("length matches spec"))
        .collect()
}

/// Cauchy product of two coefficient families truncated at `len` terms, with
/// each coefficient dealiased.
pub fn field_product(a: &[Field], b: &[Field], len: usize) -> Vec<Field> {
    pointwise(&[a, b], len, |c| {
        let mut out = vec![ZERO; len];
        mul_trunc(&c[0], &c[1], &mut out);
        out
    })
    .iter()
    .map(dealias)
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn product_matches_evaluation() {
        let a = [c(1.0, 0.5), c(-0.3, 0.2), c(0.7, 0.0)];
        let b = [c(0.2, -1.0), c(0.4, 0.1)];
        let mut out = vec![ZERO; 4];
        mul_trunc(&a, &b, &mut out);
        let h = 0.13;
        let lhs = evaluate(&out, h);
        let rhs = evaluate(&a, h) * evaluate(&b, h);
        assert!((lhs - rhs).norm() < 1e-15);
    }

    #[test]
    fn nonlinear_power_leading_term() {
        let a = [c(0.8, -0.6) * 1.3, c(0.1, 0.2)];
        for p in [3u32, 5, 7] {
            let s = nonlinear_power(&a, p, 3);
            let expect = a[0] * a[0].norm().powi(p as i32 - 1);
            assert!((s[0] - expect).norm() < 1e-13);
        }
    }

    #[test]
    fn nonlinear_power_matches_evaluation_for_polynomial() {
        let a = [c(0.9, 0.1), c(0.2, -0.4)];
        let p = 5;
        let full = nonlinear_power(&a, p, p as usize + 1);
        let h = 0.21;
        let ah = evaluate(&a, h);
        let direct = ah.powu((p + 1) / 2) * ah.conj().powu((p - 1) / 2);
        assert!((evaluate(&full, h) - direct).norm() < 1e-13);
    }

    #[test]
    fn derivative_matches_difference() {
        let a = [c(0.9, 0.1), c(0.2, -0.4), c(0.05, 0.3)];
        let da = [c(0.3, -0.2), c(-0.1, 0.5), c(0.2, 0.2)];
        let p = 7;
        let eps = 1e-6;
        let ap: Vec<C64> = a.iter().zip(&da).map(|(x, y)| x + y * eps).collect();
        let am: Vec<C64> = a.iter().zip(&da).map(|(x, y)| x - y * eps).collect();
        let fp = nonlinear_power(&ap, p, 3);
        let fm = nonlinear_power(&am, p, 3);
        let d = nonlinear_power_derivative(&a, &da, p, 3);
        for j in 0..3 {
            let fd = (fp[j] - fm[j]) / (2.0 * eps);
            assert!((fd - d[j]).norm() < 1e-7, "order {j}");
        }
    }
}
