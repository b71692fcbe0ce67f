//! Log-log least-squares exponent fits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("value {value} at hbar = {hbar} is not positive")]
    NonPositive { hbar: f64, value: f64 },
}

/// Fitted exponent `e` of `value ∼ C·ħ^e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
}

/// Least-squares slope of `log value` against `log ħ`, with the standard error
/// of the slope from the residuals.
pub fn fit_exponent(points: &[(f64, f64)]) -> Result<SlopeFit, FitError> {
    if points.len() < 4 {
        return Err(FitError::TooFewPoints(points.len()));
    }
    if let Some(&(hbar, value)) = points.iter().find(|(h, v)| !(*v > 0.0) || !(*h > 0.0)) {
        return Err(FitError::NonPositive { hbar, value });
    }
    let (x, y): (Vec<f64>, Vec<f64>) = points.iter().map(|(h, v)| (h.ln(), v.ln())).unzip();
    Ok(linear_fit(&x, &y))
}

/// Ordinary least squares `y ≈ a + b x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> SlopeFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let stderr = if n > 2.0 { (rss / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    SlopeFit { slope, stderr, intercept }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power() {
        let pts: Vec<_> = [0.45, 0.4, 0.3, 0.2].iter().map(|&h: &f64| (h, h * h)).collect();
        let f = fit_exponent(&pts).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && f.stderr < 1e-12);
    }

    #[test]
    fn constant_values() {
        let pts: Vec<_> = [0.45, 0.4, 0.3, 0.2].iter().map(|&h| (h, 3.0)).collect();
        assert!(fit_exponent(&pts).unwrap().slope.abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(fit_exponent(&[(0.5, 1.0); 3]), Err(FitError::TooFewPoints(3)));
        let pts = [(0.5, 1.0), (0.4, 0.0), (0.3, 1.0), (0.2, 1.0)];
        assert!(matches!(fit_exponent(&pts), Err(FitError::NonPositive { .. })));
    }
}
