//! Least-squares helpers for scaling-law fits.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 && sxx > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    LineFit { slope, intercept, r2 }
}

/// Slope of `log y` against `log x`.
pub fn log_log_fit(x: &[f64], y: &[f64]) -> LineFit {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub a: f64,
    pub exponent: f64,
    pub b: f64,
    pub residual: f64,
}

/// Fits `y ~ a x^e + b` by scanning `e` over `[e_lo, e_hi]` and solving the
/// linear problem in `(a, b)` at each step.
pub fn power_offset_fit(x: &[f64], y: &[f64], e_lo: f64, e_hi: f64) -> PowerFit {
    let steps = 4000;
    let mut best = PowerFit { a: 0.0, exponent: e_lo, b: 0.0, residual: f64::INFINITY };
    for s in 0..=steps {
        let e = e_lo + (e_hi - e_lo) * s as f64 / steps as f64;
        let xe: Vec<f64> = x.iter().map(|v| v.powf(e)).collect();
        let f = linear_fit(&xe, y);
        let res: f64 = xe.iter().zip(y).map(|(u, v)| (f.slope * u + f.intercept - v).powi(2)).sum();
        if res < best.residual - 1e-15 * res.abs().max(1e-300) {
            best = PowerFit { a: f.slope, exponent: e, b: f.intercept, residual: res };
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_line_and_power() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
        assert!((log_log_fit(&x, &y).slope - 1.5).abs() < 1e-12);
        let x = [1.0, 10.0, 100.0, 1000.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 0.7 * v.powf(0.4) + 2.0).collect();
        let f = power_offset_fit(&x, &y, 0.0, 2.0);
        assert!((f.exponent - 0.4).abs() < 1e-3);
    }
}
