//! Nested central differences along Grushin fields, with Richardson
//! extrapolation over the step sequence `h, h/2, h/4`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GrushinSpace, Point};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepScaling {
    /// `h = base * max(1, rho)` on every axis.
    Gauge,
    /// `h = base * |z|` on z-axes and `h = base * rho^{gamma+1} / (gamma+1)` on t-axes.
    Local,
}

/// Base steps for derivative orders 1, 2, 3 and how they scale with the point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRule {
    pub base: [f64; 3],
    pub scaling: StepScaling,
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule { base: [1e-2, 2e-2, 4e-2], scaling: StepScaling::Local }
    }
}

impl StepRule {
    pub fn gauge_scaled() -> Self {
        StepRule { base: [1e-5, 1e-4, 1e-4], scaling: StepScaling::Gauge }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdEstimate {
    pub value: f64,
    pub error: f64,
}

/// `X_{fields[0]} X_{fields[1]} ... f (p)`, outermost field first.
pub fn fd_oracle<F>(space: &GrushinSpace, f: &F, p: &Point, fields: &[usize], rule: &StepRule) -> Result<FdEstimate>
where
    F: Fn(&Point) -> f64 + ?Sized,
{
    space.check(p)?;
    let n = space.dim();
    if let Some(&bad) = fields.iter().find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange { index: bad, dim: n });
    }
    let order = fields.len();
    if order == 0 {
        let v = f(p);
        if !v.is_finite() {
            return Err(Error::FdFailure("non-finite value".into()));
        }
        return Ok(FdEstimate { value: v, error: 0.0 });
    }
    if order > 3 {
        return Err(Error::param("FD oracle supports orders up to 3"));
    }
    let ga = space.gauge_unchecked(p);
    let base = rule.base[order - 1];
    let zn = p.z_norm();
    let hz = match rule.scaling {
        StepScaling::Gauge => base * ga.rho.max(1.0),
        StepScaling::Local => base * zn,
    };
    let ht = match rule.scaling {
        StepScaling::Gauge => base * ga.rho.max(1.0),
        StepScaling::Local => base * ga.rho.powf(space.gamma() + 1.0) / (space.gamma() + 1.0),
    };
    if !(hz > 1e-300 && ht > 1e-300) {
        return Err(Error::FdFailure(format!("step underflow (h_z={hz:e}, h_t={ht:e})")));
    }
    let m = space.m();
    let mut fmax = 0.0f64;
    let mut weight_prod = 1.0f64;
    let mut quotient = |scale: f64| -> Result<f64> {
        let hs: Vec<f64> = fields.iter().map(|&i| scale * if i < m { hz } else { ht }).collect();
        let v = nested(space, f, p, fields, &hs, &mut fmax)?;
        Ok(v)
    };
    let d1 = quotient(1.0)?;
    let d2 = quotient(0.5)?;
    let d3 = quotient(0.25)?;
    let r1 = (4.0 * d2 - d1) / 3.0;
    let r2 = (4.0 * d3 - d2) / 3.0;
    for &i in fields {
        weight_prod *= space.field_weight(i, p).max(1e-300);
    }
    let hprod: f64 = fields.iter().map(|&i| 0.25 * if i < m { hz } else { ht }).product();
    let roundoff = 8.0 * (1u32 << order) as f64 * f64::EPSILON * fmax * weight_prod / hprod;
    let est = FdEstimate { value: r2, error: (r2 - r1).abs() + roundoff };
    if !est.value.is_finite() || !est.error.is_finite() {
        return Err(Error::FdFailure("non-finite difference quotient".into()));
    }
    Ok(est)
}

fn nested<F>(space: &GrushinSpace, f: &F, p: &Point, fields: &[usize], hs: &[f64], fmax: &mut f64) -> Result<f64>
where
    F: Fn(&Point) -> f64 + ?Sized,
{
    match fields.split_first() {
        None => {
            let v = f(p);
            if !v.is_finite() {
                return Err(Error::FdFailure("non-finite evaluation in stencil".into()));
            }
            *fmax = fmax.max(v.abs());
            Ok(v)
        }
        Some((&i, rest)) => {
            let h = hs[0];
            let plus = nested(space, f, &p.shifted(i, h), rest, &hs[1..], fmax)?;
            let minus = nested(space, f, &p.shifted(i, -h), rest, &hs[1..], fmax)?;
            Ok(space.field_weight(i, p) * (plus - minus) / (2.0 * h))
        }
    }
}

/// Richardson-extrapolated X-gradient of a vector-valued map:
/// `out.0[(j, k)] ~ X_j c_k (p)`, `out.1` the matching error estimates.
pub fn fd_jacobian<G>(space: &GrushinSpace, c: &G, p: &Point, rule: &StepRule) -> Result<(crate::linalg::Matrix, crate::linalg::Matrix)>
where
    G: Fn(&Point) -> Result<crate::linalg::Vector> + ?Sized,
{
    use crate::linalg::Matrix;
    let n = space.dim();
    let m = space.m();
    let ga = space.gauge_unchecked(p);
    let base = rule.base[0];
    let (hz, ht) = match rule.scaling {
        StepScaling::Gauge => (base * ga.rho.max(1.0), base * ga.rho.max(1.0)),
        StepScaling::Local => (base * p.z_norm(), base * ga.rho.powf(space.gamma() + 1.0) / (space.gamma() + 1.0)),
    };
    if !(hz > 1e-300 && ht > 1e-300) {
        return Err(Error::FdFailure(format!("step underflow (h_z={hz:e}, h_t={ht:e})")));
    }
    let nk = c(p)?.len();
    let mut val = Matrix::zeros(n.max(nk));
    let mut err = Matrix::zeros(n.max(nk));
    for j in 0..n {
        let h = if j < m { hz } else { ht };
        let w = space.field_weight(j, p);
        let mut d = [crate::linalg::zeros(nk), crate::linalg::zeros(nk), crate::linalg::zeros(nk)];
        let mut fmax = vec![0.0f64; nk];
        for (s, dk) in d.iter_mut().enumerate() {
            let hh = h / (1 << s) as f64;
            let a = c(&p.shifted(j, hh))?;
            let b = c(&p.shifted(j, -hh))?;
            for k in 0..nk {
                dk[k] = w * (a[k] - b[k]) / (2.0 * hh);
                fmax[k] = fmax[k].max(a[k].abs()).max(b[k].abs());
            }
        }
        for k in 0..nk {
            let r1 = (4.0 * d[1][k] - d[0][k]) / 3.0;
            let r2 = (4.0 * d[2][k] - d[1][k]) / 3.0;
            if !r2.is_finite() {
                return Err(Error::FdFailure("non-finite jacobian entry".into()));
            }
            val[(j, k)] = r2;
            err[(j, k)] = (r2 - r1).abs() + 16.0 * f64::EPSILON * fmax[k] * w / (0.25 * h);
        }
    }
    Ok((val, err))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_zero_is_identity() {
        let s = GrushinSpace::new(1, 1, 1.0).unwrap();
        let p = Point::new(&[0.5], &[0.2]);
        let e = fd_oracle(&s, &|q: &Point| s.rho(q), &p, &[], &StepRule::default()).unwrap();
        assert_eq!(e.value, s.rho(&p));
        assert_eq!(e.error, 0.0);
    }

    #[test]
    fn coordinate_field() {
        let s = GrushinSpace::new(1, 1, 2.0).unwrap();
        let p = Point::new(&[0.5], &[0.2]);
        let e = fd_oracle(&s, &|q: &Point| q.t()[0], &p, &[1], &StepRule::default()).unwrap();
        assert!((e.value - 0.25).abs() < 1e-14);
    }

    #[test]
    fn noncommuting_order() {
        // X_1 X_2 t = d/dz |z|^gamma, X_2 X_1 t = 0
        let s = GrushinSpace::new(1, 1, 2.0).unwrap();
        let p = Point::new(&[0.5], &[0.2]);
        let f = |q: &Point| q.t()[0];
        let a = fd_oracle(&s, &f, &p, &[0, 1], &StepRule::default()).unwrap();
        let b = fd_oracle(&s, &f, &p, &[1, 0], &StepRule::default()).unwrap();
        assert!((a.value - 1.0).abs() < 1e-10);
        assert!(b.value.abs() < 1e-10);
    }

    #[test]
    fn step_underflow_reported() {
        let s = GrushinSpace::new(1, 1, 1.0).unwrap();
        let p = Point::new(&[0.0], &[0.2]);
        let r = fd_oracle(&s, &|q: &Point| s.rho(q), &p, &[0], &StepRule::default());
        assert!(matches!(r, Err(Error::FdFailure(_))));
    }
}
