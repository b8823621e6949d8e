//! Grushin vector fields `X_i = d/dz_i` (i < m), `X_{m+j} = |z|^gamma d/dt_j`
//! and the closed-form derivatives of the gauge.
//!
//! Index convention: fields are 0-based; `hess[(i, j)] = X_i(X_j rho)` with
//! `i` the outer derivative, and `third(r, i, j) = X_r(X_i(X_j rho))`.
//! The eight third-derivative blocks map to (outer-first):
//!
//! | r   | i   | j   | block |
//! |-----|-----|-----|-------|
//! | z   | z   | z   | 1     |
//! | t   | z   | z   | 2     |
//! | z   | z   | t   | 3     |
//! | t   | z   | t   | 4     |
//! | z   | t   | z   | 5     |
//! | t   | t   | z   | 6     |
//! | z   | t   | t   | 7     |
//! | t   | t   | t   | 8     |

use crate::error::{Error, Result};
use crate::fd::{fd_oracle, StepRule};
use crate::field::ScalarField;
use crate::geometry::{GrushinSpace, Point};
use crate::jet::Jet;
use crate::linalg::{Matrix, Vector};

/// `X_i f(p)`, from the analytic gradient when present, else the FD oracle.
pub fn x_apply(space: &GrushinSpace, i: usize, f: &dyn ScalarField, p: &Point) -> Result<f64> {
    space.check(p)?;
    if i >= space.dim() {
        return Err(Error::IndexOutOfRange { index: i, dim: space.dim() });
    }
    if let Some(g) = f.x_gradient(space, p) {
        return Ok(g[i]);
    }
    let e = fd_oracle(space, &|q: &Point| f.eval(space, q), p, &[i], &StepRule::default())?;
    Ok(e.value)
}

/// `Zf(p)`. With an analytic gradient and `z != 0` this is
/// `sum z_i X_i f + (gamma+1) sum t_j X_{m+j} f / |z|^gamma`; otherwise the
/// derivative of `s -> f(delta_{e^s} p)` at 0 by Richardson differences.
pub fn generator_apply(space: &GrushinSpace, f: &dyn ScalarField, p: &Point) -> Result<f64> {
    space.check(p)?;
    let zn = p.z_norm();
    if zn > 0.0 {
        if let Some(g) = f.x_gradient(space, p) {
            let m = space.m();
            let w = zn.powf(space.gamma());
            let g1 = space.gamma() + 1.0;
            let mut s = 0.0;
            for (i, &c) in p.coords().iter().enumerate() {
                s += if i < m { c * g[i] } else { g1 * c * g[i] / w };
            }
            return Ok(s);
        }
    }
    let along = |s: f64| -> Result<f64> { Ok(f.eval(space, &space.dilate(s.exp(), p)?)) };
    let d = |h: f64| -> Result<f64> { Ok((along(h)? - along(-h)?) / (2.0 * h)) };
    let h = 1e-3;
    let (d1, d2, d3) = (d(h)?, d(h / 2.0)?, d(h / 4.0)?);
    let r1 = (4.0 * d2 - d1) / 3.0;
    let r2 = (4.0 * d3 - d2) / 3.0;
    let v = (16.0 * r2 - r1) / 15.0;
    if !v.is_finite() {
        return Err(Error::FdFailure("non-finite generator derivative".into()));
    }
    Ok(v)
}

/// Closed-form derivatives of `rho` (and `X psi`) at a point with `z != 0`.
#[derive(Clone, Debug)]
pub struct GaugeJets {
    space: GrushinSpace,
    coords: Vector,
    pub rho: f64,
    pub psi: f64,
    pub z_norm: f64,
    pub grad: Vector,
    pub hess: Matrix,
    pub psi_grad: Vector,
}

pub fn gauge_jets(space: &GrushinSpace, p: &Point) -> Result<GaugeJets> {
    space.check(p)?;
    let ga = space.gauge_unchecked(p);
    let zn = p.z_norm();
    if ga.at_origin {
        return Err(Error::Degenerate("gauge derivatives at the origin".into()));
    }
    if zn == 0.0 {
        return Err(Error::Degenerate("gauge derivatives on z = 0".into()));
    }
    let (m, n) = (space.m(), space.dim());
    let g = space.gamma();
    let g1 = g + 1.0;
    let (rho, psi) = (ga.rho, ga.psi);
    let z = p.z();
    let t = p.t();
    let z2 = zn * zn;
    let sq_psi = psi.sqrt();

    let mut grad: Vector = Vector::with_capacity(n);
    for l in 0..n {
        grad.push(if l < m { psi * z[l] / rho } else { g1 * sq_psi * t[l - m] / rho.powf(g1) });
    }

    let p_ = psi * psi / rho.powi(3);
    let s_ = psi / rho;
    let zg = zn.powf(g);
    let hess = Matrix::from_fn(n, |i, j| match (i < m, j < m) {
        (true, true) => {
            let dij = if i == j { 1.0 } else { 0.0 };
            -(2.0 * g + 1.0) * z[i] * z[j] * p_ + (2.0 * g * z[i] * z[j] / z2 + dij) * s_
        }
        (true, false) => {
            let tj = t[j - m];
            -(2.0 * g + 1.0) * g1 * (z[i] * tj / zg) * p_ + s_ * g * g1 * z[i] * tj / zn.powf(g + 2.0)
        }
        (false, true) => -(2.0 * g + 1.0) * g1 * (z[j] * t[i - m] / zg) * p_,
        (false, false) => {
            let dij = if i == j { 1.0 } else { 0.0 };
            -(2.0 * g + 1.0) * g1 * g1 * (t[i - m] * t[j - m] / zn.powf(2.0 * g)) * p_ + g1 * dij * s_
        }
    });

    let psi_grad = (0..n)
        .map(|l| {
            if l < m {
                2.0 * g * psi * z[l] / z2 - 2.0 * g * psi * psi * z[l] / (rho * rho)
            } else {
                -2.0 * g * g1 * psi * t[l - m] * zg / rho.powf(2.0 * g + 2.0)
            }
        })
        .collect();

    Ok(GaugeJets { space: *space, coords: p.coords().iter().copied().collect(), rho, psi, z_norm: zn, grad, hess, psi_grad })
}

/// `(rho, X rho, X X rho)` as a [`Jet`].
pub fn gauge_jet(space: &GrushinSpace, p: &Point) -> Result<Jet> {
    let g = gauge_jets(space, p)?;
    Ok(Jet { value: g.rho, grad: g.grad, hess: g.hess })
}

impl GaugeJets {
    pub fn space(&self) -> &GrushinSpace {
        &self.space
    }

    fn z(&self) -> &[f64] {
        &self.coords[..self.space.m()]
    }

    fn t(&self) -> &[f64] {
        &self.coords[self.space.m()..]
    }

    /// `X_r(X_i(X_j rho))` from the block formulas (see module table).
    pub fn third(&self, r: usize, i: usize, j: usize) -> f64 {
        let m = self.space.m();
        let g = self.space.gamma();
        let g1 = g + 1.0;
        let c = 2.0 * g + 1.0;
        let (rho, psi, zn) = (self.rho, self.psi, self.z_norm);
        let z = self.z();
        let t = self.t();
        let z2 = zn * zn;
        let zg = zn.powf(g);
        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        let p_ = psi * psi / rho.powi(3);
        let s_ = psi / rho;
        // rho^gamma psi^{1/2} = |z|^gamma
        let rg_sq = rho.powf(g) * psi.sqrt();
        // X_r(psi^2/rho^3), X_r(psi/rho) brackets for r in z
        let bp = 4.0 * g / z2 - (4.0 * g + 3.0) * psi / (rho * rho);
        let bs = 2.0 * g / z2 - psi / (rho * rho) * c;
        // and for r in t
        let tp = |l: usize| psi * psi / rho.powf(2.0 * g + 5.0) * t[l] * (4.0 * g * zg + 3.0 * rg_sq);
        let ts = |l: usize| psi / rho.powf(2.0 * g + 3.0) * t[l] * (2.0 * g * zg + rg_sq);
        match (r < m, i < m, j < m) {
            (true, true, true) => {
                let zr = z[r];
                -c * (z[j] * d(r, i) + z[i] * d(r, j)) * p_ - c * z[i] * z[j] * zr * p_ * bp
                    + 2.0 * g * ((z[i] * d(r, j) + z[j] * d(r, i)) / z2 - 2.0 * z[i] * z[j] * zr / (z2 * z2)) * s_
                    + (2.0 * g * z[i] * z[j] / z2 + d(i, j)) * s_ * zr * bs
            }
            (false, true, true) => {
                let l = r - m;
                c * g1 * z[i] * z[j] * tp(l) - (2.0 * g * z[i] * z[j] / z2 + d(i, j)) * g1 * ts(l)
            }
            (true, true, false) => {
                let (zr, tj) = (z[r], t[j - m]);
                -c * g1 * (d(r, i) * tj / zg - g * z[i] * zr * tj / zn.powf(g + 2.0)) * p_
                    - c * g1 * (z[i] * tj / zg) * p_ * zr * bp
                    + s_ * (g * g1 * (d(i, r) * tj / zn.powf(g + 2.0) - (g + 2.0) * z[i] * zr * tj / zn.powf(g + 4.0)))
                    + g * g1 * (z[i] * tj / zn.powf(g + 2.0)) * s_ * zr * bs
            }
            (false, true, false) => {
                let (l, jj) = (r - m, j - m);
                let tj = t[jj];
                -c * g1 * (z[i] * zg * d(l, jj) / zg) * p_ + c * g1 * g1 * (z[i] * tj / zg) * tp(l)
                    + s_ * (g * g1 * (z[i] * zg * d(l, jj) / zn.powf(g + 2.0)))
                    - g * g1 * g1 * (z[i] * tj / zn.powf(g + 2.0)) * ts(l)
            }
            (true, false, true) => {
                // X_r(X_{m+a} X_j rho), stored as (i = m+a, j)
                let (zr, ta, jz) = (z[r], t[i - m], j);
                -c * g1 * (d(r, jz) * ta / zg - g * z[jz] * zr * ta / zn.powf(g + 2.0)) * p_
                    - c * g1 * (z[jz] * ta / zg) * p_ * zr * bp
            }
            (false, false, true) => {
                let (l, a, jz) = (r - m, i - m, j);
                let ta = t[a];
                -c * g1 * (z[jz] * zg * d(l, a) / zg) * p_ + c * g1 * g1 * (z[jz] * ta / zg) * tp(l)
            }
            (true, false, false) => {
                let (zr, ti, tj) = (z[r], t[i - m], t[j - m]);
                -c * g1 * g1 * (-2.0 * g * ti * tj * zr / zn.powf(2.0 * g + 2.0)) * p_
                    - c * g1 * g1 * (tj * ti / zn.powf(2.0 * g)) * p_ * zr * bp
                    + g1 * d(i, j) * s_ * zr * bs
            }
            (false, false, false) => {
                let (l, a, b) = (r - m, i - m, j - m);
                let (ti, tj) = (t[a], t[b]);
                -c * g1 * g1 * ((tj * zg * d(l, a) + ti * zg * d(l, b)) / zn.powf(2.0 * g)) * p_
                    + c * g1 * g1 * g1 * (tj * ti / zn.powf(2.0 * g)) * tp(l)
                    - g1 * g1 * d(a, b) * ts(l)
            }
        }
    }

    /// Block 7 with the uncorrected monomial derivative
    /// `-2 gamma t_i z_r t_i / |z|^{2 gamma + 1}`; kept for the discrepancy report.
    pub fn third_case7_uncorrected(&self, r: usize, i: usize, j: usize) -> f64 {
        let m = self.space.m();
        assert!(r < m && i >= m && j >= m);
        let g = self.space.gamma();
        let g1 = g + 1.0;
        let c = 2.0 * g + 1.0;
        let (rho, psi, zn) = (self.rho, self.psi, self.z_norm);
        let z = self.z();
        let t = self.t();
        let z2 = zn * zn;
        let p_ = psi * psi / rho.powi(3);
        let s_ = psi / rho;
        let bp = 4.0 * g / z2 - (4.0 * g + 3.0) * psi / (rho * rho);
        let bs = 2.0 * g / z2 - psi / (rho * rho) * c;
        let (zr, ti, tj) = (z[r], t[i - m], t[j - m]);
        let dij = if i == j { 1.0 } else { 0.0 };
        -c * g1 * g1 * (-2.0 * g * ti * zr * ti / zn.powf(2.0 * g + 1.0)) * p_
            - c * g1 * g1 * (tj * ti / zn.powf(2.0 * g)) * p_ * zr * bp
            + g1 * dij * s_ * zr * bs
    }

    /// Dense `N^3` tensor, index `(r * N + i) * N + j`.
    pub fn third_tensor(&self) -> Vec<f64> {
        let n = self.space.dim();
        let mut out = Vec::with_capacity(n * n * n);
        for r in 0..n {
            for i in 0..n {
                for j in 0..n {
                    out.push(self.third(r, i, j));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Angle, Constant, Coordinate, Gauge};
    use approx::assert_relative_eq;

    fn s111() -> GrushinSpace {
        GrushinSpace::new(1, 1, 1.0).unwrap()
    }

    #[test]
    fn first_derivatives_at_unit_point() {
        let s = s111();
        let p = Point::new(&[1.0], &[1.0]);
        let j = gauge_jets(&s, &p).unwrap();
        assert_relative_eq!(j.grad[0], 0.299070, epsilon = 1e-6);
        assert_relative_eq!(j.grad[1], 0.598139, epsilon = 1e-6);
        assert_relative_eq!(j.grad[0].powi(2) + j.grad[1].powi(2), j.psi, max_relative = 1e-12);
        assert_relative_eq!(j.hess[(0, 0)], 0.71776, epsilon = 1e-5);
        let j0 = gauge_jets(&s, &Point::new(&[1.0], &[0.0])).unwrap();
        assert_eq!(j0.grad.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn x_apply_examples() {
        let s = GrushinSpace::new(2, 1, 1.5).unwrap();
        let p = Point::new(&[0.4, -0.3], &[0.7]);
        assert_relative_eq!(x_apply(&s, 2, &Coordinate(2), &p).unwrap(), 0.5f64.powf(1.5), max_relative = 1e-14);
        assert!(matches!(x_apply(&s, 3, &Gauge, &p), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn degenerate_points_rejected() {
        let s = s111();
        assert!(matches!(gauge_jets(&s, &Point::new(&[0.0], &[1.0])), Err(Error::Degenerate(_))));
        assert!(matches!(gauge_jets(&s, &Point::new(&[0.0], &[0.0])), Err(Error::Degenerate(_))));
    }

    #[test]
    fn generator_examples() {
        let s = GrushinSpace::new(2, 1, 2.0).unwrap();
        let p = Point::new(&[0.3, 0.2], &[-0.4]);
        let rho = s.rho(&p);
        assert_relative_eq!(generator_apply(&s, &Gauge, &p).unwrap(), rho, max_relative = 1e-12);
        assert!(generator_apply(&s, &Angle, &p).unwrap().abs() < 1e-12);
        assert_eq!(generator_apply(&s, &Constant(1.0), &p).unwrap(), 0.0);
        // value-only path through dilation differences, also at z = 0
        let q = Point::new(&[0.0, 0.0], &[0.5]);
        let f = crate::field::FnField(|s: &GrushinSpace, p: &Point| s.rho(p));
        assert_relative_eq!(generator_apply(&s, &f, &q).unwrap(), s.rho(&q), max_relative = 1e-9);
    }

    #[test]
    fn case7_uncorrected_form_differs() {
        let s = GrushinSpace::new(2, 2, 1.5).unwrap();
        let p = Point::new(&[0.6, -0.5], &[0.3, 0.8]);
        let j = gauge_jets(&s, &p).unwrap();
        let a = j.third(0, 2, 3);
        let b = j.third_case7_uncorrected(0, 2, 3);
        assert!((a - b).abs() > 1e-3 * a.abs());
    }
}
