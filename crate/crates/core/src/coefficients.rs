//! Variable coefficient matrices `A(z,t)` and the derived quantities
//! `mu = <A X rho, X rho>`, `sigma = <B X rho, X rho>` (with `B = A - I`)
//! and the frame coefficients of `F = (rho/mu) sum a_ij X_i rho X_j`.

use serde::{Deserialize, Serialize};

use crate::calculus::{gauge_jets, GaugeJets};
use crate::error::{Error, Result};
use crate::fd::{fd_jacobian, fd_oracle, StepRule};
use crate::field::ScalarField;
use crate::geometry::{GrushinSpace, Point};
use crate::linalg::{zeros, Matrix, Vector};

pub trait CoefficientField: Send + Sync {
    fn name(&self) -> String;

    fn matrix(&self, space: &GrushinSpace, p: &Point) -> Matrix;

    /// `X_l A` entrywise. The default differentiates [`Self::matrix`] with the FD oracle.
    fn x_derivative(&self, space: &GrushinSpace, l: usize, p: &Point) -> Result<Matrix> {
        let n = space.dim();
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                let e = fd_oracle(space, &|q: &Point| self.matrix(space, q)[(i, j)], p, &[l], &StepRule::default())?;
                out[(i, j)] = e.value;
                out[(j, i)] = e.value;
            }
        }
        Ok(out)
    }

    /// Declared ellipticity constant `lambda`.
    fn ellipticity(&self) -> f64;

    /// Declared structural constant `Lambda`.
    fn structural(&self) -> f64;

    /// `B = A - I`.
    fn perturbation(&self, space: &GrushinSpace, p: &Point) -> Matrix {
        self.matrix(space, p).sub(&Matrix::identity(space.dim()))
    }
}

#[derive(Clone, Debug, Default)]
pub struct Identity;

impl CoefficientField for Identity {
    fn name(&self) -> String {
        "identity".into()
    }
    fn matrix(&self, space: &GrushinSpace, _: &Point) -> Matrix {
        Matrix::identity(space.dim())
    }
    fn x_derivative(&self, space: &GrushinSpace, _: usize, _: &Point) -> Result<Matrix> {
        Ok(Matrix::zeros(space.dim()))
    }
    fn ellipticity(&self) -> f64 {
        1.0
    }
    fn structural(&self) -> f64 {
        0.0
    }
}

/// `A11 = (1 + rho f) I_m`, `A12 = |z|^{gamma+1} g [delta_ij]`,
/// `A22 = (1 + |z|^{gamma+1} h) I_k` with constant `f, g, h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleFamily {
    pub f: f64,
    pub g: f64,
    pub h: f64,
    pub lambda: f64,
    pub big_lambda: f64,
}

impl ExampleFamily {
    pub fn new(f: f64, g: f64, h: f64) -> Self {
        // eigenvalues stay within 1 +- (|f| + |g| + |h|) on B_1
        let spread = f.abs() + g.abs() + h.abs();
        let lambda = (1.0 - spread).min(1.0 / (1.0 + spread)).max(1e-3);
        ExampleFamily { f, g, h, lambda, big_lambda: 2.0 * (f.abs().max(g.abs()).max(h.abs())) + 1.0 }
    }
}

impl Default for ExampleFamily {
    fn default() -> Self {
        Self::new(0.1, 0.1, 0.1)
    }
}

fn z_power_gradient(space: &GrushinSpace, p: &Point, e: f64) -> Vector {
    // X_l |z|^e
    let zn = p.z_norm();
    (0..space.dim())
        .map(|l| if l < space.m() && zn > 0.0 { e * zn.powf(e - 2.0) * p.z()[l] } else { 0.0 })
        .collect()
}

/// `X rho` at any point other than the origin (valid on `z = 0` too).
pub fn gauge_gradient(space: &GrushinSpace, p: &Point) -> Result<Vector> {
    let ga = space.gauge_and_angle(p)?;
    if ga.at_origin {
        return Err(Error::Degenerate("gauge gradient at the origin".into()));
    }
    let g1 = space.gamma() + 1.0;
    let zg = p.z_norm().powf(space.gamma());
    Ok((0..space.dim())
        .map(|l| {
            if l < space.m() {
                ga.psi * p.z()[l] / ga.rho
            } else {
                g1 * zg * p.t()[l - space.m()] / ga.rho.powf(2.0 * space.gamma() + 1.0)
            }
        })
        .collect())
}

impl CoefficientField for ExampleFamily {
    fn name(&self) -> String {
        format!("example(f={},g={},h={})", self.f, self.g, self.h)
    }

    fn matrix(&self, space: &GrushinSpace, p: &Point) -> Matrix {
        self.perturbation(space, p).add(&Matrix::identity(space.dim()))
    }

    fn perturbation(&self, space: &GrushinSpace, p: &Point) -> Matrix {
        let (m, n) = (space.m(), space.dim());
        let rho = space.rho(p);
        let zp = p.z_norm().powf(space.gamma() + 1.0);
        Matrix::from_fn(n, |i, j| match (i < m, j < m) {
            (true, true) => {
                if i == j {
                    rho * self.f
                } else {
                    0.0
                }
            }
            (false, false) => {
                if i == j {
                    zp * self.h
                } else {
                    0.0
                }
            }
            (true, false) => {
                if i == j - m {
                    zp * self.g
                } else {
                    0.0
                }
            }
            (false, true) => {
                if j == i - m {
                    zp * self.g
                } else {
                    0.0
                }
            }
        })
    }

    fn x_derivative(&self, space: &GrushinSpace, l: usize, p: &Point) -> Result<Matrix> {
        let (m, n) = (space.m(), space.dim());
        let drho = gauge_gradient(space, p)?[l];
        let dzp = z_power_gradient(space, p, space.gamma() + 1.0)[l];
        Ok(Matrix::from_fn(n, |i, j| match (i < m, j < m) {
            (true, true) => {
                if i == j {
                    drho * self.f
                } else {
                    0.0
                }
            }
            (false, false) => {
                if i == j {
                    dzp * self.h
                } else {
                    0.0
                }
            }
            (true, false) => {
                if i == j - m {
                    dzp * self.g
                } else {
                    0.0
                }
            }
            (false, true) => {
                if j == i - m {
                    dzp * self.g
                } else {
                    0.0
                }
            }
        }))
    }

    fn ellipticity(&self) -> f64 {
        self.lambda
    }

    fn structural(&self) -> f64 {
        self.big_lambda
    }
}

/// A family that breaks the structural hypothesis: `b_11 = c rho^{1/2}`,
/// every other entry of `B` zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SqrtViolation {
    pub c: f64,
    pub big_lambda: f64,
}

impl CoefficientField for SqrtViolation {
    fn name(&self) -> String {
        format!("sqrt-violation(c={})", self.c)
    }
    fn matrix(&self, space: &GrushinSpace, p: &Point) -> Matrix {
        self.perturbation(space, p).add(&Matrix::identity(space.dim()))
    }
    fn perturbation(&self, space: &GrushinSpace, p: &Point) -> Matrix {
        let mut b = Matrix::zeros(space.dim());
        b[(0, 0)] = self.c * space.rho(p).sqrt();
        b
    }
    fn x_derivative(&self, space: &GrushinSpace, l: usize, p: &Point) -> Result<Matrix> {
        let mut d = Matrix::zeros(space.dim());
        let rho = space.rho(p);
        d[(0, 0)] = 0.5 * self.c * gauge_gradient(space, p)?[l] / rho.sqrt();
        Ok(d)
    }
    fn ellipticity(&self) -> f64 {
        1.0 / (1.0 + self.c.abs())
    }
    fn structural(&self) -> f64 {
        self.big_lambda
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedQuantities {
    pub rho: f64,
    pub psi: f64,
    pub mu: f64,
    pub sigma: f64,
    /// Coefficients of `F` in the frame `X_1..X_N`.
    pub f_coeffs: Vector,
}

/// Everything pointwise that the checks need, computed once.
#[derive(Clone, Debug)]
pub struct FrameData {
    pub jets: GaugeJets,
    pub a: Matrix,
    pub derived: DerivedQuantities,
}

pub fn frame_data(coeff: &dyn CoefficientField, space: &GrushinSpace, p: &Point) -> Result<FrameData> {
    let jets = gauge_jets(space, p)?;
    let a = coeff.matrix(space, p);
    let derived = assemble(space, &jets, &a, &coeff.perturbation(space, p))?;
    check_ellipticity(coeff, &a)?;
    Ok(FrameData { jets, a, derived })
}

fn check_ellipticity(coeff: &dyn CoefficientField, a: &Matrix) -> Result<()> {
    let lam = coeff.ellipticity();
    let ev = a.sym_eigenvalues();
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    if lo < lam * (1.0 - 1e-12) || hi > (1.0 + 1e-12) / lam {
        return Err(Error::Ellipticity(format!("eigenvalues [{lo}, {hi}] outside [{lam}, {}]", 1.0 / lam)));
    }
    Ok(())
}

fn assemble(space: &GrushinSpace, jets: &GaugeJets, a: &Matrix, b: &Matrix) -> Result<DerivedQuantities> {
    let n = space.dim();
    let axr = a.mul_vec(&jets.grad);
    let mu: f64 = axr.iter().zip(&jets.grad).map(|(x, y)| x * y).sum();
    if !(mu > 0.0) {
        return Err(Error::Degenerate(format!("mu = {mu} is not positive")));
    }
    // F_k = (rho/mu) sum_i a_ik X_i rho; A symmetric so this is (A X rho)_k
    let f_coeffs = (0..n).map(|k| jets.rho / mu * axr[k]).collect();
    let sigma = b.quad_form(&jets.grad, &jets.grad);
    Ok(DerivedQuantities { rho: jets.rho, psi: jets.psi, mu, sigma, f_coeffs })
}

pub fn derived_at(coeff: &dyn CoefficientField, space: &GrushinSpace, p: &Point) -> Result<DerivedQuantities> {
    Ok(frame_data(coeff, space, p)?.derived)
}

/// `F f (p) = (rho/mu) sum a_ij X_i rho X_j f`.
pub fn f_apply(coeff: &dyn CoefficientField, space: &GrushinSpace, f: &dyn ScalarField, p: &Point) -> Result<f64> {
    let d = derived_at(coeff, space, p)?;
    let xf = match f.x_gradient(space, p) {
        Some(g) => g,
        None => {
            let mut g = zeros(space.dim());
            for (i, gi) in g.iter_mut().enumerate() {
                *gi = fd_oracle(space, &|q: &Point| f.eval(space, q), p, &[i], &StepRule::default())?.value;
            }
            g
        }
    };
    Ok(d.f_coeffs.iter().zip(&xf).map(|(a, b)| a * b).sum())
}

/// `F` frame coefficients as a function of the point, for differentiation.
pub fn f_coeffs_at(coeff: &dyn CoefficientField, space: &GrushinSpace, p: &Point) -> Result<Vector> {
    let jets = gauge_jets(space, p)?;
    let a = coeff.matrix(space, p);
    Ok(assemble(space, &jets, &a, &coeff.perturbation(space, p))?.f_coeffs)
}

/// `X_j mu` from closed forms and `X A`.
pub fn mu_gradient(coeff: &dyn CoefficientField, space: &GrushinSpace, fd: &FrameData, p: &Point) -> Result<Vector> {
    let n = space.dim();
    let g = &fd.jets.grad;
    let mut out = zeros(n);
    for (j, o) in out.iter_mut().enumerate() {
        let da = coeff.x_derivative(space, j, p)?;
        let hrow: Vector = (0..n).map(|b| fd.jets.hess[(j, b)]).collect();
        *o = da.quad_form(g, g) + fd.a.quad_form(g, &hrow) + fd.a.quad_form(&hrow, g);
    }
    Ok(out)
}

/// `X_j F_k` in closed form (row `j`, column `k`).
pub fn f_jacobian_analytic(coeff: &dyn CoefficientField, space: &GrushinSpace, fd: &FrameData, p: &Point) -> Result<Matrix> {
    let n = space.dim();
    let g = &fd.jets.grad;
    let (rho, mu) = (fd.derived.rho, fd.derived.mu);
    let dmu = mu_gradient(coeff, space, fd, p)?;
    let axr = fd.a.mul_vec(g);
    let mut out = Matrix::zeros(n);
    for j in 0..n {
        let da = coeff.x_derivative(space, j, p)?;
        let hrow: Vector = (0..n).map(|b| fd.jets.hess[(j, b)]).collect();
        let d_axr = da.mul_vec(g);
        let a_h = fd.a.mul_vec(&hrow);
        let pre = g[j] / mu - rho * dmu[j] / (mu * mu);
        for k in 0..n {
            out[(j, k)] = pre * axr[k] + rho / mu * (d_axr[k] + a_h[k]);
        }
    }
    Ok(out)
}

/// `X_j F_k` by the FD oracle (row `j`, column `k`), with error estimates.
pub fn f_jacobian_fd(coeff: &dyn CoefficientField, space: &GrushinSpace, p: &Point) -> Result<(Matrix, Matrix)> {
    fd_jacobian(space, &|q: &Point| f_coeffs_at(coeff, space, q), p, &StepRule::default())
}

/// Worst measured ratio for each structural bound on `B` and `X B`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRatios {
    pub b_upper_left: f64,
    pub b_other: f64,
    pub xb_z_upper_left: f64,
    pub xb_t_mixed: f64,
    pub xb_other: f64,
}

impl HypothesisRatios {
    pub fn minimal_lambda(&self) -> f64 {
        [self.b_upper_left, self.b_other, self.xb_z_upper_left, self.xb_t_mixed, self.xb_other]
            .into_iter()
            .fold(0.0, f64::max)
    }

    pub fn merge(&self, o: &Self) -> Self {
        HypothesisRatios {
            b_upper_left: self.b_upper_left.max(o.b_upper_left),
            b_other: self.b_other.max(o.b_other),
            xb_z_upper_left: self.xb_z_upper_left.max(o.xb_z_upper_left),
            xb_t_mixed: self.xb_t_mixed.max(o.xb_t_mixed),
            xb_other: self.xb_other.max(o.xb_other),
        }
    }
}

pub fn hypothesis_ratios_at(coeff: &dyn CoefficientField, space: &GrushinSpace, p: &Point) -> Result<HypothesisRatios> {
    let (m, n) = (space.m(), space.dim());
    let ga = space.gauge_and_angle(p)?;
    let (rho, psi) = (ga.rho, ga.psi);
    let g = space.gamma();
    let b = coeff.perturbation(space, p);
    let mut r = HypothesisRatios::default();
    let other_scale = psi.powf(0.5 + 0.5 / g) * rho;
    for i in 0..n {
        for j in 0..n {
            let v = b[(i, j)].abs();
            if i < m && j < m {
                r.b_upper_left = r.b_upper_left.max(v / rho);
            } else if v > 0.0 {
                r.b_other = r.b_other.max(v / other_scale);
            }
        }
    }
    for k in 0..n {
        let db = coeff.x_derivative(space, k, p)?;
        for i in 0..n {
            for j in 0..n {
                let v = db[(i, j)].abs();
                if v == 0.0 {
                    continue;
                }
                if k < m && i < m && j < m {
                    r.xb_z_upper_left = r.xb_z_upper_left.max(v);
                } else if k >= m && i.max(j) >= m {
                    r.xb_t_mixed = r.xb_t_mixed.max(v / psi.powf(1.0 + 0.5 / g));
                } else {
                    r.xb_other = r.xb_other.max(v / psi.sqrt());
                }
            }
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_collapses() {
        let s = GrushinSpace::new(1, 1, 1.0).unwrap();
        let p = Point::new(&[1.0], &[1.0]);
        let d = derived_at(&Identity, &s, &p).unwrap();
        assert_relative_eq!(d.mu, 0.4472136, epsilon = 1e-7);
        assert_eq!(d.sigma, 0.0);
    }

    #[test]
    fn example_mu_by_contraction() {
        let s = GrushinSpace::new(1, 1, 1.0).unwrap();
        let p = Point::new(&[1.0], &[1.0]);
        let d = derived_at(&ExampleFamily::default(), &s, &p).unwrap();
        let (g0, g1) = (0.299070, 0.598139);
        let rho = 5f64.powf(0.25);
        let expected = 0.4472136 + 0.1 * (rho * g0 * g0 + 2.0 * g0 * g1 + g1 * g1);
        assert_relative_eq!(d.mu, expected, epsilon = 1e-5);
    }

    #[test]
    fn f_of_rho_is_rho() {
        let s = GrushinSpace::new(2, 1, 1.5).unwrap();
        let p = Point::new(&[0.3, -0.2], &[0.4]);
        let v = f_apply(&ExampleFamily::default(), &s, &crate::field::Gauge, &p).unwrap();
        assert_relative_eq!(v, s.rho(&p), max_relative = 1e-12);
        assert_eq!(f_apply(&Identity, &s, &crate::field::Constant(2.0), &p).unwrap(), 0.0);
    }

    #[test]
    fn ellipticity_violation_detected() {
        let s = GrushinSpace::new(1, 1, 1.0).unwrap();
        let bad = ExampleFamily { f: 5.0, g: 0.0, h: 0.0, lambda: 0.9, big_lambda: 10.0 };
        let p = Point::new(&[0.9], &[0.5]);
        assert!(matches!(derived_at(&bad, &s, &p), Err(Error::Ellipticity(_))));
    }

    #[test]
    fn analytic_and_fd_jacobian_agree() {
        let s = GrushinSpace::new(2, 1, 1.0).unwrap();
        let c = ExampleFamily::default();
        let p = Point::new(&[0.3, 0.25], &[-0.2]);
        let fd = frame_data(&c, &s, &p).unwrap();
        let an = f_jacobian_analytic(&c, &s, &fd, &p).unwrap();
        let (num, err) = f_jacobian_fd(&c, &s, &p).unwrap();
        for j in 0..3 {
            for k in 0..3 {
                let tol = (1e-7 * num[(j, k)].abs()).max(err[(j, k)]).max(1e-9);
                assert!((an[(j, k)] - num[(j, k)]).abs() <= tol, "{j},{k}: {} vs {}", an[(j, k)], num[(j, k)]);
            }
        }
    }

    #[test]
    fn hypothesis_ratio_of_example_is_f() {
        let s = GrushinSpace::new(1, 1, 1.0).unwrap();
        let c = ExampleFamily::new(0.3, 0.1, 0.1);
        let r = hypothesis_ratios_at(&c, &s, &Point::new(&[0.2], &[0.1])).unwrap();
        assert_relative_eq!(r.b_upper_left, 0.3, max_relative = 1e-14);
        assert_eq!(hypothesis_ratios_at(&Identity, &s, &Point::new(&[0.2], &[0.1])).unwrap().minimal_lambda(), 0.0);
    }
}
