//! Pointwise `L u = sum X_i(a_ij X_j u)`, the radial identity and the
//! compact-support Rellich residual.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::calculus::generator_apply;
use crate::coefficients::{f_jacobian_fd, frame_data, CoefficientField, Identity};
use crate::error::{Error, Result};
use crate::fd::{fd_oracle, StepRule};
use crate::field::{Profile, Radial, ScalarField};
use crate::geometry::{GrushinSpace, Point};
use crate::jet::Jet;
use crate::linalg::{norm, zeros, Matrix, Vector};
use crate::quadrature::{integrate_terms, AnnulusDomain, QuadratureGrid};
use crate::sampling::sphere_points;

#[derive(Clone)]
pub struct DegenerateOperator {
    pub space: GrushinSpace,
    pub coeff: Arc<dyn CoefficientField>,
}

impl std::fmt::Debug for DegenerateOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DegenerateOperator").field("space", &self.space).field("coeff", &self.coeff.name()).finish()
    }
}

/// `A` and the first-order coefficients `c_j = sum_i X_i a_ij` at a point.
#[derive(Clone, Debug)]
pub struct LocalCoefficients {
    pub a: Matrix,
    pub c: Vector,
    /// `X_k A` for every `k`.
    pub da: Vec<Matrix>,
}

impl LocalCoefficients {
    /// `L u` from a jet of `u`.
    pub fn apply(&self, u: &Jet) -> f64 {
        let n = self.a.dim();
        let mut s = 0.0;
        for j in 0..n {
            s += self.c[j] * u.grad[j];
            for i in 0..n {
                s += self.a[(i, j)] * u.hess[(i, j)];
            }
        }
        s
    }

    /// `<A X u, X u>`
    pub fn energy(&self, u: &Jet) -> f64 {
        self.a.quad_form(&u.grad, &u.grad)
    }
}

impl DegenerateOperator {
    pub fn new(space: GrushinSpace, coeff: Arc<dyn CoefficientField>) -> Self {
        DegenerateOperator { space, coeff }
    }

    /// The constant-coefficient operator `B_gamma`.
    pub fn grushin(space: GrushinSpace) -> Self {
        Self::new(space, Arc::new(Identity))
    }

    pub fn local(&self, p: &Point) -> Result<LocalCoefficients> {
        let n = self.space.dim();
        let a = self.coeff.matrix(&self.space, p);
        if a.dim() != n {
            return Err(Error::DimensionMismatch(a.dim(), n, self.space.m(), self.space.k()));
        }
        let da: Vec<Matrix> = (0..n).map(|k| self.coeff.x_derivative(&self.space, k, p)).collect::<Result<_>>()?;
        let c = (0..n).map(|j| (0..n).map(|i| da[i][(i, j)]).sum()).collect();
        Ok(LocalCoefficients { a, c, da })
    }
}

/// Analytic jet of `u`, or one assembled from the FD oracle.
pub fn jet_or_oracle(space: &GrushinSpace, u: &dyn ScalarField, p: &Point) -> Result<Jet> {
    if let Some(j) = u.jet(space, p) {
        return Ok(j);
    }
    let n = space.dim();
    let f = |q: &Point| u.eval(space, q);
    let rule = StepRule::default();
    let mut grad = zeros(n);
    let mut hess = Matrix::zeros(n);
    for i in 0..n {
        grad[i] = fd_oracle(space, &f, p, &[i], &rule)?.value;
        for j in 0..n {
            hess[(i, j)] = fd_oracle(space, &f, p, &[i, j], &rule)?.value;
        }
    }
    let j = Jet { value: u.eval(space, p), grad, hess };
    if !j.is_finite() {
        return Err(Error::MissingDerivatives("oracle jet is not finite".into()));
    }
    Ok(j)
}

/// `sum_ij [X_i a_ij X_j u + a_ij X_i X_j u](p)`.
pub fn apply_l(op: &DegenerateOperator, u: &dyn ScalarField, p: &Point) -> Result<f64> {
    op.space.check(p)?;
    if p.z_norm() == 0.0 {
        return Err(Error::Degenerate("L is evaluated off the characteristic set z = 0".into()));
    }
    let jet = jet_or_oracle(&op.space, u, p)?;
    Ok(op.local(p)?.apply(&jet))
}

/// `psi (f''(rho) + (Q - 1) f'(rho) / rho)`.
pub fn radial_apply(space: &GrushinSpace, f: &dyn Profile, p: &Point) -> Result<f64> {
    let ga = space.gauge_and_angle(p)?;
    if ga.at_origin {
        return Err(Error::Degenerate("radial identity at the origin".into()));
    }
    let (_, f1, f2) = f.eval3(ga.rho);
    Ok(ga.psi * (f2 + (space.homogeneous_dimension() - 1.0) * f1 / ga.rho))
}

/// Both sides of the radial identity and their relative difference.
pub fn radial_check<P: Profile + Clone>(space: &GrushinSpace, f: P, p: &Point) -> Result<(f64, f64, f64)> {
    let r = radial_apply(space, &f, p)?;
    let l = apply_l(&DegenerateOperator::grushin(*space), &Radial(f), p)?;
    let scale = r.abs().max(l.abs());
    let rel = if scale == 0.0 { 0.0 } else { (r - l).abs() / scale };
    Ok((r, l, rel))
}

/// `|<X v, X rho> - (psi / rho) Z v|`, zero by the gradient-generator identity.
pub fn gradient_generator_defect(space: &GrushinSpace, v: &dyn ScalarField, p: &Point) -> Result<(f64, f64)> {
    let jets = crate::calculus::gauge_jets(space, p)?;
    let xv = jet_or_oracle(space, v, p)?.grad;
    let lhs: f64 = xv.iter().zip(&jets.grad).map(|(a, b)| a * b).sum();
    let zv = generator_apply(space, v, p)?;
    Ok(((lhs - jets.psi / jets.rho * zv).abs(), norm(&xv)))
}

/// Radial factor of the Rellich field `G = phi(rho) F`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GSpec {
    pub a: f64,
    /// Use `rho^a (-log rho)` instead of `rho^a`.
    #[serde(default)]
    pub log_factor: bool,
}

impl GSpec {
    /// `(phi, phi')`
    pub fn phi(&self, rho: f64) -> (f64, f64) {
        let pa = rho.powf(self.a);
        let pa1 = self.a * rho.powf(self.a - 1.0);
        if self.log_factor {
            let l = -rho.ln();
            (pa * l, pa1 * l - pa / rho)
        } else {
            (pa, pa1)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RellichOutcome {
    /// The five integrals in order: divergence term (identically zero in this
    /// frame), commutator term, `div G` term, `G A` term, `G u L u` term.
    pub terms: [f64; 5],
    pub term_errors: [f64; 5],
    pub residual: f64,
    pub error_estimate: f64,
    pub cells: usize,
}

/// Rejects `u` that does not vanish on both gauge spheres of the annulus.
pub fn check_support(space: &GrushinSpace, u: &dyn ScalarField, domain: &AnnulusDomain) -> Result<()> {
    let probe = |rho: f64| -> f64 { sphere_points(space, rho, 256).iter().map(|p| u.eval(space, p).abs()).fold(0.0, f64::max) };
    let inside = probe(0.5 * (domain.r_in + domain.r_out)).max(1e-300);
    let mut worst = probe(domain.r_out);
    if domain.r_in > 0.0 {
        worst = worst.max(probe(domain.r_in));
    }
    if worst > 1e-10 * inside.max(1.0) {
        return Err(Error::SupportViolation(format!(
            "|u| reaches {worst:.3e} on the boundary of [{}, {}]",
            domain.r_in, domain.r_out
        )));
    }
    Ok(())
}

/// Normalized residual of the compact-support Rellich identity for
/// `G = phi(rho) F`:
/// `-2 int a_ij X_i u [X_j, G] u + int div G <A X u, X u> + int <(G A) X u, X u> - 2 int G u L u = 0`.
pub fn rellich_residual(
    op: &DegenerateOperator,
    u: &dyn ScalarField,
    g: &GSpec,
    domain: &AnnulusDomain,
    grid: &QuadratureGrid,
) -> Result<RellichOutcome> {
    let space = &op.space;
    check_support(space, u, domain)?;
    let n = space.dim();
    let out = integrate_terms(space, domain, grid, 5, |p, rho, o| {
        let Ok(jet) = jet_or_oracle(space, u, p) else { return false };
        if jet.value == 0.0 && jet.grad.iter().all(|x| *x == 0.0) {
            return true;
        }
        let (Ok(fd), Ok(loc), Ok((jf, _))) = (frame_data(op.coeff.as_ref(), space, p), op.local(p), f_jacobian_fd(op.coeff.as_ref(), space, p)) else {
            return false;
        };
        let f = &fd.derived.f_coeffs;
        let (phi, dphi) = g.phi(rho);
        let xr = &fd.jets.grad;
        let fu: f64 = f.iter().zip(&jet.grad).map(|(a, b)| a * b).sum();
        let mut t2 = 0.0;
        for j in 0..n {
            let mut comm_f = 0.0;
            for k in 0..n {
                comm_f += jf[(j, k)] * jet.grad[k] + f[k] * (jet.hess[(j, k)] - jet.hess[(k, j)]);
            }
            let comm_g = phi * comm_f + dphi * xr[j] * fu;
            let axu_j: f64 = (0..n).map(|i| loc.a[(i, j)] * jet.grad[i]).sum();
            t2 += axu_j * comm_g;
        }
        let div_f: f64 = (0..n).map(|k| jf[(k, k)]).sum();
        let div_g = dphi * rho + phi * div_f;
        let mut ga = Matrix::zeros(n);
        for k in 0..n {
            ga = ga.add(&loc.da[k].scale(f[k]));
        }
        o[0] = 0.0;
        o[1] = -2.0 * t2;
        o[2] = div_g * loc.energy(&jet);
        o[3] = phi * ga.quad_form(&jet.grad, &jet.grad);
        o[4] = -2.0 * phi * fu * loc.apply(&jet);
        true
    })?;
    let mut terms = [0.0; 5];
    let mut term_errors = [0.0; 5];
    terms.copy_from_slice(&out.values);
    term_errors.copy_from_slice(&out.errors);
    let scale = terms.iter().fold(0.0f64, |a, t| a.max(t.abs()));
    let sum: f64 = terms.iter().sum();
    let (residual, error_estimate) = if scale == 0.0 {
        (0.0, 0.0)
    } else {
        (sum.abs() / scale, term_errors.iter().sum::<f64>() / scale)
    };
    Ok(RellichOutcome { terms, term_errors, residual, error_estimate, cells: out.cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::ExampleFamily;
    use crate::field::{BumpProfile, Constant, PowerProfile};

    fn s() -> GrushinSpace {
        GrushinSpace::new(1, 1, 1.0).unwrap()
    }

    #[test]
    fn fundamental_solution_is_annihilated() {
        let sp = s();
        let q = sp.homogeneous_dimension();
        let p = Point::new(&[0.4], &[-0.3]);
        let v = apply_l(&DegenerateOperator::grushin(sp), &Radial(PowerProfile(2.0 - q)), &p).unwrap();
        assert!(v.abs() < 1e-8 * sp.rho(&p).powf(-q));
    }

    #[test]
    fn rho_squared() {
        let sp = s();
        let p = Point::new(&[1.0], &[1.0]);
        let psi = sp.gauge_and_angle(&p).unwrap().psi;
        let v = apply_l(&DegenerateOperator::grushin(sp), &Radial(PowerProfile(2.0)), &p).unwrap();
        assert!((v - 6.0 * psi).abs() < 1e-12);
        let (r, l, rel) = radial_check(&sp, PowerProfile(2.0), &p).unwrap();
        assert!(rel < 1e-12, "{r} {l}");
    }

    #[test]
    fn log_profile_q3() {
        let sp = s();
        let p = Point::new(&[0.7], &[0.2]);
        let ga = sp.gauge_and_angle(&p).unwrap();
        let r = radial_apply(&sp, &crate::field::LogProfile, &p).unwrap();
        assert!((r - ga.psi / (ga.rho * ga.rho)).abs() < 1e-14);
    }

    #[test]
    fn degenerate_point_rejected() {
        let sp = s();
        assert!(apply_l(&DegenerateOperator::grushin(sp), &Constant(1.0), &Point::new(&[0.0], &[0.5])).is_err());
    }

    #[test]
    fn zero_field_has_zero_residual() {
        let op = DegenerateOperator::grushin(s());
        let r = rellich_residual(&op, &Constant(0.0), &GSpec { a: -1.0, log_factor: false }, &AnnulusDomain::new(0.2, 0.9).unwrap(), &QuadratureGrid::with_cells(8)).unwrap();
        assert_eq!(r.residual, 0.0);
    }

    #[test]
    fn support_leak_rejected() {
        let op = DegenerateOperator::new(s(), Arc::new(ExampleFamily::default()));
        let u = Radial(BumpProfile::new(0.1, 0.9, 1.0));
        let e = rellich_residual(&op, &u, &GSpec { a: -1.0, log_factor: false }, &AnnulusDomain::new(0.3, 0.8).unwrap(), &QuadratureGrid::with_cells(8));
        assert!(matches!(e, Err(Error::SupportViolation(_))));
    }
}
