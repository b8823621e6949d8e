//! Scalar fields with optional analytic X-jets.

use std::sync::Arc;

use crate::calculus::gauge_jet;
use crate::geometry::{GrushinSpace, Point};
use crate::jet::{z_norm_sq_jet, Jet};
use crate::linalg::Vector;

pub trait ScalarField: Send + Sync {
    fn eval(&self, space: &GrushinSpace, p: &Point) -> f64;

    /// Analytic value, X-gradient and X-Hessian, when available.
    fn jet(&self, _space: &GrushinSpace, _p: &Point) -> Option<Jet> {
        None
    }

    fn x_gradient(&self, space: &GrushinSpace, p: &Point) -> Option<Vector> {
        self.jet(space, p).map(|j| j.grad)
    }
}

impl<T: ScalarField + ?Sized> ScalarField for Arc<T> {
    fn eval(&self, space: &GrushinSpace, p: &Point) -> f64 {
        (**self).eval(space, p)
    }
    fn jet(&self, space: &GrushinSpace, p: &Point) -> Option<Jet> {
        (**self).jet(space, p)
    }
    fn x_gradient(&self, space: &GrushinSpace, p: &Point) -> Option<Vector> {
        (**self).x_gradient(space, p)
    }
}

/// Value-only field from a closure.
pub struct FnField<F>(pub F);

impl<F: Fn(&GrushinSpace, &Point) -> f64 + Send + Sync> ScalarField for FnField<F> {
    fn eval(&self, space: &GrushinSpace, p: &Point) -> f64 {
        (self.0)(space, p)
    }
}

/// Field whose jet comes from a closure; the value is the jet's value.
pub struct JetField<F>(pub F);

impl<F: Fn(&GrushinSpace, &Point) -> Jet + Send + Sync> ScalarField for JetField<F> {
    fn eval(&self, space: &GrushinSpace, p: &Point) -> f64 {
        (self.0)(space, p).value
    }
    fn jet(&self, space: &GrushinSpace, p: &Point) -> Option<Jet> {
        Some((self.0)(space, p))
    }
}

pub struct Constant(pub f64);

impl ScalarField for Constant {
    fn eval(&self, _: &GrushinSpace, _: &Point) -> f64 {
        self.0
    }
    fn jet(&self, space: &GrushinSpace, _: &Point) -> Option<Jet> {
        Some(Jet::constant(space.dim(), self.0))
    }
}

/// Coordinate function `x_c`, packed index.
pub struct Coordinate(pub usize);

impl ScalarField for Coordinate {
    fn eval(&self, _: &GrushinSpace, p: &Point) -> f64 {
        p.coords()[self.0]
    }
    fn jet(&self, space: &GrushinSpace, p: &Point) -> Option<Jet> {
        Some(Jet::coordinate(space, p, self.0))
    }
}

/// The gauge `rho`; jets need `z != 0`.
pub struct Gauge;

impl ScalarField for Gauge {
    fn eval(&self, space: &GrushinSpace, p: &Point) -> f64 {
        space.rho(p)
    }
    fn jet(&self, space: &GrushinSpace, p: &Point) -> Option<Jet> {
        gauge_jet(space, p).ok()
    }
}

/// The angle function `psi = |z|^{2 gamma} / rho^{2 gamma}`.
pub struct Angle;

impl ScalarField for Angle {
    fn eval(&self, space: &GrushinSpace, p: &Point) -> f64 {
        space.gauge_unchecked(p).psi
    }
    fn jet(&self, space: &GrushinSpace, p: &Point) -> Option<Jet> {
        psi_jet(space, p)
    }
}

pub fn psi_jet(space: &GrushinSpace, p: &Point) -> Option<Jet> {
    if space.k() == 0 {
        return Some(Jet::constant(space.dim(), 1.0));
    }
    let g = space.gamma();
    let rho = gauge_jet(space, p).ok()?;
    Some(z_norm_sq_jet(space, p).powf(g).mul(&rho.powf(-2.0 * g)))
}

/// A function of one variable with its first two derivatives.
pub trait Profile: Send + Sync {
    /// `(f(r), f'(r), f''(r))`.
    fn eval3(&self, r: f64) -> (f64, f64, f64);
}

#[derive(Clone, Copy, Debug)]
pub struct PowerProfile(pub f64);

impl Profile for PowerProfile {
    fn eval3(&self, r: f64) -> (f64, f64, f64) {
        let e = self.0;
        (r.powf(e), e * r.powf(e - 1.0), e * (e - 1.0) * r.powf(e - 2.0))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LogProfile;

impl Profile for LogProfile {
    fn eval3(&self, r: f64) -> (f64, f64, f64) {
        (r.ln(), 1.0 / r, -1.0 / (r * r))
    }
}

/// `exp(-c r^2)`.
#[derive(Clone, Copy, Debug)]
pub struct GaussianProfile(pub f64);

impl Profile for GaussianProfile {
    fn eval3(&self, r: f64) -> (f64, f64, f64) {
        let c = self.0;
        let e = (-c * r * r).exp();
        (e, -2.0 * c * r * e, (4.0 * c * c * r * r - 2.0 * c) * e)
    }
}

/// `exp(sharp (1 - 1/(1 - s^2)))` with `s` mapping `[a, b]` onto `[-1, 1]`;
/// zero outside `(a, b)` together with all derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BumpProfile {
    pub a: f64,
    pub b: f64,
    pub sharp: f64,
}

impl BumpProfile {
    pub fn new(a: f64, b: f64, sharp: f64) -> Self {
        BumpProfile { a, b, sharp }
    }
}

/// Standard bump on `[-1, 1]` with its first two derivatives in `s`.
pub fn bump1d(s: f64, sharp: f64) -> (f64, f64, f64) {
    let d = 1.0 - s * s;
    if d <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let f = (sharp * (1.0 - 1.0 / d)).exp();
    if f == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let g1 = -2.0 * sharp * s / (d * d);
    let g2 = -sharp * (2.0 + 6.0 * s * s) / (d * d * d);
    (f, g1 * f, (g2 + g1 * g1) * f)
}

impl Profile for BumpProfile {
    fn eval3(&self, r: f64) -> (f64, f64, f64) {
        let k = 2.0 / (self.b - self.a);
        let (f, f1, f2) = bump1d((r - self.a) * k - 1.0, self.sharp);
        (f, f1 * k, f2 * k * k)
    }
}

impl<F: Fn(f64) -> (f64, f64, f64) + Send + Sync> Profile for F {
    fn eval3(&self, r: f64) -> (f64, f64, f64) {
        self(r)
    }
}

/// `f(rho)` for a radial profile `f`.
pub struct Radial<P>(pub P);

impl<P: Profile> ScalarField for Radial<P> {
    fn eval(&self, space: &GrushinSpace, p: &Point) -> f64 {
        self.0.eval3(space.rho(p)).0
    }
    fn jet(&self, space: &GrushinSpace, p: &Point) -> Option<Jet> {
        let r = gauge_jet(space, p).ok()?;
        let (f0, f1, f2) = self.0.eval3(r.value);
        Some(r.compose(f0, f1, f2))
    }
}

/// Five smooth fields with analytic jets, used by the commutator and
/// identity checks. Index in `0..5`.
pub fn smooth_test_field(index: usize) -> JetField<impl Fn(&GrushinSpace, &Point) -> Jet + Send + Sync> {
    JetField(move |space: &GrushinSpace, p: &Point| {
        let n = space.dim();
        let x = |c: usize| Jet::coordinate(space, p, c % n);
        let lin = |w: &[f64]| {
            let mut acc = Jet::constant(n, 0.0);
            for (c, &wc) in w.iter().enumerate() {
                acc = acc.add(&x(c).scale(wc));
            }
            acc
        };
        let r2 = {
            let mut acc = Jet::constant(n, 0.0);
            for c in 0..n {
                acc = acc.add(&x(c).mul(&x(c)));
            }
            acc
        };
        match index % 5 {
            0 => lin(&[1.0, 0.5, -0.25, 0.125, 0.3]).sin(),
            1 => r2.scale(-0.7).exp(),
            2 => x(0).mul(&x(n - 1)).add(&x(1).mul(&x(1)).scale(0.5)),
            3 => lin(&[0.4, -0.9, 0.2, 0.6, -0.1]).sin().mul(&r2.scale(-0.3).exp()),
            _ => r2.add_const(1.0).recip().mul(&x(n - 1).add_const(0.5)),
        }
    })
}
