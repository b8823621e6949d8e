//! 128-bit floating point used by oracle cross-checks.

use astro_float::{BigFloat, Consts, Radix, RoundingMode};
use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::geometry::{GrushinSpace, Point};

pub const PRECISION: usize = 128;
const RM: RoundingMode = RoundingMode::ToEven;

thread_local! {
    static CONSTS: RefCell<Consts> = RefCell::new(Consts::new().expect("constant cache"));
}

fn with_cc<R>(f: impl FnOnce(&mut Consts) -> R) -> R {
    CONSTS.with(|c| f(&mut c.borrow_mut()))
}

#[derive(Clone, Debug)]
pub struct Quad(BigFloat);

impl Quad {
    pub fn new(x: f64) -> Self {
        Quad(BigFloat::from_f64(x, PRECISION))
    }

    pub fn zero() -> Self {
        Self::new(0.0)
    }

    pub fn powf(&self, e: &Quad) -> Quad {
        if self.0.is_zero() {
            return Quad::zero();
        }
        with_cc(|cc| Quad(self.0.pow(&e.0, PRECISION, RM, cc)))
    }

    pub fn powf64(&self, e: f64) -> Quad {
        self.powf(&Quad::new(e))
    }

    pub fn sqrt(&self) -> Quad {
        Quad(self.0.sqrt(PRECISION, RM))
    }

    pub fn ln(&self) -> Quad {
        with_cc(|cc| Quad(self.0.ln(PRECISION, RM, cc)))
    }

    pub fn exp(&self) -> Quad {
        with_cc(|cc| Quad(self.0.exp(PRECISION, RM, cc)))
    }

    pub fn abs(&self) -> Quad {
        Quad(self.0.abs())
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    /// Correctly rounded conversion through a decimal string.
    pub fn to_f64(&self) -> f64 {
        if self.0.is_zero() {
            return 0.0;
        }
        let s = with_cc(|cc| self.0.format(Radix::Dec, RM, cc)).unwrap_or_default();
        s.parse().unwrap_or(f64::NAN)
    }
}

macro_rules! binop {
    ($tr:ident, $f:ident, $m:ident) => {
        impl $tr for Quad {
            type Output = Quad;
            fn $f(self, rhs: Quad) -> Quad {
                Quad(self.0.$m(&rhs.0, PRECISION, RM))
            }
        }
        impl<'a> $tr<&'a Quad> for &'a Quad {
            type Output = Quad;
            fn $f(self, rhs: &Quad) -> Quad {
                Quad(self.0.$m(&rhs.0, PRECISION, RM))
            }
        }
        impl $tr<f64> for Quad {
            type Output = Quad;
            fn $f(self, rhs: f64) -> Quad {
                Quad(self.0.$m(&BigFloat::from_f64(rhs, PRECISION), PRECISION, RM))
            }
        }
    };
}

binop!(Add, add, add);
binop!(Sub, sub, sub);
binop!(Mul, mul, mul);
binop!(Div, div, div);

impl Neg for Quad {
    type Output = Quad;
    fn neg(self) -> Quad {
        Quad(self.0.neg())
    }
}

pub fn norm_sq(xs: &[Quad]) -> Quad {
    xs.iter().fold(Quad::zero(), |acc, x| acc + x * x)
}

/// `(rho, psi)` evaluated from the closed forms at 128 bits and rounded.
pub fn gauge_and_angle_quad(space: &GrushinSpace, p: &Point) -> (f64, f64) {
    let z: Vec<Quad> = p.z().iter().map(|&x| Quad::new(x)).collect();
    let t: Vec<Quad> = p.t().iter().map(|&x| Quad::new(x)).collect();
    let (rho, psi) = gauge_and_angle_q(space.gamma(), &z, &t);
    (rho.to_f64(), psi.to_f64())
}

pub fn gauge_and_angle_q(gamma: f64, z: &[Quad], t: &[Quad]) -> (Quad, Quad) {
    let g1 = gamma + 1.0;
    let z2 = norm_sq(z);
    let t2 = norm_sq(t);
    let s = z2.powf64(g1) + t2 * (g1 * g1);
    if s.is_zero() {
        return (Quad::zero(), Quad::zero());
    }
    let rho = s.powf64(1.0 / (2.0 * g1));
    let psi = z2.powf64(gamma) / rho.powf64(2.0 * gamma);
    (rho, psi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quad_roundtrip_and_pow() {
        let five = Quad::new(5.0);
        let r = five.powf64(0.25);
        let back = &(&r * &r) * &(&r * &r);
        assert_eq!(back.to_f64(), 5.0);
        assert_eq!(r.to_f64(), 5f64.powf(0.25));
        assert!((Quad::new(2.0).ln().to_f64() - std::f64::consts::LN_2).abs() == 0.0);
    }
}
