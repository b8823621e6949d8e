//! Second-order X-jets: value, X-gradient and the noncommuting X-Hessian
//! `hess[(i, j)] = X_i(X_j u)`.

use crate::geometry::{GrushinSpace, Point};
use crate::linalg::{zeros, Matrix, Vector};

#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: Vector,
    pub hess: Matrix,
}

impl Jet {
    pub fn constant(n: usize, c: f64) -> Self {
        Jet { value: c, grad: zeros(n), hess: Matrix::zeros(n) }
    }

    pub fn dim(&self) -> usize {
        self.grad.len()
    }

    /// Jet of the coordinate function `x_c` (packed index, `z` first).
    pub fn coordinate(space: &GrushinSpace, p: &Point, c: usize) -> Self {
        let n = space.dim();
        let m = space.m();
        let mut j = Jet::constant(n, p.coords()[c]);
        j.grad[c] = space.field_weight(c, p);
        if c >= m {
            // X_i(|z|^gamma) for i < m
            let zn = p.z_norm();
            let g = space.gamma();
            for i in 0..m {
                j.hess[(i, c)] = g * zn.powf(g - 2.0) * p.z()[i];
            }
        }
        j
    }

    pub fn add(&self, o: &Jet) -> Jet {
        Jet {
            value: self.value + o.value,
            grad: self.grad.iter().zip(&o.grad).map(|(a, b)| a + b).collect(),
            hess: self.hess.add(&o.hess),
        }
    }

    pub fn sub(&self, o: &Jet) -> Jet {
        self.add(&o.scale(-1.0))
    }

    pub fn scale(&self, c: f64) -> Jet {
        Jet {
            value: self.value * c,
            grad: self.grad.iter().map(|a| a * c).collect(),
            hess: self.hess.scale(c),
        }
    }

    pub fn add_const(&self, c: f64) -> Jet {
        let mut j = self.clone();
        j.value += c;
        j
    }

    pub fn mul(&self, o: &Jet) -> Jet {
        let n = self.dim();
        let (f, g) = (self.value, o.value);
        let grad = (0..n).map(|i| f * o.grad[i] + g * self.grad[i]).collect();
        let hess = Matrix::from_fn(n, |i, j| {
            self.grad[i] * o.grad[j]
                + o.grad[i] * self.grad[j]
                + f * o.hess[(i, j)]
                + g * self.hess[(i, j)]
        });
        Jet { value: f * g, grad, hess }
    }

    /// `phi(u)` given `phi(u), phi'(u), phi''(u)` at `u = self.value`.
    pub fn compose(&self, f0: f64, f1: f64, f2: f64) -> Jet {
        let n = self.dim();
        let grad = self.grad.iter().map(|g| f1 * g).collect();
        let hess = Matrix::from_fn(n, |i, j| f2 * self.grad[i] * self.grad[j] + f1 * self.hess[(i, j)]);
        Jet { value: f0, grad, hess }
    }

    pub fn recip(&self) -> Jet {
        let v = self.value;
        self.compose(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v))
    }

    pub fn powf(&self, e: f64) -> Jet {
        let v = self.value;
        self.compose(v.powf(e), e * v.powf(e - 1.0), e * (e - 1.0) * v.powf(e - 2.0))
    }

    pub fn exp(&self) -> Jet {
        let e = self.value.exp();
        self.compose(e, e, e)
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.value.sin_cos();
        self.compose(s, c, -s)
    }

    pub fn ln(&self) -> Jet {
        let v = self.value;
        self.compose(v.ln(), 1.0 / v, -1.0 / (v * v))
    }

    pub fn grad_norm_sq(&self) -> f64 {
        self.grad.iter().map(|x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.grad.iter().all(|x| x.is_finite()) && self.hess.is_finite()
    }
}

/// `|z|^2` as a jet.
pub fn z_norm_sq_jet(space: &GrushinSpace, p: &Point) -> Jet {
    let mut acc = Jet::constant(space.dim(), 0.0);
    for i in 0..space.m() {
        let c = Jet::coordinate(space, p, i);
        acc = acc.add(&c.mul(&c));
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinate_commutator() {
        // [X_1, X_2] t = X_1 |z| = sign(z) for gamma = 1
        let s = GrushinSpace::new(1, 1, 1.0).unwrap();
        let p = Point::new(&[-0.7], &[0.3]);
        let j = Jet::coordinate(&s, &p, 1);
        assert_eq!(j.grad[1], 0.7);
        assert_eq!(j.hess[(0, 1)], -1.0);
        assert_eq!(j.hess[(1, 0)], 0.0);
    }

    #[test]
    fn product_and_reciprocal() {
        let s = GrushinSpace::new(1, 1, 1.0).unwrap();
        let p = Point::new(&[0.5], &[0.3]);
        let x = Jet::coordinate(&s, &p, 0).add_const(2.0);
        let one = x.mul(&x.recip());
        assert!((one.value - 1.0).abs() < 1e-15);
        assert!(one.grad.iter().all(|g| g.abs() < 1e-15));
        assert!(one.hess.max_abs() < 1e-14);
    }
}
