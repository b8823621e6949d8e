//! Small dense vectors and matrices sized for `N = m + k` up to a few dozen.

use smallvec::SmallVec;
use std::ops::{Index, IndexMut};

pub type Vector = SmallVec<[f64; 8]>;

pub fn zeros(n: usize) -> Vector {
    smallvec::smallvec![0.0; n]
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Row-major square matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    n: usize,
    data: SmallVec<[f64; 64]>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix { n, data: smallvec::smallvec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self[(j, i)])
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vector {
        (0..self.n).map(|i| dot(self.row(i), v)).collect()
    }

    /// `<A u, v>`.
    pub fn quad_form(&self, u: &[f64], v: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                s += self[(i, j)] * u[j] * v[i];
            }
        }
        s
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut m = self.clone();
        m.data.iter_mut().for_each(|x| *x *= c);
        m
    }

    pub fn add(&self, other: &Matrix) -> Self {
        let mut m = self.clone();
        m.data.iter_mut().zip(&other.data).for_each(|(x, y)| *x += y);
        m
    }

    pub fn sub(&self, other: &Matrix) -> Self {
        let mut m = self.clone();
        m.data.iter_mut().zip(&other.data).for_each(|(x, y)| *x -= y);
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, x| a.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn sym_eigenvalues(&self) -> Vec<f64> {
        let n = self.n;
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]));
        let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Operator 2-norm (largest singular value).
    pub fn spectral_norm(&self) -> f64 {
        let n = self.n;
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| self[(i, j)]);
        m.singular_values().iter().fold(0.0, |a, &x| a.max(x))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

/// Neumaier-compensated sum in the given order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for x in it {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_norm_of_diagonal() {
        let mut m = Matrix::identity(3);
        m[(1, 1)] = -4.0;
        assert!((m.spectral_norm() - 4.0).abs() < 1e-12);
        assert_eq!(m.sym_eigenvalues()[0], -4.0);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v), 2.0);
    }
}
