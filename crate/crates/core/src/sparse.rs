//! Compressed sparse rows and the two Krylov solvers used by the
//! finite-difference lab.

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

/// Row-by-row builder; duplicate columns within a row are summed.
#[derive(Debug, Default)]
pub struct CsrBuilder {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    row: Vec<(usize, f64)>,
}

impl CsrBuilder {
    pub fn new(n: usize) -> Self {
        CsrBuilder { n, row_ptr: vec![0], ..Default::default() }
    }

    pub fn push(&mut self, col: usize, v: f64) {
        self.row.push((col, v));
    }

    pub fn finish_row(&mut self) {
        self.row.sort_by_key(|e| e.0);
        let mut last: Option<usize> = None;
        for &(c, v) in &self.row {
            if last == Some(c) {
                *self.vals.last_mut().expect("previous entry") += v;
            } else {
                self.cols.push(c);
                self.vals.push(v);
                last = Some(c);
            }
        }
        self.row.clear();
        self.row_ptr.push(self.cols.len());
    }

    pub fn build(self) -> Result<Csr> {
        if self.row_ptr.len() != self.n + 1 {
            return Err(Error::param(format!("built {} rows, expected {}", self.row_ptr.len() - 1, self.n)));
        }
        if self.cols.iter().any(|&c| c >= self.n) {
            return Err(Error::param("column index out of range"));
        }
        Ok(Csr { n: self.n, row_ptr: self.row_ptr, cols: self.cols, vals: self.vals })
    }
}

impl Csr {
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            y[i] = s;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| (self.row_ptr[i]..self.row_ptr[i + 1]).find(|&k| self.cols[k] == i).map_or(0.0, |k| self.vals[k]))
            .collect()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `max |a_ij - a_ji|` relative to `max |a_ij|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k];
                scale = scale.max(self.vals[k].abs());
                let t = self.get(j, i);
                worst = worst.max((self.vals[k] - t).abs());
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        row.binary_search(&j).map_or(0.0, |k| self.vals[self.row_ptr[i] + k])
    }

    pub fn residual(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        let ax = self.apply(x);
        b.iter().zip(&ax).map(|(a, c)| a - c).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// Final `|b - A x| / |b|` (absolute when `b = 0`).
    pub residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-10, max_iter: 20_000 }
    }
}

fn rel(r: f64, bn: f64) -> f64 {
    if bn > 0.0 {
        r / bn
    } else {
        r
    }
}

/// Jacobi-preconditioned conjugate gradients for symmetric positive definite
/// systems. A non-positive curvature `p.Ap` reports [`Error::Indefinite`].
pub fn pcg(a: &Csr, b: &[f64], x: &mut [f64], opts: &SolverOptions) -> Result<SolveStats> {
    let n = a.n;
    let diag = a.diagonal();
    if diag.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::Indefinite);
    }
    let bn = norm(b);
    let mut r = a.residual(x, b);
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut res = rel(norm(&r), bn);
    let mut it = 0;
    while res > opts.tol {
        if it >= opts.max_iter {
            return Err(Error::NonConvergence { iterations: it, residual: res });
        }
        a.mul_vec(&p, &mut ap);
        let curv = dot(&p, &ap);
        if !(curv > 0.0) {
            return Err(Error::Indefinite);
        }
        let alpha = rz / curv;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        it += 1;
        res = rel(norm(&r), bn);
    }
    Ok(SolveStats { iterations: it, residual: res })
}

/// Jacobi-preconditioned BiCGSTAB for general nonsingular systems.
pub fn bicgstab(a: &Csr, b: &[f64], x: &mut [f64], opts: &SolverOptions) -> Result<SolveStats> {
    let n = a.n;
    let diag: Vec<f64> = a.diagonal().into_iter().map(|d| if d != 0.0 { d } else { 1.0 }).collect();
    let bn = norm(b);
    let mut r = a.residual(x, b);
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut zs = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut res = rel(norm(&r), bn);
    let mut it = 0;
    while res > opts.tol {
        if it >= opts.max_iter {
            return Err(Error::NonConvergence { iterations: it, residual: res });
        }
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 || omega == 0.0 {
            return Err(Error::NonConvergence { iterations: it, residual: res });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = p[i] / diag[i];
        }
        a.mul_vec(&y, &mut v);
        alpha = rho / dot(&r0, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if rel(norm(&s), bn) <= opts.tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            it += 1;
            res = rel(norm(&a.residual(x, b)), bn);
            break;
        }
        for i in 0..n {
            zs[i] = s[i] / diag[i];
        }
        a.mul_vec(&zs, &mut t);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * y[i] + omega * zs[i];
            r[i] = s[i] - omega * t[i];
        }
        it += 1;
        res = rel(norm(&r), bn);
        if !res.is_finite() {
            return Err(Error::NonFinite("BiCGSTAB residual".into()));
        }
    }
    Ok(SolveStats { iterations: it, residual: res })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize, shift: f64) -> Csr {
        let mut b = CsrBuilder::new(n);
        for i in 0..n {
            if i > 0 {
                b.push(i - 1, -1.0);
            }
            b.push(i, 2.0 + shift);
            if i + 1 < n {
                b.push(i + 1, -1.0);
            }
            b.finish_row();
        }
        b.build().unwrap()
    }

    #[test]
    fn builder_merges_duplicates() {
        let mut b = CsrBuilder::new(2);
        b.push(1, 1.0);
        b.push(0, 2.0);
        b.push(1, 3.0);
        b.finish_row();
        b.push(1, 5.0);
        b.finish_row();
        let a = b.build().unwrap();
        assert_eq!(a.get(0, 1), 4.0);
        assert_eq!(a.nnz(), 3);
        assert!(a.asymmetry() > 0.0);
    }

    #[test]
    fn both_solvers_agree() {
        let a = laplace_1d(200, 0.01);
        let xs: Vec<f64> = (0..200).map(|i| (i as f64 * 0.1).sin()).collect();
        let b = a.apply(&xs);
        let opts = SolverOptions { tol: 1e-12, max_iter: 5000 };
        let mut x1 = vec![0.0; 200];
        pcg(&a, &b, &mut x1, &opts).unwrap();
        let mut x2 = vec![0.0; 200];
        bicgstab(&a, &b, &mut x2, &opts).unwrap();
        for i in 0..200 {
            assert!((x1[i] - xs[i]).abs() < 1e-8);
            assert!((x2[i] - xs[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn indefinite_is_detected() {
        let a = laplace_1d(50, -1.0);
        let b = vec![1.0; 50];
        let mut x = vec![0.0; 50];
        assert_eq!(pcg(&a, &b, &mut x, &SolverOptions::default()), Err(Error::Indefinite));
    }
}
