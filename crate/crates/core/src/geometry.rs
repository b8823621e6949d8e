//! Points, anisotropic dilations, the gauge `rho` and the angle function `psi`.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::linalg::Vector;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrushinSpace {
    m: usize,
    k: usize,
    gamma: f64,
}

impl GrushinSpace {
    pub fn new(m: usize, k: usize, gamma: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::param("m must be at least 1"));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::param(format!("gamma must be positive, got {gamma}")));
        }
        Ok(GrushinSpace { m, k, gamma })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Number of vector fields, `N = m + k`.
    pub fn dim(&self) -> usize {
        self.m + self.k
    }

    /// Homogeneous dimension `Q = m + (gamma + 1) k`.
    pub fn homogeneous_dimension(&self) -> f64 {
        self.m as f64 + (self.gamma + 1.0) * self.k as f64
    }

    pub fn point(&self, z: &[f64], t: &[f64]) -> Result<Point> {
        let p = Point::new(z, t);
        self.check(&p)?;
        Ok(p)
    }

    /// Builds a point from packed coordinates `(z, t)`.
    pub fn point_from_coords(&self, coords: &[f64]) -> Result<Point> {
        if coords.len() != self.dim() {
            return Err(Error::DimensionMismatch(self.m, self.k, coords.len(), 0));
        }
        Ok(Point { coords: coords.iter().copied().collect(), m: self.m })
    }

    pub fn check(&self, p: &Point) -> Result<()> {
        if p.m != self.m || p.coords.len() != self.dim() {
            return Err(Error::DimensionMismatch(self.m, self.k, p.m, p.coords.len() - p.m));
        }
        Ok(())
    }

    pub fn gauge_and_angle(&self, p: &Point) -> Result<GaugeAngle> {
        self.check(p)?;
        Ok(self.gauge_unchecked(p))
    }

    pub(crate) fn gauge_unchecked(&self, p: &Point) -> GaugeAngle {
        let g1 = self.gamma + 1.0;
        let z2 = p.z_norm_sq();
        let t2 = p.t_norm_sq();
        if self.k == 0 {
            let rho = z2.sqrt();
            return GaugeAngle { rho, psi: if rho > 0.0 { 1.0 } else { 0.0 }, at_origin: rho == 0.0 };
        }
        if z2 == 0.0 && t2 == 0.0 {
            return GaugeAngle { rho: 0.0, psi: 0.0, at_origin: true };
        }
        let s = z2.powf(g1) + g1 * g1 * t2;
        let rho = s.powf(1.0 / (2.0 * g1));
        // |z|^{2 gamma} / rho^{2 gamma} = (|z|^{2(gamma+1)} / s)^{gamma/(gamma+1)}
        let psi = if z2 == 0.0 { 0.0 } else { (z2.powf(g1) / s).powf(self.gamma / g1).min(1.0) };
        GaugeAngle { rho, psi, at_origin: false }
    }

    pub fn rho(&self, p: &Point) -> f64 {
        self.gauge_unchecked(p).rho
    }

    pub fn dilate(&self, lambda: f64, p: &Point) -> Result<Point> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::param(format!("dilation factor must be positive, got {lambda}")));
        }
        self.check(p)?;
        let lt = lambda.powf(self.gamma + 1.0);
        let mut q = p.clone();
        for (i, c) in q.coords.iter_mut().enumerate() {
            *c *= if i < self.m { lambda } else { lt };
        }
        Ok(q)
    }

    /// Coefficient of field `X_i` in front of its coordinate derivative:
    /// 1 for `i < m`, `|z|^gamma` otherwise (0-based index).
    pub fn field_weight(&self, i: usize, p: &Point) -> f64 {
        if i < self.m {
            1.0
        } else {
            p.z_norm().powf(self.gamma)
        }
    }

    /// Euclidean coordinates of the generator `Z` at `p`.
    pub fn generator_coefficients(&self, p: &Point) -> Vector {
        let g1 = self.gamma + 1.0;
        p.coords.iter().enumerate().map(|(i, &c)| if i < self.m { c } else { g1 * c }).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    coords: SmallVec<[f64; 8]>,
    m: usize,
}

impl Point {
    pub fn new(z: &[f64], t: &[f64]) -> Self {
        let mut coords: SmallVec<[f64; 8]> = SmallVec::with_capacity(z.len() + t.len());
        coords.extend_from_slice(z);
        coords.extend_from_slice(t);
        Point { coords, m: z.len() }
    }

    pub fn z(&self) -> &[f64] {
        &self.coords[..self.m]
    }

    pub fn t(&self) -> &[f64] {
        &self.coords[self.m..]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    pub fn z_norm_sq(&self) -> f64 {
        self.z().iter().map(|x| x * x).sum()
    }

    pub fn t_norm_sq(&self) -> f64 {
        self.t().iter().map(|x| x * x).sum()
    }

    pub fn z_norm(&self) -> f64 {
        self.z_norm_sq().sqrt()
    }

    /// Copy with coordinate `i` shifted by `h`.
    pub fn shifted(&self, i: usize, h: f64) -> Point {
        let mut q = self.clone();
        q.coords[i] += h;
        q
    }
}

/// Gauge and angle at a point. At the origin `rho = 0`, `psi` is reported
/// as 0 and `at_origin` is set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugeAngle {
    pub rho: f64,
    pub psi: f64,
    pub at_origin: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauge_examples() {
        let s = GrushinSpace::new(1, 1, 1.0).unwrap();
        let g = s.gauge_and_angle(&Point::new(&[1.0], &[0.0])).unwrap();
        assert_eq!((g.rho, g.psi), (1.0, 1.0));
        let g = s.gauge_and_angle(&Point::new(&[0.0], &[1.0])).unwrap();
        assert_relative_eq!(g.rho, 2f64.sqrt(), max_relative = 1e-15);
        assert_eq!(g.psi, 0.0);
        let g = s.gauge_and_angle(&Point::new(&[1.0], &[1.0])).unwrap();
        assert_relative_eq!(g.rho, 1.495349, epsilon = 1e-6);
        assert_relative_eq!(g.psi, 0.4472136, epsilon = 1e-7);
        let o = s.gauge_and_angle(&Point::new(&[0.0], &[0.0])).unwrap();
        assert!(o.at_origin && o.rho == 0.0 && o.psi == 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let s = GrushinSpace::new(2, 1, 1.0).unwrap();
        assert!(matches!(
            s.gauge_and_angle(&Point::new(&[1.0], &[1.0])),
            Err(Error::DimensionMismatch(..))
        ));
        assert!(GrushinSpace::new(0, 1, 1.0).is_err());
        assert!(GrushinSpace::new(1, 1, 0.0).is_err());
    }

    #[test]
    fn dilation_examples() {
        let s = GrushinSpace::new(1, 1, 1.0).unwrap();
        let p = Point::new(&[1.0], &[1.0]);
        assert_eq!(s.dilate(1.0, &p).unwrap(), p);
        let q = s.dilate(2.0, &p).unwrap();
        assert_eq!(q.coords(), &[2.0, 4.0]);
        assert_relative_eq!(s.rho(&q), 2.0 * 5f64.powf(0.25), max_relative = 1e-15);
        let s2 = GrushinSpace::new(2, 1, 2.0).unwrap();
        let q = s2.dilate(0.5, &Point::new(&[1.0, 0.0], &[3.0])).unwrap();
        assert_eq!(q.coords(), &[0.5, 0.0, 0.375]);
        assert!(s.dilate(0.0, &p).is_err());
    }

    #[test]
    fn euclidean_reduction() {
        let s = GrushinSpace::new(3, 0, 1.5).unwrap();
        let p = Point::new(&[1.0, 2.0, 2.0], &[]);
        let g = s.gauge_and_angle(&p).unwrap();
        assert_eq!((g.rho, g.psi), (3.0, 1.0));
        assert_eq!(s.homogeneous_dimension(), 3.0);
    }
}
