//! Sample clouds: a Halton cloud in the annulus `rho_min <= rho <= rho_max`,
//! log-uniform in both `rho` and `psi`, and seeded uniform point sets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GrushinSpace, Point};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    pub count: usize,
    #[serde(default = "default_rho_min")]
    pub rho_min: f64,
    #[serde(default = "default_rho_max")]
    pub rho_max: f64,
    #[serde(default = "default_psi_min")]
    pub psi_min: f64,
    /// Leading Halton indices skipped; also acts as the seed.
    #[serde(default)]
    pub offset: u64,
}

fn default_rho_min() -> f64 {
    0.01
}
fn default_rho_max() -> f64 {
    1.0
}
fn default_psi_min() -> f64 {
    1e-4
}

impl SampleSpec {
    pub fn new(count: usize) -> Self {
        SampleSpec { count, rho_min: 0.01, rho_max: 1.0, psi_min: 1e-4, offset: 0 }
    }

    pub fn with_count(&self, count: usize) -> Self {
        SampleSpec { count, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho_min > 0.0 && self.rho_min < self.rho_max) {
            return Err(Error::param("sample radii must satisfy 0 < rho_min < rho_max"));
        }
        if !(self.psi_min > 0.0 && self.psi_min <= 1.0) {
            return Err(Error::param("psi_min must lie in (0, 1]"));
        }
        Ok(())
    }
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Radical inverse of `i` in base `b`.
pub fn radical_inverse(mut i: u64, b: u64) -> f64 {
    let inv = 1.0 / b as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % b) as f64;
        i /= b;
        f *= inv;
    }
    r
}

fn gaussian_pairs(u: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    for pair in u.chunks(2) {
        let u1 = pair[0].max(1e-300);
        let u2 = pair[1];
        let r = (-2.0 * u1.ln()).sqrt();
        let th = 2.0 * std::f64::consts::PI * u2;
        out.push(r * th.cos());
        out.push(r * th.sin());
    }
    out.truncate(n);
    out
}

fn unit_direction(u: &[f64], n: usize) -> Vec<f64> {
    let mut g = gaussian_pairs(u, n);
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        g.iter_mut().enumerate().for_each(|(i, x)| *x = if i == 0 { 1.0 } else { 0.0 });
    } else {
        g.iter_mut().for_each(|x| *x /= norm);
    }
    g
}

/// Point with prescribed gauge and angle, directions from `u` (length
/// `2 ceil(m/2) + 2 ceil(k/2)`).
pub fn point_from_polar(space: &GrushinSpace, rho: f64, psi: f64, u: &[f64]) -> Point {
    let (m, k, g) = (space.m(), space.k(), space.gamma());
    let g1 = g + 1.0;
    let zn = if k == 0 { rho } else { rho * psi.powf(1.0 / (2.0 * g)) };
    let tn = ((rho.powf(2.0 * g1) - zn.powf(2.0 * g1)).max(0.0)).sqrt() / g1;
    let mz = 2 * m.div_ceil(2);
    let dz = unit_direction(&u[..mz], m);
    let dt = if k > 0 { unit_direction(&u[mz..], k) } else { vec![] };
    let z: Vec<f64> = dz.iter().map(|d| d * zn).collect();
    let t: Vec<f64> = dt.iter().map(|d| d * tn).collect();
    Point::new(&z, &t)
}

pub fn halton_cloud(space: &GrushinSpace, spec: &SampleSpec) -> Result<Vec<Point>> {
    spec.validate()?;
    let dims = 2 + 2 * space.m().div_ceil(2) + 2 * space.k().div_ceil(2);
    if dims > PRIMES.len() {
        return Err(Error::param("dimension too large for the Halton sequence"));
    }
    let (lr0, lr1) = (spec.rho_min.ln(), spec.rho_max.ln());
    let lp0 = spec.psi_min.ln();
    Ok((0..spec.count as u64)
        .map(|i| {
            let idx = i + 1 + spec.offset;
            let u: Vec<f64> = (0..dims).map(|d| radical_inverse(idx, PRIMES[d])).collect();
            let rho = (lr0 + (lr1 - lr0) * u[0]).exp();
            let psi = if space.k() == 0 { 1.0 } else { (lp0 * (1.0 - u[1])).exp() };
            point_from_polar(space, rho, psi, &u[2..])
        })
        .collect())
}

/// `count` points on the gauge sphere of radius `rho`, angles spread
/// log-uniformly in `psi in [1e-4, 1]`.
pub fn sphere_points(space: &GrushinSpace, rho: f64, count: usize) -> Vec<Point> {
    let dims = 1 + 2 * space.m().div_ceil(2) + 2 * space.k().div_ceil(2);
    (0..count as u64)
        .map(|i| {
            let u: Vec<f64> = (0..dims).map(|d| radical_inverse(i + 1, PRIMES[d % PRIMES.len()])).collect();
            let psi = if space.k() == 0 { 1.0 } else { (1e-4f64.ln() * (1.0 - u[0])).exp() };
            point_from_polar(space, rho, psi, &u[1..])
        })
        .collect()
}

/// Uniform points in the box `|x_i| <= half_width`, filtered by `accept`.
pub fn random_points(
    space: &GrushinSpace,
    count: usize,
    seed: u64,
    half_width: f64,
    accept: impl Fn(&Point) -> bool,
) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut tries = 0usize;
    while out.len() < count && tries < count * 10_000 {
        tries += 1;
        let c: Vec<f64> = (0..space.dim()).map(|_| rng.gen_range(-half_width..half_width)).collect();
        let p = Point::new(&c[..space.m()], &c[space.m()..]);
        if accept(&p) {
            out.push(p);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cloud_respects_polar_coordinates() {
        let s = GrushinSpace::new(2, 3, 1.5).unwrap();
        let pts = halton_cloud(&s, &SampleSpec::new(500)).unwrap();
        for p in &pts {
            let g = s.gauge_and_angle(p).unwrap();
            assert!(g.rho >= 0.01 * (1.0 - 1e-12) && g.rho <= 1.0 + 1e-12);
            assert!(g.psi >= 1e-4 * (1.0 - 1e-9) && g.psi <= 1.0);
        }
    }

    #[test]
    fn cloud_prefix_property() {
        let s = GrushinSpace::new(1, 1, 1.0).unwrap();
        let a = halton_cloud(&s, &SampleSpec::new(100)).unwrap();
        let b = halton_cloud(&s, &SampleSpec::new(200)).unwrap();
        assert_eq!(&b[..100], &a[..]);
    }
}
