//! Composite tensor-product quadrature over gauge balls and annuli with
//! the singular weights used by the Carleman estimates.
//!
//! The box is dilation matched: `|z_i| <= r_out`, `|t_j| <= r_out^{g+1}/(g+1)`,
//! which is exactly the bounding box of the gauge ball. Weights are handled
//! in log space against a common shift, so `e^{2 alpha rho^eps}` with large
//! `alpha` never overflows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::geometry::{GrushinSpace, Point};
use crate::par;

/// Cells with `|z|` below this are evaluated with `|z|` clamped to it.
pub const Z_CLAMP: f64 = 1e-6;
/// Fraction of non-finite samples tolerated before the integral is rejected.
pub const NONFINITE_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnulusDomain {
    pub r_in: f64,
    pub r_out: f64,
}

impl AnnulusDomain {
    pub fn new(r_in: f64, r_out: f64) -> Result<Self> {
        let d = AnnulusDomain { r_in, r_out };
        d.validate()?;
        Ok(d)
    }

    pub fn ball(r: f64) -> Result<Self> {
        Self::new(0.0, r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_in >= 0.0 && self.r_out > self.r_in && self.r_out.is_finite()) {
            return Err(Error::EmptyDomain(format!("annulus [{}, {}]", self.r_in, self.r_out)));
        }
        Ok(())
    }

    pub fn contains_rho(&self, rho: f64) -> bool {
        rho >= self.r_in && rho <= self.r_out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Midpoint,
    /// Two-point Gauss-Legendre per axis.
    Gauss,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureGrid {
    /// Cells per z axis.
    pub z_cells: usize,
    /// Cells per t axis relative to `z_cells`.
    pub t_ratio: f64,
    /// Extra subdivision per axis of cells with `min |z| < char_band * r_out`.
    pub char_refine: usize,
    pub char_band: f64,
    /// Extra subdivision per axis of cells crossing the inner or outer gauge sphere.
    pub boundary_refine: usize,
    pub rule: Rule,
}

impl Default for QuadratureGrid {
    fn default() -> Self {
        QuadratureGrid { z_cells: 64, t_ratio: 1.0, char_refine: 2, char_band: 0.05, boundary_refine: 4, rule: Rule::Midpoint }
    }
}

impl QuadratureGrid {
    pub fn with_cells(z_cells: usize) -> Self {
        QuadratureGrid { z_cells, ..Default::default() }
    }

    pub fn t_cells(&self) -> usize {
        ((self.z_cells as f64 * self.t_ratio).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.z_cells < 2 || self.t_ratio <= 0.0 || self.char_refine < 1 || self.boundary_refine < 1 || !(self.char_band >= 0.0) {
            return Err(Error::param(format!("invalid quadrature grid {self:?}")));
        }
        Ok(())
    }

    /// Same grid with half the cells per axis (used for the error estimate).
    pub fn coarsened(&self) -> Self {
        QuadratureGrid { z_cells: (self.z_cells / 2).max(2), ..*self }
    }

    pub fn refined(&self) -> Self {
        QuadratureGrid { z_cells: self.z_cells * 2, ..*self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RadialWeight {
    /// `rho^a`
    Power { a: f64 },
    /// `rho^a e^{2 alpha rho^eps}`
    PowerExp { a: f64, alpha: f64, eps: f64 },
    /// `rho^a e^{beta (log rho)^2}`
    LogSquared { a: f64, beta: f64 },
}

impl RadialWeight {
    pub fn ln_weight(&self, rho: f64) -> f64 {
        let l = rho.ln();
        match *self {
            RadialWeight::Power { a } => a * l,
            RadialWeight::PowerExp { a, alpha, eps } => a * l + 2.0 * alpha * rho.powf(eps),
            RadialWeight::LogSquared { a, beta } => a * l + beta * l * l,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let RadialWeight::PowerExp { eps, .. } = self {
            if !(*eps > 0.0 && *eps < 1.0) {
                return Err(Error::param(format!("eps = {eps} outside (0, 1)")));
            }
        }
        Ok(())
    }

    /// Largest log weight over `[r_in, r_out]` (sampled plus endpoints).
    pub fn max_ln(&self, r_in: f64, r_out: f64) -> f64 {
        let lo = r_in.max(r_out * 1e-12);
        let (a, b) = (lo.ln(), r_out.ln());
        (0..=512).map(|i| self.ln_weight((a + (b - a) * i as f64 / 512.0).exp())).fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleFactor {
    #[default]
    None,
    Psi,
    /// Requires `mu` from the caller; see [`integrate_with_mu`].
    Mu,
    InverseMu,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedIntegral {
    pub radial: RadialWeight,
    #[serde(default)]
    pub factor: AngleFactor,
}

impl WeightedIntegral {
    pub fn unit() -> Self {
        WeightedIntegral { radial: RadialWeight::Power { a: 0.0 }, factor: AngleFactor::None }
    }
}

/// Integral value `mantissa * e^{ln_scale}` with an absolute error estimate
/// on the mantissa.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaled {
    pub mantissa: f64,
    pub error: f64,
    pub ln_scale: f64,
}

impl Scaled {
    pub fn value(&self) -> f64 {
        self.mantissa * self.ln_scale.exp()
    }

    pub fn error_value(&self) -> f64 {
        self.error * self.ln_scale.exp()
    }

    /// `ln |value|`
    pub fn ln_abs(&self) -> f64 {
        self.mantissa.abs().ln() + self.ln_scale
    }

    pub fn relative_error(&self) -> f64 {
        if self.mantissa == 0.0 {
            if self.error == 0.0 { 0.0 } else { f64::INFINITY }
        } else {
            self.error / self.mantissa.abs()
        }
    }

    /// `self / other`, safe for widely separated scales.
    pub fn ratio(&self, other: &Scaled) -> f64 {
        (self.mantissa / other.mantissa) * (self.ln_scale - other.ln_scale).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadOutcome {
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    pub cells: usize,
    pub evaluations: usize,
}

/// Terms integrated at a single resolution.
#[derive(Clone, Debug)]
struct Pass {
    sums: Vec<f64>,
    cells: usize,
    evaluations: usize,
    nonfinite: usize,
}

fn gauss_nodes(rule: Rule) -> &'static [(f64, f64)] {
    const MID: [(f64, f64); 1] = [(0.5, 1.0)];
    const G2: [(f64, f64); 2] = [(0.211_324_865_405_187_1, 0.5), (0.788_675_134_594_812_9, 0.5)];
    match rule {
        Rule::Midpoint => &MID,
        Rule::Gauss => &G2,
    }
}

struct Layout {
    n: usize,
    m: usize,
    cells: Vec<usize>,
    lo: Vec<f64>,
    h: Vec<f64>,
    total: usize,
}

impl Layout {
    fn new(space: &GrushinSpace, domain: &AnnulusDomain, grid: &QuadratureGrid) -> Self {
        let (m, n) = (space.m(), space.dim());
        let g = space.gamma();
        let zr = domain.r_out;
        let tr = domain.r_out.powf(g + 1.0) / (g + 1.0);
        let mut cells = vec![grid.z_cells; n];
        for c in cells.iter_mut().skip(m) {
            *c = grid.t_cells();
        }
        let lo: Vec<f64> = (0..n).map(|i| if i < m { -zr } else { -tr }).collect();
        let h: Vec<f64> = (0..n).map(|i| -2.0 * lo[i] / cells[i] as f64).collect();
        let total = cells.iter().product();
        Layout { n, m, cells, lo, h, total }
    }

    fn cell_box(&self, mut idx: usize, lo: &mut [f64], hi: &mut [f64]) {
        for a in 0..self.n {
            let i = idx % self.cells[a];
            idx /= self.cells[a];
            lo[a] = self.lo[a] + i as f64 * self.h[a];
            hi[a] = lo[a] + self.h[a];
        }
    }
}

fn interval_abs_range(lo: f64, hi: f64) -> (f64, f64) {
    let mn = if lo <= 0.0 && hi >= 0.0 { 0.0 } else { lo.abs().min(hi.abs()) };
    (mn, lo.abs().max(hi.abs()))
}

/// Exact min and max of `rho` and min of `|z|` over an axis-aligned box.
pub fn box_ranges(space: &GrushinSpace, m: usize, lo: &[f64], hi: &[f64]) -> (f64, f64, f64) {
    let (mut z2min, mut z2max, mut t2min, mut t2max) = (0.0, 0.0, 0.0, 0.0);
    for a in 0..lo.len() {
        let (mn, mx) = interval_abs_range(lo[a], hi[a]);
        if a < m {
            z2min += mn * mn;
            z2max += mx * mx;
        } else {
            t2min += mn * mn;
            t2max += mx * mx;
        }
    }
    let g = space.gamma();
    let rho = |z2: f64, t2: f64| (z2.powf(g + 1.0) + (g + 1.0) * (g + 1.0) * t2).powf(0.5 / (g + 1.0));
    (rho(z2min, t2min), rho(z2max, t2max), z2min.sqrt())
}

fn clamp_z(m: usize, p: &mut Point) {
    let zn = p.z_norm();
    let c = p.coords_mut();
    if zn == 0.0 {
        c[0] = Z_CLAMP;
    } else if zn < Z_CLAMP {
        let s = Z_CLAMP / zn;
        for x in c[..m].iter_mut() {
            *x *= s;
        }
    }
}

fn run_pass<F>(space: &GrushinSpace, domain: &AnnulusDomain, grid: &QuadratureGrid, n_out: usize, f: &F) -> Pass
where
    F: Fn(&Point, f64, &mut [f64]) -> bool + Sync + Send,
{
    let lay = Layout::new(space, domain, grid);
    let nodes = gauss_nodes(grid.rule);
    let nq = nodes.len();
    // out layout: n_out sums, cells used, evaluations, non-finite count
    let sums = par::chunked_sum(lay.total, n_out + 3, |ci, out| {
        let n = lay.n;
        let mut lo = vec![0.0; n];
        let mut hi = vec![0.0; n];
        lay.cell_box(ci, &mut lo, &mut hi);
        let (rmin, rmax, zmin) = box_ranges(space, lay.m, &lo, &hi);
        if rmax < domain.r_in || rmin > domain.r_out {
            return;
        }
        let partial = rmin < domain.r_in || rmax > domain.r_out;
        let mut sub = 1;
        if partial {
            sub *= grid.boundary_refine;
        }
        if zmin < grid.char_band * domain.r_out {
            sub *= grid.char_refine;
        }
        let vol_cell: f64 = lay.h.iter().product();
        let sub_vol = vol_cell / (sub as f64).powi(n as i32);
        let per_axis = sub * nq;
        let total_pts = per_axis.pow(n as u32);
        let mut buf = vec![0.0; n_out];
        let mut coords = vec![0.0; n];
        let mut evals = 0usize;
        let mut bad = 0usize;
        for mut k in 0..total_pts {
            let mut w = sub_vol;
            for a in 0..n {
                let r = k % per_axis;
                k /= per_axis;
                let (s, q) = (r / nq, r % nq);
                let (x, wq) = nodes[q];
                coords[a] = lo[a] + (s as f64 + x) * (hi[a] - lo[a]) / sub as f64;
                w *= wq;
            }
            let mut p = Point::new(&coords[..lay.m], &coords[lay.m..]);
            let rho = space.gauge_unchecked(&p).rho;
            if partial && !domain.contains_rho(rho) {
                continue;
            }
            clamp_z(lay.m, &mut p);
            buf.iter_mut().for_each(|b| *b = 0.0);
            evals += 1;
            if !f(&p, rho, &mut buf) || buf.iter().any(|b| !b.is_finite()) {
                bad += 1;
                continue;
            }
            for (o, b) in out.iter_mut().zip(&buf) {
                *o += w * b;
            }
        }
        out[n_out] = 1.0;
        out[n_out + 1] = evals as f64;
        out[n_out + 2] = bad as f64;
    });
    Pass {
        sums: sums[..n_out].to_vec(),
        cells: sums[n_out] as usize,
        evaluations: sums[n_out + 1] as usize,
        nonfinite: sums[n_out + 2] as usize,
    }
}

/// Integrates the vector integrand `f(p, rho, out)` against `dz dt` over the
/// annulus. `f` returns `false` to flag a sample it could not evaluate.
/// The error estimate is the change against the grid with half the cells
/// per axis.
pub fn integrate_terms<F>(space: &GrushinSpace, domain: &AnnulusDomain, grid: &QuadratureGrid, n_out: usize, f: F) -> Result<QuadOutcome>
where
    F: Fn(&Point, f64, &mut [f64]) -> bool + Sync + Send,
{
    domain.validate()?;
    grid.validate()?;
    let fine = run_pass(space, domain, grid, n_out, &f);
    let coarse = run_pass(space, domain, &grid.coarsened(), n_out, &f);
    for pass in [&fine, &coarse] {
        if pass.evaluations == 0 {
            return Err(Error::EmptyDomain("no quadrature node inside the annulus".into()));
        }
        if pass.nonfinite as f64 > NONFINITE_TOLERANCE * pass.evaluations as f64 {
            return Err(Error::NonFinite(format!("{} of {} integrand samples", pass.nonfinite, pass.evaluations)));
        }
    }
    let errors = fine.sums.iter().zip(&coarse.sums).map(|(a, b)| (a - b).abs()).collect();
    Ok(QuadOutcome { values: fine.sums, errors, cells: fine.cells, evaluations: fine.evaluations })
}

/// Gauss-Legendre nodes and weights mapped to `[0, 1]` (Golub-Welsch).
pub fn gauss_legendre(order: usize) -> Vec<(f64, f64)> {
    let n = order.max(1);
    let jac = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            let k = i.max(j) as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = jac.symmetric_eigen();
    let mut out: Vec<(f64, f64)> =
        (0..n).map(|i| (0.5 * (eig.eigenvalues[i] + 1.0), eig.eigenvectors[(0, i)].powi(2))).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Dilation-polar rule: `int g = c_Q int r^{Q-1} int_{1/2 <= rho(q) <= 1} g(delta_r omega(q)) dq dr`
/// with `omega(q) = delta_{1/rho(q)} q` and `c_Q = Q / (1 - 2^{-Q})`. The
/// radial integral uses composite Gauss-Legendre panels, so weights that are
/// sharply peaked in `rho` are resolved without refining the angular cells.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolarGrid {
    pub angular: QuadratureGrid,
    pub radial_panels: usize,
    pub radial_order: usize,
}

impl Default for PolarGrid {
    fn default() -> Self {
        PolarGrid {
            angular: QuadratureGrid { z_cells: 32, char_refine: 1, ..Default::default() },
            radial_panels: 64,
            radial_order: 6,
        }
    }
}

impl PolarGrid {
    pub fn coarsened(&self) -> Self {
        PolarGrid { angular: self.angular.coarsened(), radial_panels: (self.radial_panels / 2).max(1), ..*self }
    }

    pub fn refined(&self) -> Self {
        PolarGrid { angular: self.angular.refined(), radial_panels: self.radial_panels * 2, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        self.angular.validate()?;
        if self.radial_panels == 0 || self.radial_order == 0 || self.radial_order > 32 {
            return Err(Error::param(format!("invalid radial rule {} x {}", self.radial_panels, self.radial_order)));
        }
        Ok(())
    }
}

fn run_polar_pass<F>(space: &GrushinSpace, domain: &AnnulusDomain, grid: &PolarGrid, n_out: usize, f: &F) -> Pass
where
    F: Fn(&Point, f64, &mut [f64]) -> bool + Sync + Send,
{
    let shell = AnnulusDomain { r_in: 0.5, r_out: 1.0 };
    let q_dim = space.homogeneous_dimension();
    let c_q = q_dim / (1.0 - 0.5f64.powf(q_dim));
    let g1 = space.gamma() + 1.0;
    let gl = gauss_legendre(grid.radial_order);
    let width = (domain.r_out - domain.r_in) / grid.radial_panels as f64;
    let radial: Vec<(f64, f64)> = (0..grid.radial_panels)
        .flat_map(|k| gl.iter().map(move |&(x, w)| (domain.r_in + (k as f64 + x) * width, w * width)))
        .collect();
    let m = space.m();
    let mut angular_nodes = Vec::new();
    let ang = &grid.angular;
    let lay = Layout::new(space, &shell, ang);
    let nodes = gauss_nodes(ang.rule);
    let nq = nodes.len();
    // angular nodes are cheap; collect them sequentially for a fixed order
    for ci in 0..lay.total {
        let n = lay.n;
        let mut lo = vec![0.0; n];
        let mut hi = vec![0.0; n];
        lay.cell_box(ci, &mut lo, &mut hi);
        let (rmin, rmax, zmin) = box_ranges(space, m, &lo, &hi);
        if rmax < shell.r_in || rmin > shell.r_out {
            continue;
        }
        let partial = rmin < shell.r_in || rmax > shell.r_out;
        let mut sub = 1;
        if partial {
            sub *= ang.boundary_refine;
        }
        if zmin < ang.char_band {
            sub *= ang.char_refine;
        }
        let sub_vol = lay.h.iter().product::<f64>() / (sub as f64).powi(n as i32);
        let per_axis = sub * nq;
        for mut k in 0..per_axis.pow(n as u32) {
            let mut w = sub_vol;
            let mut c = vec![0.0; n];
            for a in 0..n {
                let r = k % per_axis;
                k /= per_axis;
                let (s, qi) = (r / nq, r % nq);
                let (x, wq) = nodes[qi];
                c[a] = lo[a] + (s as f64 + x) * (hi[a] - lo[a]) / sub as f64;
                w *= wq;
            }
            let q = Point::new(&c[..m], &c[m..]);
            let rq = space.gauge_unchecked(&q).rho;
            if !shell.contains_rho(rq) {
                continue;
            }
            // omega = delta_{1/rho(q)} q
            let om: Vec<f64> = c.iter().enumerate().map(|(a, x)| if a < m { x / rq } else { x / rq.powf(g1) }).collect();
            angular_nodes.push((om, w * c_q));
        }
    }
    let sums = par::chunked_sum(angular_nodes.len(), n_out + 2, |i, out| {
        let (om, wq) = &angular_nodes[i];
        let mut buf = vec![0.0; n_out];
        let mut c = om.clone();
        let (mut evals, mut bad) = (0usize, 0usize);
        for &(r, wr) in &radial {
            let rg = r.powf(g1);
            for (a, x) in c.iter_mut().enumerate() {
                *x = if a < m { om[a] * r } else { om[a] * rg };
            }
            let mut p = Point::new(&c[..m], &c[m..]);
            clamp_z(m, &mut p);
            buf.iter_mut().for_each(|b| *b = 0.0);
            evals += 1;
            if !f(&p, r, &mut buf) || buf.iter().any(|b| !b.is_finite()) {
                bad += 1;
                continue;
            }
            let w = wq * wr * r.powf(q_dim - 1.0);
            for (o, b) in out.iter_mut().zip(&buf) {
                *o += w * b;
            }
        }
        out[n_out] = evals as f64;
        out[n_out + 1] = bad as f64;
    });
    Pass {
        sums: sums[..n_out].to_vec(),
        cells: angular_nodes.len(),
        evaluations: sums[n_out] as usize,
        nonfinite: sums[n_out + 1] as usize,
    }
}

/// Polar counterpart of [`integrate_terms`]; `cells` reports angular nodes.
pub fn integrate_polar_terms<F>(space: &GrushinSpace, domain: &AnnulusDomain, grid: &PolarGrid, n_out: usize, f: F) -> Result<QuadOutcome>
where
    F: Fn(&Point, f64, &mut [f64]) -> bool + Sync + Send,
{
    domain.validate()?;
    grid.validate()?;
    let fine = run_polar_pass(space, domain, grid, n_out, &f);
    let coarse = run_polar_pass(space, domain, &grid.coarsened(), n_out, &f);
    for pass in [&fine, &coarse] {
        if pass.evaluations == 0 {
            return Err(Error::EmptyDomain("no polar quadrature node".into()));
        }
        if pass.nonfinite as f64 > NONFINITE_TOLERANCE * pass.evaluations as f64 {
            return Err(Error::NonFinite(format!("{} of {} integrand samples", pass.nonfinite, pass.evaluations)));
        }
    }
    let errors = fine.sums.iter().zip(&coarse.sums).map(|(a, b)| (a - b).abs()).collect();
    Ok(QuadOutcome { values: fine.sums, errors, cells: fine.cells, evaluations: fine.evaluations })
}

/// Composite Gauss-Legendre rule on an axis-aligned box, for integrands
/// whose support is a box away from the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxGrid {
    pub panels: usize,
    pub order: usize,
}

impl Default for BoxGrid {
    fn default() -> Self {
        BoxGrid { panels: 96, order: 6 }
    }
}

impl BoxGrid {
    pub fn coarsened(&self) -> Self {
        BoxGrid { panels: (self.panels / 2).max(1), ..*self }
    }

    pub fn refined(&self) -> Self {
        BoxGrid { panels: self.panels * 2, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.panels == 0 || self.order == 0 {
            return Err(Error::param("box grid needs at least one panel and one node"));
        }
        Ok(())
    }
}

fn run_box_pass<F>(space: &GrushinSpace, lo: &[f64], hi: &[f64], grid: &BoxGrid, n_out: usize, f: &F) -> Pass
where
    F: Fn(&Point, f64, &mut [f64]) -> bool + Sync + Send,
{
    let n = space.dim();
    let m = space.m();
    let gl = gauss_legendre(grid.order);
    let axes: Vec<Vec<(f64, f64)>> = (0..n)
        .map(|a| {
            let h = (hi[a] - lo[a]) / grid.panels as f64;
            (0..grid.panels).flat_map(|k| gl.iter().map(move |&(x, w)| (lo[a] + (k as f64 + x) * h, w * h))).collect()
        })
        .collect();
    let per = axes[0].len();
    let total = per.pow(n as u32);
    let sums = par::chunked_sum(total, n_out + 2, |i, out| {
        let mut c = vec![0.0; n];
        let mut w = 1.0;
        let mut k = i;
        for a in 0..n {
            let (x, wx) = axes[a][k % per];
            k /= per;
            c[a] = x;
            w *= wx;
        }
        let mut p = Point::new(&c[..m], &c[m..]);
        clamp_z(m, &mut p);
        let rho = space.gauge_unchecked(&p).rho;
        let buf = &mut out[..n_out];
        if !f(&p, rho, buf) || buf.iter().any(|b| !b.is_finite()) {
            buf.iter_mut().for_each(|b| *b = 0.0);
            out[n_out + 1] = 1.0;
        } else {
            buf.iter_mut().for_each(|b| *b *= w);
        }
        out[n_out] = 1.0;
    });
    Pass {
        sums: sums[..n_out].to_vec(),
        cells: grid.panels.pow(n as u32),
        evaluations: sums[n_out] as usize,
        nonfinite: sums[n_out + 1] as usize,
    }
}

/// Integrates over the box `[lo, hi]` in `(z, t)` with a fine and a coarse
/// pass; `f` receives the point and its gauge.
pub fn integrate_box_terms<F>(space: &GrushinSpace, lo: &[f64], hi: &[f64], grid: &BoxGrid, n_out: usize, f: F) -> Result<QuadOutcome>
where
    F: Fn(&Point, f64, &mut [f64]) -> bool + Sync + Send,
{
    grid.validate()?;
    let n = space.dim();
    if lo.len() != n || hi.len() != n || lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
        return Err(Error::EmptyDomain("box needs lo < hi on every axis".into()));
    }
    let fine = run_box_pass(space, lo, hi, grid, n_out, &f);
    let coarse = run_box_pass(space, lo, hi, &grid.coarsened(), n_out, &f);
    for pass in [&fine, &coarse] {
        if pass.nonfinite as f64 > NONFINITE_TOLERANCE * pass.evaluations as f64 {
            return Err(Error::NonFinite(format!("{} of {} integrand samples", pass.nonfinite, pass.evaluations)));
        }
    }
    let errors = fine.sums.iter().zip(&coarse.sums).map(|(a, b)| (a - b).abs()).collect();
    Ok(QuadOutcome { values: fine.sums, errors, cells: fine.cells, evaluations: fine.evaluations })
}

fn angle_factor(factor: AngleFactor, psi: f64, mu: Option<f64>) -> Option<f64> {
    match factor {
        AngleFactor::None => Some(1.0),
        AngleFactor::Psi => Some(psi),
        AngleFactor::Mu => mu,
        AngleFactor::InverseMu => mu.map(|m| 1.0 / m),
    }
}

/// `integral of integrand * weight dz dt` with the weight applied in log
/// space; `mu` is consulted only for the `Mu`/`InverseMu` factors.
pub fn integrate_with_mu<I, M>(
    space: &GrushinSpace,
    domain: &AnnulusDomain,
    grid: &QuadratureGrid,
    integrand: I,
    weight: &WeightedIntegral,
    mu: M,
) -> Result<Scaled>
where
    I: Fn(&Point) -> f64 + Sync + Send,
    M: Fn(&Point) -> Option<f64> + Sync + Send,
{
    weight.radial.validate()?;
    let shift = weight.radial.max_ln(domain.r_in, domain.r_out);
    let out = integrate_terms(space, domain, grid, 1, |p, rho, o| {
        let v = integrand(p);
        if v == 0.0 {
            return true;
        }
        let psi = space.gauge_unchecked(p).psi;
        let needs_mu = matches!(weight.factor, AngleFactor::Mu | AngleFactor::InverseMu);
        let Some(a) = angle_factor(weight.factor, psi, if needs_mu { mu(p) } else { None }) else {
            return false;
        };
        o[0] = v * a * (weight.radial.ln_weight(rho) - shift).exp();
        true
    })?;
    Ok(Scaled { mantissa: out.values[0], error: out.errors[0], ln_scale: shift })
}

pub fn integrate<I>(space: &GrushinSpace, domain: &AnnulusDomain, grid: &QuadratureGrid, integrand: I, weight: &WeightedIntegral) -> Result<Scaled>
where
    I: Fn(&Point) -> f64 + Sync + Send,
{
    if matches!(weight.factor, AngleFactor::Mu | AngleFactor::InverseMu) {
        return Err(Error::param("mu factor needs a coefficient field; use integrate_with_mu"));
    }
    integrate_with_mu(space, domain, grid, integrand, weight, |_| None)
}

/// `integral over B_r of u^2 psi dz dt`
pub fn vanishing_profile_integral(space: &GrushinSpace, u: &dyn ScalarField, r: f64, grid: &QuadratureGrid) -> Result<Scaled> {
    let w = WeightedIntegral { radial: RadialWeight::Power { a: 0.0 }, factor: AngleFactor::Psi };
    integrate(space, &AnnulusDomain::ball(r)?, grid, |p| u.eval(space, p).powi(2), &w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Constant, Gauge};

    fn s() -> GrushinSpace {
        GrushinSpace::new(1, 1, 1.0).unwrap()
    }

    #[test]
    fn ball_volume_scales_with_q() {
        let sp = s();
        let g = QuadratureGrid::default();
        let v1 = integrate(&sp, &AnnulusDomain::ball(1.0).unwrap(), &g, |_| 1.0, &WeightedIntegral::unit()).unwrap();
        // exact: int_{-1}^{1} sqrt(1 - z^4) dz
        assert!((v1.value() - 1.748038).abs() / 1.748038 < 1e-2, "{}", v1.value());
        for r in [0.5, 0.25] {
            let v = integrate(&sp, &AnnulusDomain::ball(r).unwrap(), &g, |_| 1.0, &WeightedIntegral::unit()).unwrap();
            assert!((v.value() / v1.value() / r.powi(3) - 1.0).abs() < 1e-2);
        }
    }

    #[test]
    fn log_shift_handles_huge_weights() {
        let sp = s();
        let w = WeightedIntegral { radial: RadialWeight::PowerExp { a: -400.0, alpha: 200.0, eps: 0.5 }, factor: AngleFactor::Psi };
        let d = AnnulusDomain::new(0.3, 0.8).unwrap();
        let v = integrate(&sp, &d, &QuadratureGrid::with_cells(32), |_| 1.0, &w).unwrap();
        assert!(v.mantissa.is_finite() && v.mantissa > 0.0);
        assert!(v.ln_abs() > 400.0);
    }

    #[test]
    fn profile_integral_zero_field() {
        let v = vanishing_profile_integral(&s(), &Constant(0.0), 0.5, &QuadratureGrid::with_cells(16)).unwrap();
        assert_eq!(v.value(), 0.0);
        let g = vanishing_profile_integral(&s(), &Gauge, 0.5, &QuadratureGrid::with_cells(16)).unwrap();
        assert!(g.value() > 0.0);
    }

    #[test]
    fn gauss_legendre_exact_for_polynomials() {
        let g = gauss_legendre(5);
        let s: f64 = g.iter().map(|(x, w)| w * x.powi(9)).sum();
        assert!((s - 0.1).abs() < 1e-14);
    }

    #[test]
    fn polar_rule_matches_tensor_rule() {
        let sp = s();
        let d = AnnulusDomain::new(0.3, 0.9).unwrap();
        let f = |p: &Point, rho: f64, o: &mut [f64]| {
            o[0] = sp.gauge_and_angle(p).unwrap().psi * rho.powi(-3) * (1.0 + p.t()[0]);
            true
        };
        let a = integrate_terms(&sp, &d, &QuadratureGrid::with_cells(256), 1, f).unwrap();
        let b = integrate_polar_terms(&sp, &d, &PolarGrid::default(), 1, f).unwrap();
        assert!((a.values[0] - b.values[0]).abs() < 2e-3 * a.values[0], "{} {}", a.values[0], b.values[0]);
    }

    #[test]
    fn box_rule_integrates_polynomials() {
        let sp = s();
        let f = |p: &Point, _: f64, o: &mut [f64]| {
            o[0] = p.z()[0] * p.z()[0] * p.t()[0];
            o[1] = 1.0;
            true
        };
        let out = integrate_box_terms(&sp, &[0.2, 0.1], &[0.6, 0.5], &BoxGrid { panels: 4, order: 3 }, 2, f).unwrap();
        let exact = (0.6f64.powi(3) - 0.2f64.powi(3)) / 3.0 * (0.25 - 0.01) / 2.0;
        assert!((out.values[0] - exact).abs() < 1e-14, "{} {exact}", out.values[0]);
        assert!((out.values[1] - 0.16).abs() < 1e-14);
        assert!(out.errors[0] < 1e-14);
        assert!(integrate_box_terms(&sp, &[0.2, 0.1], &[0.2, 0.5], &BoxGrid::default(), 1, f).is_err());
    }

    #[test]
    fn empty_domain_rejected() {
        assert!(AnnulusDomain::new(0.5, 0.5).is_err());
        assert!(AnnulusDomain::new(-0.1, 0.5).is_err());
    }
}
