//! Both sides of the four Carleman estimates, evaluated by quadrature on
//! compactly supported test functions, with parameter sweeps and empirical
//! constants.
//!
//! For `alpha`-type estimates the weight is `rho^{-2 alpha} e^{2 alpha rho^eps}`
//! and `beta = (2 alpha + 4 - Q)/2`; the log-squared estimate uses
//! `e^{beta (log rho)^2}` directly. All integrals are computed in log space
//! against one shift per case so that large parameters never overflow.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calculus::gauge_jet;
use crate::coefficients::frame_data;
use crate::error::{Error, Result};
use crate::field::{bump1d, psi_jet, BumpProfile, Profile, ScalarField};
use crate::fit::log_log_fit;
use crate::geometry::{GrushinSpace, Point};
use crate::jet::Jet;
use crate::operators::DegenerateOperator;
use crate::quadrature::{box_ranges, integrate_box_terms, integrate_polar_terms, AnnulusDomain, BoxGrid, PolarGrid};
use crate::report::{anchors, CheckRecord, Verdict, VerificationReport};
use crate::sampling::{halton_cloud, point_from_polar, SampleSpec};

/// Allowed growth of the ratio per parameter doubling.
pub const GROWTH_TOL: f64 = 0.10;
/// Safety margin applied to the largest observed ratio.
pub const SAFETY_MARGIN: f64 = 1.2;
/// Tolerance of the substitution cross-check on top of the quadrature error.
pub const SUBSTITUTION_TOL: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CarlemanKind {
    Est1,
    Df,
    F10,
    Har1,
}

impl CarlemanKind {
    pub const ALL: [CarlemanKind; 4] = [CarlemanKind::Est1, CarlemanKind::Df, CarlemanKind::F10, CarlemanKind::Har1];

    pub fn label(&self) -> &'static str {
        match self {
            CarlemanKind::Est1 => "est1",
            CarlemanKind::Df => "df",
            CarlemanKind::F10 => "f10",
            CarlemanKind::Har1 => "har1",
        }
    }

    pub fn anchor(&self) -> &'static str {
        match self {
            CarlemanKind::Est1 => anchors::CARLEMAN_POWER,
            CarlemanKind::Df => anchors::CARLEMAN_C1,
            CarlemanKind::F10 => anchors::CARLEMAN_SUBLINEAR,
            CarlemanKind::Har1 => anchors::CARLEMAN_LOG,
        }
    }
}

/// Potentials and sublinear terms entering the right-hand sides.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    #[default]
    None,
    /// `V = K psi`, so `|V| <= K psi`.
    Bounded { k: f64 },
    /// `V = (K/2) psi`; `|V| + |F V| <= K psi` is checked on samples.
    C1 { k: f64 },
    /// `V = C psi / rho^2`.
    Hardy { c: f64 },
    /// `f(s) = c |s|^{q-2} s + c_low |s|^{p-2} s` with `1 < p <= q < 2`.
    Sublinear {
        c: f64,
        q: f64,
        #[serde(default)]
        c_low: f64,
        #[serde(default = "default_p")]
        p: f64,
    },
}

fn default_p() -> f64 {
    1.5
}

impl PotentialSpec {
    pub fn sublinear(c: f64, q: f64) -> Self {
        PotentialSpec::Sublinear { c, q, c_low: 0.0, p: q }
    }

    /// `V(p)` for the linear kinds, zero otherwise.
    pub fn potential(&self, psi: f64, rho: f64) -> f64 {
        match *self {
            PotentialSpec::Bounded { k } => k * psi,
            PotentialSpec::C1 { k } => 0.5 * k * psi,
            PotentialSpec::Hardy { c } => c * psi / (rho * rho),
            _ => 0.0,
        }
    }

    /// Sublinear `f(s)`, zero for the linear kinds.
    pub fn f(&self, s: f64) -> f64 {
        match *self {
            PotentialSpec::Sublinear { c, q, c_low, p } => {
                if s == 0.0 {
                    0.0
                } else {
                    (c * s.abs().powf(q - 2.0) + c_low * s.abs().powf(p - 2.0)) * s
                }
            }
            _ => 0.0,
        }
    }

    /// Primitive `G(s) = int_0^s f`.
    pub fn big_g(&self, s: f64) -> f64 {
        match *self {
            PotentialSpec::Sublinear { c, q, c_low, p } => c / q * s.abs().powf(q) + c_low / p * s.abs().powf(p),
            _ => 0.0,
        }
    }

    /// Exponent of the `|u|^q` term.
    pub fn q(&self) -> Option<f64> {
        match *self {
            PotentialSpec::Sublinear { q, .. } => Some(q),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PotentialSpec::Sublinear { c, q, c_low, p } => {
                if !(q > 1.0 && q < 2.0 && p > 1.0 && p <= q && c > 0.0 && c_low >= 0.0) {
                    return Err(Error::param(format!("sublinear term needs 1 < p <= q < 2, c > 0 (got c={c}, q={q}, c_low={c_low}, p={p})")));
                }
            }
            PotentialSpec::Bounded { k } | PotentialSpec::C1 { k } if !(k >= 0.0) => return Err(Error::param("K must be non-negative")),
            PotentialSpec::Hardy { c } if !(c >= 0.0) => return Err(Error::param("C must be non-negative")),
            _ => {}
        }
        Ok(())
    }

    /// Sampled structural conditions: for the sublinear term `f(0) = 0`,
    /// `0 < s f(s) <= q G(s)`, `f(s) <= kappa s^{p-1}` and
    /// `c0 |s|^q <= G(s) <= c1 |s|^p` on `(-1, 1)`.
    pub fn structure_check(&self) -> CheckRecord {
        let PotentialSpec::Sublinear { c, q, c_low, p } = *self else {
            return CheckRecord::new("potential/structure", anchors::CARLEMAN_SUBLINEAR, Verdict::Diagnostic).note("linear potential");
        };
        let (c0, c1, kappa) = (c / q, c / q + c_low / p, c + c_low);
        let mut ok = self.f(0.0) == 0.0;
        let mut worst_ratio = 0.0f64;
        for i in 1..2000 {
            let s = -1.0 + 2.0 * i as f64 / 2000.0;
            if s == 0.0 {
                continue;
            }
            let (f, g) = (self.f(s), self.big_g(s));
            let sf = s * f;
            ok &= sf > 0.0 && sf <= q * g * (1.0 + 1e-12);
            ok &= c0 * s.abs().powf(q) <= g * (1.0 + 1e-12) && g <= c1 * s.abs().powf(p) * (1.0 + 1e-12);
            if s > 0.0 {
                ok &= f <= kappa * s.powf(p - 1.0) * (1.0 + 1e-12);
            }
            worst_ratio = worst_ratio.max(sf / (q * g));
        }
        ok &= self.big_g(1.0) > 0.0;
        CheckRecord::new("potential/sublinear-structure", anchors::CARLEMAN_SUBLINEAR, Verdict::from_bool(ok))
            .value("max_sf_over_qg", worst_ratio)
            .value("g_at_one", self.big_g(1.0))
            .tol(1.0)
    }

    /// `sup (|V| + |F V|) / (K psi)` over a sample cloud (C1 kind only).
    pub fn c1_check(&self, op: &DegenerateOperator, spec: &SampleSpec) -> Result<CheckRecord> {
        let PotentialSpec::C1 { k } = *self else {
            return Ok(CheckRecord::new("potential/c1-bound", anchors::CARLEMAN_C1, Verdict::Diagnostic).note("not a C1 potential"));
        };
        let space = &op.space;
        let mut worst = 0.0f64;
        for p in halton_cloud(space, spec)? {
            let Ok(fd) = frame_data(op.coeff.as_ref(), space, &p) else { continue };
            let Some(pj) = psi_jet(space, &p) else { continue };
            let fv: f64 = fd.derived.f_coeffs.iter().zip(&pj.grad).map(|(a, b)| a * b).sum::<f64>() * 0.5 * k;
            let v = 0.5 * k * fd.derived.psi;
            if fd.derived.psi > 0.0 {
                worst = worst.max((v.abs() + fv.abs()) / (k * fd.derived.psi));
            }
        }
        Ok(CheckRecord::new("potential/c1-bound", anchors::CARLEMAN_C1, Verdict::from_bool(worst <= 1.0))
            .value("sup_v_plus_fv_over_k_psi", worst)
            .tol(1.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarlemanCase {
    pub kind: CarlemanKind,
    /// Exponent in `e^{2 alpha rho^eps}`; ignored by `har1`.
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    /// `alpha` for est1/df/f10, `beta` for har1.
    pub param: f64,
    /// Support radius `R`.
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default)]
    pub potential: PotentialSpec,
}

fn default_eps() -> f64 {
    0.5
}

fn default_radius() -> f64 {
    0.5
}

impl CarlemanCase {
    pub fn new(kind: CarlemanKind, param: f64) -> Self {
        let potential = match kind {
            CarlemanKind::Df => PotentialSpec::C1 { k: 10.0 },
            CarlemanKind::F10 => PotentialSpec::sublinear(1.0, 1.5),
            _ => PotentialSpec::None,
        };
        CarlemanCase { kind, epsilon: 0.5, param, radius: 0.5, potential }
    }

    pub fn with_param(&self, param: f64) -> Self {
        CarlemanCase { param, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.param > 0.0) {
            return Err(Error::param("Carleman parameter must be positive"));
        }
        if self.kind != CarlemanKind::Har1 && !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::param(format!("eps = {} outside (0, 1)", self.epsilon)));
        }
        if !(self.radius > 0.0) || (self.kind == CarlemanKind::Har1 && self.radius >= 1.0) {
            return Err(Error::param(format!("support radius {} not admissible", self.radius)));
        }
        match (self.kind, self.potential) {
            (CarlemanKind::F10, PotentialSpec::Sublinear { .. }) => {}
            (CarlemanKind::F10, _) => return Err(Error::param("f10 needs a sublinear term")),
            (CarlemanKind::Est1 | CarlemanKind::Har1, p) if p != PotentialSpec::None => {
                return Err(Error::param("est1 and har1 take no potential"))
            }
            (CarlemanKind::Df, PotentialSpec::Sublinear { .. }) => return Err(Error::param("df takes a linear potential")),
            _ => {}
        }
        self.potential.validate()
    }

    /// `beta = (2 alpha + 4 - Q)/2`, or the parameter itself for `har1`.
    pub fn beta(&self, q: f64) -> f64 {
        match self.kind {
            CarlemanKind::Har1 => self.param,
            _ => (2.0 * self.param + 4.0 - q) / 2.0,
        }
    }

    fn names(&self) -> &'static [&'static str] {
        match self.kind {
            CarlemanKind::F10 => &["lhs_alpha3_term", "lhs_alpha3_q_term", "lhs_alpha_gradient_term"],
            CarlemanKind::Har1 => &["lhs_beta3_term", "lhs_beta_gradient_term"],
            _ => &["lhs_alpha3_term", "lhs_alpha_gradient_term"],
        }
    }

    /// Log weights (without the parameter prefactors) of the LHS terms and the RHS.
    fn ln_weights(&self, q: f64, rho: f64) -> ([f64; 3], f64) {
        let l = rho.ln();
        match self.kind {
            CarlemanKind::Har1 => {
                let e = self.param * l * l;
                ([-q * l + e, (2.0 - q) * l + e, f64::NEG_INFINITY], (4.0 - q) * l + e)
            }
            _ => {
                let (a, eps) = (self.param, self.epsilon);
                let e = 2.0 * a * rho.powf(eps);
                let t1 = (-2.0 * a - 4.0 + eps) * l + e;
                let t2 = (-2.0 * a - 2.0 + eps) * l + e;
                let tq = if self.kind == CarlemanKind::F10 { (-2.0 * a - 2.0) * l + e } else { f64::NEG_INFINITY };
                let lhs = if self.kind == CarlemanKind::F10 { [t1, tq, t2] } else { [t1, t2, f64::NEG_INFINITY] };
                (lhs, -2.0 * a * l + e)
            }
        }
    }

    fn prefactors(&self) -> [f64; 3] {
        let a = self.param;
        match self.kind {
            CarlemanKind::F10 => [a.powi(3), a.powi(3), a],
            _ => [a.powi(3), a, 0.0],
        }
    }

    /// `(W, W', W'')` of the substitution `u = W(rho) v`, normalized by `W(r_ref)`.
    fn substitution_profile(&self, q: f64, r_ref: f64, rho: f64) -> (f64, f64, f64) {
        let beta = self.beta(q);
        match self.kind {
            CarlemanKind::Har1 => {
                // W = e^{-(beta/2) (log rho)^2}
                let (l, l0) = (rho.ln(), r_ref.ln());
                let w = (-0.5 * beta * (l * l - l0 * l0)).exp();
                let d1 = -beta * l / rho;
                (w, w * d1, w * (beta * beta * l * l - beta + beta * l) / (rho * rho))
            }
            _ => {
                // W = rho^beta e^{-alpha rho^eps}
                let (a, e) = (self.param, self.epsilon);
                let w = (beta * (rho / r_ref).ln() - a * (rho.powf(e) - r_ref.powf(e))).exp();
                let re = rho.powf(e);
                let d1 = (beta - a * e * re) / rho;
                let d2 = (beta * (beta - 1.0) - a * e * re * (2.0 * beta + e - 1.0) + a * a * e * e * re * re) / (rho * rho);
                (w, w * d1, w * d2)
            }
        }
    }
}

/// Compactly supported test functions with analytic jets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunction {
    Zero,
    /// `b(rho)` for a bump `b` on `[r_in, r_out]`.
    Radial { r_in: f64, r_out: f64, sharp: f64 },
    /// `b(rho) (1 + c z_1 / rho) / (1 + |c|)`.
    Modulated { r_in: f64, r_out: f64, sharp: f64, c: f64 },
    /// Product of one-dimensional bumps in every coordinate.
    Tensor { center: Vec<f64>, width: Vec<f64>, sharp: f64 },
}

impl TestFunction {
    pub fn label(&self) -> String {
        match self {
            TestFunction::Zero => "zero".into(),
            TestFunction::Radial { r_in, r_out, sharp } => format!("radial[{r_in:.3},{r_out:.3}]s{sharp:.2}"),
            TestFunction::Modulated { r_in, r_out, sharp, c } => format!("modulated[{r_in:.3},{r_out:.3}]s{sharp:.2}c{c:.2}"),
            TestFunction::Tensor { center, sharp, .. } => {
                let c: Vec<String> = center.iter().map(|x| format!("{x:.3}")).collect();
                format!("tensor({})s{sharp:.2}", c.join(","))
            }
        }
    }

    /// Gauge radii `(lo, hi)` containing the support.
    pub fn support(&self, space: &GrushinSpace) -> Option<(f64, f64)> {
        match self {
            TestFunction::Zero => None,
            TestFunction::Radial { r_in, r_out, .. } | TestFunction::Modulated { r_in, r_out, .. } => Some((*r_in, *r_out)),
            TestFunction::Tensor { center, width, .. } => {
                let lo: Vec<f64> = center.iter().zip(width).map(|(c, w)| c - w).collect();
                let hi: Vec<f64> = center.iter().zip(width).map(|(c, w)| c + w).collect();
                let (a, b, _) = box_ranges(space, space.m(), &lo, &hi);
                Some((a, b))
            }
        }
    }

    /// Upper bound for `ln |u|` on the gauge sphere of radius `rho`.
    pub fn ln_envelope(&self, rho: f64) -> f64 {
        match self {
            TestFunction::Zero => f64::NEG_INFINITY,
            TestFunction::Radial { r_in, r_out, sharp } | TestFunction::Modulated { r_in, r_out, sharp, .. } => {
                BumpProfile::new(*r_in, *r_out, *sharp).eval3(rho).0.ln()
            }
            TestFunction::Tensor { .. } => 0.0,
        }
    }

    pub fn validate(&self, space: &GrushinSpace, radius: f64) -> Result<()> {
        if let TestFunction::Tensor { center, width, .. } = self {
            if center.len() != space.dim() || width.len() != space.dim() || width.iter().any(|w| !(*w > 0.0)) {
                return Err(Error::param("tensor bump needs one centre and positive width per coordinate"));
            }
            // the RHS weight 1/mu is not integrable across z = 0 in general
            let m = space.m();
            if (0..m).all(|a| (center[a] - width[a]) < 0.0 && (center[a] + width[a]) > 0.0) {
                return Err(Error::SupportViolation(format!("{} meets the degeneracy set z = 0", self.label())));
            }
        }
        if let Some((a, b)) = self.support(space) {
            if !(a > 0.0 && b <= radius && a < b) {
                return Err(Error::SupportViolation(format!("{} has support [{a}, {b}] outside (0, {radius}]", self.label())));
            }
        }
        Ok(())
    }
}

impl ScalarField for TestFunction {
    fn eval(&self, space: &GrushinSpace, p: &Point) -> f64 {
        match self {
            TestFunction::Zero => 0.0,
            TestFunction::Radial { r_in, r_out, sharp } => BumpProfile::new(*r_in, *r_out, *sharp).eval3(space.rho(p)).0,
            TestFunction::Modulated { r_in, r_out, sharp, c } => {
                let rho = space.rho(p);
                BumpProfile::new(*r_in, *r_out, *sharp).eval3(rho).0 * (1.0 + c * p.z()[0] / rho) / (1.0 + c.abs())
            }
            TestFunction::Tensor { center, width, sharp } => {
                p.coords().iter().zip(center.iter().zip(width)).map(|(x, (c, w))| bump1d((x - c) / w, *sharp).0).product()
            }
        }
    }

    fn jet(&self, space: &GrushinSpace, p: &Point) -> Option<Jet> {
        let n = space.dim();
        match self {
            TestFunction::Zero => Some(Jet::constant(n, 0.0)),
            TestFunction::Radial { r_in, r_out, sharp } => {
                let r = gauge_jet(space, p).ok()?;
                let (f0, f1, f2) = BumpProfile::new(*r_in, *r_out, *sharp).eval3(r.value);
                Some(r.compose(f0, f1, f2))
            }
            TestFunction::Modulated { r_in, r_out, sharp, c } => {
                let r = gauge_jet(space, p).ok()?;
                let (f0, f1, f2) = BumpProfile::new(*r_in, *r_out, *sharp).eval3(r.value);
                if f0 == 0.0 && f1 == 0.0 && f2 == 0.0 {
                    return Some(Jet::constant(n, 0.0));
                }
                let m = Jet::coordinate(space, p, 0).mul(&r.recip()).scale(*c).add_const(1.0);
                Some(r.compose(f0, f1, f2).mul(&m).scale(1.0 / (1.0 + c.abs())))
            }
            TestFunction::Tensor { center, width, sharp } => {
                let mut acc = Jet::constant(n, 1.0);
                for a in 0..n {
                    let x = Jet::coordinate(space, p, a);
                    let w = width[a];
                    let (f, f1, f2) = bump1d((x.value - center[a]) / w, *sharp);
                    if f == 0.0 {
                        return Some(Jet::constant(n, 0.0));
                    }
                    acc = acc.mul(&x.compose(f, f1 / w, f2 / (w * w)));
                }
                Some(acc)
            }
        }
    }
}

/// The reference suite: 10 radial bumps, 5 modulated bumps and 5 tensor
/// bumps, supported in `[0.05 R', R]` with `R' = R`, drawn from `seed`.
pub fn standard_suite(space: &GrushinSpace, radius: f64, seed: u64) -> Vec<TestFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(20);
    let annulus = |rng: &mut ChaCha8Rng| {
        let a = radius * rng.gen_range(0.2..0.6);
        let b = (a + radius * rng.gen_range(0.3..0.7)).min(radius);
        (a, b, rng.gen_range(2.0..6.0))
    };
    for _ in 0..10 {
        let (r_in, r_out, sharp) = annulus(&mut rng);
        out.push(TestFunction::Radial { r_in, r_out, sharp });
    }
    for _ in 0..5 {
        let (r_in, r_out, sharp) = annulus(&mut rng);
        out.push(TestFunction::Modulated { r_in, r_out, sharp, c: rng.gen_range(-0.8..0.8) });
    }
    let n = space.dim();
    while out.len() < 20 {
        let rho = radius * rng.gen_range(0.45..0.7);
        let psi = rng.gen_range(0.2..0.95);
        let dirs: Vec<f64> = (0..2 * n + 2).map(|_| rng.gen_range(0.01..0.99)).collect();
        let c = point_from_polar(space, rho, psi, &dirs);
        let g1 = space.gamma() + 1.0;
        let width: Vec<f64> = (0..n).map(|a| if a < space.m() { 0.35 * rho } else { 0.35 * rho.powf(g1) / g1 }).collect();
        let f = TestFunction::Tensor { center: c.coords().to_vec(), width, sharp: rng.gen_range(2.0..6.0) };
        if f.validate(space, radius).is_ok() {
            out.push(f);
        }
    }
    out
}

/// Quadrature used for the weighted integrals: dilation-polar for radial
/// and modulated functions, a Gauss box rule on the support of tensor bumps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarlemanQuad {
    #[serde(default)]
    pub polar: PolarGrid,
    #[serde(default)]
    pub boxed: BoxGrid,
}

impl CarlemanQuad {
    pub fn refined(&self) -> Self {
        CarlemanQuad { polar: self.polar.refined(), boxed: self.boxed.refined() }
    }
}

/// One evaluation of both sides. Term values are mantissas relative to
/// `e^{ln_scale}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarlemanSides {
    pub case: CarlemanCase,
    pub function: String,
    pub lhs_terms: Vec<(String, f64)>,
    pub lhs: f64,
    pub rhs: f64,
    pub ln_scale: f64,
    pub lhs_rel_error: f64,
    pub rhs_rel_error: f64,
    pub ratio: f64,
    /// LHS recomputed from `v` (`u = W v`).
    pub lhs_via_substitution: f64,
    /// RHS with `L u` from the expanded substitution formula.
    pub rhs_via_substitution: f64,
}

impl CarlemanSides {
    pub fn ratio_rel_error(&self) -> f64 {
        self.lhs_rel_error + self.rhs_rel_error
    }

    /// Largest relative disagreement between the direct and substituted paths.
    pub fn substitution_defect(&self) -> f64 {
        let rel = |a: f64, b: f64| if a == b { 0.0 } else { (a - b).abs() / a.abs().max(b.abs()) };
        rel(self.lhs, self.lhs_via_substitution).max(rel(self.rhs, self.rhs_via_substitution))
    }

    /// `ln LHS - ln RHS` style check `LHS <= c RHS`.
    pub fn satisfies(&self, c: f64) -> bool {
        self.lhs <= c * self.rhs
    }
}

const TERMS: usize = 6;
const SHIFT_SAMPLES: usize = 2000;

/// Evaluates all `cases` for one test function in a single quadrature pass.
/// The substitution fields of the result are NaN; see [`substitution_check`].
pub fn evaluate_batch(op: &DegenerateOperator, cases: &[CarlemanCase], u: &TestFunction, grid: &CarlemanQuad) -> Result<Vec<CarlemanSides>> {
    evaluate_cases(op, cases, &vec![false; cases.len()], u, grid)
}

/// Evaluates one case and both sides again through `u = W v`.
pub fn substitution_check(op: &DegenerateOperator, case: &CarlemanCase, u: &TestFunction, grid: &CarlemanQuad) -> Result<CarlemanSides> {
    Ok(evaluate_cases(op, std::slice::from_ref(case), &[true], u, grid)?.remove(0))
}

/// As [`evaluate_batch`], running the substitution path for cases whose
/// flag in `substitute` is set.
pub fn evaluate_cases(op: &DegenerateOperator, cases: &[CarlemanCase], substitute: &[bool], u: &TestFunction, grid: &CarlemanQuad) -> Result<Vec<CarlemanSides>> {
    if substitute.len() != cases.len() {
        return Err(Error::param("one substitution flag per case"));
    }
    let any_sub = substitute.iter().any(|b| *b);
    let space = &op.space;
    for c in cases {
        c.validate()?;
        u.validate(space, c.radius)?;
    }
    let Some((lo, hi)) = u.support(space) else {
        return Ok(cases.iter().map(|c| zero_sides(c, u)).collect());
    };
    let q = space.homogeneous_dimension();
    let r_ref = (lo * hi).sqrt();
    // one shift per case: the largest log of weight times amplitude envelope
    let shifts: Vec<f64> = cases
        .iter()
        .map(|c| {
            let qe = c.potential.q().unwrap_or(2.0);
            (0..=SHIFT_SAMPLES)
                .map(|i| {
                    let r = lo + (hi - lo) * i as f64 / SHIFT_SAMPLES as f64;
                    let amp = u.ln_envelope(r);
                    let (l, rr) = c.ln_weights(q, r);
                    let zero_order = (l[0] + 2.0 * amp).max(l[1] + qe.min(2.0) * amp);
                    zero_order.max(l[2] + 2.0 * amp).max(rr + 2.0 * amp)
                })
                .filter(|x| x.is_finite())
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .map(|x| if x.is_finite() { x } else { 0.0 })
        .collect();
    let n_out = cases.len() * TERMS;
    let integrand = |p: &Point, rho: f64, o: &mut [f64]| {
        let Some(jet) = u.jet(space, p) else { return false };
        if jet.value == 0.0 && jet.grad.iter().all(|x| *x == 0.0) {
            return true;
        }
        let (Ok(fd), Ok(loc)) = (frame_data(op.coeff.as_ref(), space, p), op.local(p)) else {
            return false;
        };
        let (psi, mu) = (fd.derived.psi, fd.derived.mu);
        let lu = loc.apply(&jet);
        let energy = loc.energy(&jet);
        let u0 = jet.value;
        let rho_jet = if any_sub { Some(Jet { value: rho, grad: fd.jets.grad.clone(), hess: fd.jets.hess.clone() }) } else { None };
        // perturbation terms of L rho beyond B_gamma rho
        let extra = rho_jet.as_ref().map_or(0.0, |r| loc.apply(r) - psi * (q - 1.0) / rho);
        let sigma = fd.derived.sigma;
        for (ci, c) in cases.iter().enumerate() {
            let (lw, rw) = c.ln_weights(q, rho);
            let sh = shifts[ci];
            let pre = c.prefactors();
            let forcing = c.potential.potential(psi, rho) * u0 + c.potential.f(u0) * psi;
            let o = &mut o[ci * TERMS..(ci + 1) * TERMS];
            o[0] = pre[0] * (lw[0] - sh).exp() * u0 * u0 * mu;
            let (e1, e2) = ((lw[1] - sh).exp(), (lw[2] - sh).exp());
            match c.kind {
                CarlemanKind::F10 => {
                    o[1] = pre[1] * e1 * u0.abs().powf(c.potential.q().unwrap_or(2.0)) * mu;
                    o[2] = pre[2] * e2 * energy;
                }
                _ => o[1] = pre[1] * e1 * energy,
            }
            let wr = (rw - sh).exp();
            o[3] = wr * (lu + forcing).powi(2) / mu;
            let Some(rho_jet) = rho_jet.as_ref().filter(|_| substitute[ci]) else { continue };
            // substitution u = W v
            let (w, w1, w2) = c.substitution_profile(q, r_ref, rho);
            let v = jet.mul(&rho_jet.compose(w, w1, w2).recip());
            let fv: f64 = fd.derived.f_coeffs.iter().zip(&v.grad).map(|(a, b)| a * b).sum();
            let lu_sub = w * loc.apply(&v) + 2.0 * w1 * mu / rho * fv + v.value * (psi * (w2 + (q - 1.0) * w1 / rho) + w1 * extra + w2 * sigma);
            o[4] = wr * (lu_sub + forcing).powi(2) / mu;
            let u_sub = w * v.value;
            let xu_sub: Vec<f64> = (0..space.dim()).map(|k| w1 * v.value * fd.jets.grad[k] + w * v.grad[k]).collect();
            let energy_sub = loc.a.quad_form(&xu_sub, &xu_sub);
            let mut lhs_sub = pre[0] * (lw[0] - sh).exp() * u_sub * u_sub * mu;
            lhs_sub += match c.kind {
                CarlemanKind::F10 => {
                    pre[1] * e1 * u_sub.abs().powf(c.potential.q().unwrap_or(2.0)) * mu + pre[2] * e2 * energy_sub
                }
                _ => pre[1] * e1 * energy_sub,
            };
            o[5] = lhs_sub;
        }
        true
    };
    let out = match u {
        TestFunction::Tensor { center, width, .. } => {
            let lo: Vec<f64> = center.iter().zip(width).map(|(c, w)| c - w).collect();
            let hi: Vec<f64> = center.iter().zip(width).map(|(c, w)| c + w).collect();
            integrate_box_terms(space, &lo, &hi, &grid.boxed, n_out, integrand)?
        }
        _ => integrate_polar_terms(space, &AnnulusDomain::new(lo, hi)?, &grid.polar, n_out, integrand)?,
    };
    let mut res = Vec::with_capacity(cases.len());
    for (ci, c) in cases.iter().enumerate() {
        let v = &out.values[ci * TERMS..(ci + 1) * TERMS];
        let e = &out.errors[ci * TERMS..(ci + 1) * TERMS];
        let names = c.names();
        let lhs_terms: Vec<(String, f64)> = names.iter().enumerate().map(|(i, n)| (n.to_string(), v[i])).collect();
        let lhs: f64 = lhs_terms.iter().map(|t| t.1).sum();
        let lhs_err: f64 = (0..names.len()).map(|i| e[i]).sum();
        for (n, t) in &lhs_terms {
            if *t < 0.0 {
                return Err(Error::NonFinite(format!("negative LHS term {n} = {t}")));
            }
        }
        let rhs = v[3];
        let ratio = if lhs == 0.0 { 0.0 } else { lhs / rhs };
        if !ratio.is_finite() {
            return Err(Error::NonFinite(format!("ratio for {} at {}", u.label(), c.param)));
        }
        res.push(CarlemanSides {
            case: *c,
            function: u.label(),
            lhs_terms,
            lhs,
            rhs,
            ln_scale: shifts[ci],
            lhs_rel_error: if lhs == 0.0 { 0.0 } else { lhs_err / lhs },
            rhs_rel_error: if rhs == 0.0 { 0.0 } else { e[3] / rhs },
            ratio,
            lhs_via_substitution: if substitute[ci] { v[5] } else { f64::NAN },
            rhs_via_substitution: if substitute[ci] { v[4] } else { f64::NAN },
        });
    }
    Ok(res)
}

fn zero_sides(c: &CarlemanCase, u: &TestFunction) -> CarlemanSides {
    CarlemanSides {
        case: *c,
        function: u.label(),
        lhs_terms: c.names().iter().map(|n| (n.to_string(), 0.0)).collect(),
        lhs: 0.0,
        rhs: 0.0,
        ln_scale: 0.0,
        lhs_rel_error: 0.0,
        rhs_rel_error: 0.0,
        ratio: 0.0,
        lhs_via_substitution: 0.0,
        rhs_via_substitution: 0.0,
    }
}

pub fn evaluate_sides(op: &DegenerateOperator, case: &CarlemanCase, u: &TestFunction, grid: &CarlemanQuad) -> Result<CarlemanSides> {
    Ok(evaluate_batch(op, std::slice::from_ref(case), u, grid)?.remove(0))
}

/// Ratios over a parameter grid for one function. The verdict uses the
/// fitted trend: `trend_growth` is the growth per doubling of the log-log
/// fit of the ratio against the parameter, and must not exceed
/// [`GROWTH_TOL`]. The largest step-to-step growth is reported alongside.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub function: String,
    pub sides: Vec<CarlemanSides>,
    pub trend_growth: f64,
    pub max_step_growth: f64,
    /// Log-log slope of `RHS/LHS` against the parameter.
    pub rhs_over_lhs_slope: f64,
    pub degenerate: bool,
}

impl SweepOutcome {
    pub fn passed(&self) -> bool {
        self.degenerate || self.trend_growth <= GROWTH_TOL
    }

    pub fn max_ratio(&self) -> f64 {
        self.sides.iter().map(|s| s.ratio).fold(0.0, f64::max)
    }

    pub fn record(&self, kind: CarlemanKind) -> CheckRecord {
        let name = format!("carleman/{}/sweep/{}", kind.label(), self.function);
        let mut rec = if self.degenerate {
            CheckRecord::new(name, kind.anchor(), Verdict::Diagnostic).note("degenerate sweep: test function is identically zero")
        } else {
            CheckRecord::new(name, kind.anchor(), Verdict::from_bool(self.passed())).tol(GROWTH_TOL)
        };
        rec = rec
            .value("trend_growth_per_doubling", self.trend_growth)
            .value("max_step_growth_per_doubling", self.max_step_growth)
            .value("rhs_over_lhs_slope", self.rhs_over_lhs_slope);
        for s in &self.sides {
            rec = rec.value(&format!("ratio_at_{}", s.case.param), s.ratio);
        }
        rec
    }
}

pub fn sweep_from_sides(sides: Vec<CarlemanSides>) -> SweepOutcome {
    let function = sides.first().map(|s| s.function.clone()).unwrap_or_default();
    let degenerate = sides.iter().all(|s| s.lhs == 0.0);
    let mut max_step = f64::NEG_INFINITY;
    for w in sides.windows(2) {
        if w[0].ratio > 0.0 {
            let doublings = (w[1].case.param / w[0].case.param).log2();
            let g = (w[1].ratio / w[0].ratio).powf(1.0 / doublings.max(1e-12)) - 1.0;
            max_step = max_step.max(g);
        }
    }
    if !max_step.is_finite() {
        max_step = 0.0;
    }
    let pos: Vec<&CarlemanSides> = sides.iter().filter(|s| s.lhs > 0.0 && s.rhs > 0.0).collect();
    let (trend, slope) = if pos.len() >= 2 {
        let x: Vec<f64> = pos.iter().map(|s| s.case.param).collect();
        let y: Vec<f64> = pos.iter().map(|s| s.ratio).collect();
        let fit = log_log_fit(&x, &y);
        (2f64.powf(fit.slope) - 1.0, -fit.slope)
    } else {
        (0.0, 0.0)
    };
    SweepOutcome { function, sides, trend_growth: trend, max_step_growth: max_step, rhs_over_lhs_slope: slope, degenerate }
}

pub fn alpha_sweep(op: &DegenerateOperator, template: &CarlemanCase, u: &TestFunction, grid: &CarlemanQuad, params: &[f64]) -> Result<(SweepOutcome, VerificationReport)> {
    let cases: Vec<CarlemanCase> = params.iter().map(|&a| template.with_param(a)).collect();
    let sweep = sweep_from_sides(evaluate_batch(op, &cases, u, grid)?);
    let mut rep = VerificationReport::new();
    rep.push(sweep.record(template.kind));
    Ok((sweep, rep))
}

/// `SAFETY_MARGIN * max LHS/RHS` over the suite and parameters.
pub fn constant_estimate(op: &DegenerateOperator, template: &CarlemanCase, suite: &[TestFunction], grid: &CarlemanQuad, params: &[f64]) -> Result<f64> {
    let mut worst = 0.0f64;
    for u in suite {
        let cases: Vec<CarlemanCase> = params.iter().map(|&a| template.with_param(a)).collect();
        let sides = evaluate_batch(op, &cases, u, grid).map_err(|e| Error::param(format!("suite member {}: {e}", u.label())))?;
        for s in sides {
            worst = worst.max(s.ratio);
        }
    }
    Ok(SAFETY_MARGIN * worst)
}

/// Per-estimate summary of a suite run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KindSummary {
    pub template: CarlemanCase,
    pub sweeps: Vec<SweepOutcome>,
    /// `SAFETY_MARGIN` times the largest ratio.
    pub constant: f64,
    pub max_substitution_defect: f64,
    /// Allowed defect: [`SUBSTITUTION_TOL`] plus the quadrature error at the worst case.
    pub substitution_allowance: f64,
    pub substitution_evaluations: usize,
}

impl KindSummary {
    pub fn sweeps_passed(&self) -> bool {
        self.sweeps.iter().all(|s| s.passed())
    }

    pub fn substitution_passed(&self) -> bool {
        self.max_substitution_defect <= self.substitution_allowance
    }

    /// `LHS <= c RHS` at every evaluation.
    pub fn bounded_by(&self, c: f64) -> bool {
        self.sweeps.iter().flat_map(|s| &s.sides).all(|s| s.satisfies(c))
    }

    pub fn max_ratio(&self) -> f64 {
        self.sweeps.iter().map(|s| s.max_ratio()).fold(0.0, f64::max)
    }
}

/// Every template swept over `params` on every suite member, in one
/// quadrature pass per member. The substitution path runs at the parameters
/// listed in `substitution_params`.
pub fn run_suite(
    op: &DegenerateOperator,
    suite: &[TestFunction],
    templates: &[CarlemanCase],
    params: &[f64],
    substitution_params: &[f64],
    grid: &CarlemanQuad,
) -> Result<(Vec<KindSummary>, VerificationReport)> {
    if params.is_empty() || templates.is_empty() {
        return Err(Error::param("suite run needs at least one template and one parameter"));
    }
    let cases: Vec<CarlemanCase> = templates.iter().flat_map(|t| params.iter().map(move |&a| t.with_param(a))).collect();
    let flags: Vec<bool> = cases.iter().map(|c| substitution_params.contains(&c.param)).collect();
    let per_member: Vec<Vec<CarlemanSides>> = suite
        .iter()
        .map(|u| evaluate_cases(op, &cases, &flags, u, grid).map_err(|e| Error::param(format!("suite member {}: {e}", u.label()))))
        .collect::<Result<_>>()?;
    let np = params.len();
    let mut summaries = Vec::with_capacity(templates.len());
    let mut rep = VerificationReport::new();
    for (ti, t) in templates.iter().enumerate() {
        let mut sweeps = Vec::with_capacity(suite.len());
        let (mut defect, mut allowance, mut count) = (0.0f64, SUBSTITUTION_TOL, 0usize);
        for sides in &per_member {
            let mine = sides[ti * np..(ti + 1) * np].to_vec();
            for (k, s) in mine.iter().enumerate() {
                if flags[ti * np + k] && s.lhs > 0.0 {
                    count += 1;
                    let d = s.substitution_defect();
                    if d > defect {
                        defect = d;
                        allowance = SUBSTITUTION_TOL + s.ratio_rel_error();
                    }
                }
            }
            sweeps.push(sweep_from_sides(mine));
        }
        let summary = KindSummary {
            template: *t,
            constant: SAFETY_MARGIN * sweeps.iter().map(|s| s.max_ratio()).fold(0.0, f64::max),
            sweeps,
            max_substitution_defect: defect,
            substitution_allowance: allowance,
            substitution_evaluations: count,
        };
        for s in &summary.sweeps {
            rep.push(s.record(t.kind));
        }
        rep.push(
            CheckRecord::new(format!("carleman/{}/constant", t.kind.label()), t.kind.anchor(), Verdict::Diagnostic)
                .value("constant_estimate", summary.constant)
                .value("max_ratio", summary.max_ratio())
                .value("members", suite.len() as f64)
                .archive("constant_estimate", 0.10),
        );
        if count > 0 {
            rep.push(
                CheckRecord::new(format!("carleman/{}/substitution", t.kind.label()), anchors::CARLEMAN_SUBSTITUTION, Verdict::from_bool(summary.substitution_passed()))
                    .value("max_defect", defect)
                    .value("evaluations", count as f64)
                    .tol(allowance),
            );
        }
        match t.potential {
            PotentialSpec::Sublinear { .. } => rep.push(t.potential.structure_check()),
            PotentialSpec::C1 { .. } => {
                rep.push(t.potential.c1_check(op, &SampleSpec { rho_max: t.radius, ..SampleSpec::new(2000) })?);
            }
            _ => {}
        }
        summaries.push(summary);
    }
    Ok((summaries, rep))
}

/// The four estimates with their default parameters: `eps = 0.5`, `K = 10`
/// for the C1 potential and `f(s) = |s|^{-1/2} s`.
pub fn default_templates(radius: f64) -> Vec<CarlemanCase> {
    CarlemanKind::ALL.iter().map(|&k| CarlemanCase { radius, ..CarlemanCase::new(k, 20.0) }).collect()
}

pub const DEFAULT_PARAMS: [f64; 4] = [20.0, 40.0, 80.0, 160.0];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::ExampleFamily;
    use std::sync::Arc;

    fn op() -> DegenerateOperator {
        DegenerateOperator::grushin(GrushinSpace::new(1, 1, 1.0).unwrap())
    }

    fn bump() -> TestFunction {
        TestFunction::Radial { r_in: 0.2, r_out: 0.45, sharp: 4.0 }
    }

    #[test]
    fn zero_function_gives_zero_ratio() {
        let s = evaluate_sides(&op(), &CarlemanCase::new(CarlemanKind::Est1, 40.0), &TestFunction::Zero, &CarlemanQuad::default()).unwrap();
        assert_eq!((s.lhs, s.rhs, s.ratio), (0.0, 0.0, 0.0));
        let c = constant_estimate(&op(), &CarlemanCase::new(CarlemanKind::Est1, 40.0), &[TestFunction::Zero], &CarlemanQuad::default(), &[20.0]).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn df_without_potential_matches_est1() {
        let est = CarlemanCase::new(CarlemanKind::Est1, 40.0);
        let df = CarlemanCase { kind: CarlemanKind::Df, potential: PotentialSpec::None, ..est };
        let r = evaluate_batch(&op(), &[est, df], &bump(), &CarlemanQuad::default()).unwrap();
        assert_eq!(r[0].lhs, r[1].lhs);
        assert_eq!(r[0].rhs, r[1].rhs);
    }

    #[test]
    fn substitution_agrees() {
        let o = DegenerateOperator::new(GrushinSpace::new(1, 1, 1.0).unwrap(), Arc::new(ExampleFamily::default()));
        for kind in CarlemanKind::ALL {
            let s = substitution_check(&o, &CarlemanCase::new(kind, 40.0), &bump(), &CarlemanQuad::default()).unwrap();
            assert!(s.substitution_defect() < 1e-8, "{kind:?} {}", s.substitution_defect());
            assert!(s.lhs_terms.iter().all(|t| t.1 >= 0.0));
        }
    }

    #[test]
    fn har1_stable_under_grid_doubling() {
        let q = CarlemanQuad::default();
        let c = CarlemanCase::new(CarlemanKind::Har1, 40.0);
        let a = evaluate_sides(&op(), &c, &bump(), &q).unwrap();
        let b = evaluate_sides(&op(), &c, &bump(), &q.refined()).unwrap();
        assert!(a.ratio > 0.0);
        assert!((a.ratio / b.ratio - 1.0).abs() < 1e-2, "{} {}", a.ratio, b.ratio);
    }

    #[test]
    fn sublinear_structure() {
        assert_eq!(PotentialSpec::sublinear(1.0, 1.5).structure_check().verdict, Verdict::Pass);
        assert!(PotentialSpec::sublinear(1.0, 2.5).validate().is_err());
    }

    #[test]
    fn suite_is_deterministic_and_supported() {
        let s = GrushinSpace::new(1, 1, 1.0).unwrap();
        let a = standard_suite(&s, 0.5, 7);
        assert_eq!(a, standard_suite(&s, 0.5, 7));
        assert_eq!(a.len(), 20);
        for f in &a {
            f.validate(&s, 0.5).unwrap();
        }
    }
}
