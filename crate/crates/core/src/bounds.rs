//! Numeric bound suite: for each pointwise estimate on `mu, sigma, F, B` and
//! the gauge derivatives, the sup over a sample cloud of `lhs / majorant`.
//! An estimate passes when the sup is finite and grows by at most 10% when
//! the cloud is doubled.

use serde::{Deserialize, Serialize};

use crate::coefficients::{frame_data, hypothesis_ratios_at, mu_gradient, CoefficientField, FrameData, HypothesisRatios};
use crate::error::Result;
use crate::fd::{fd_jacobian, StepRule};
use crate::field::{smooth_test_field, ScalarField};
use crate::fit::log_log_fit;
use crate::geometry::{GrushinSpace, Point};
use crate::linalg::{norm, zeros, Matrix, Vector};
use crate::par;
use crate::quad::gauge_and_angle_quad;
use crate::report::{anchors, CheckRecord, Verdict, VerificationReport};
use crate::sampling::{halton_cloud, SampleSpec};

/// Growth allowed between the base cloud and the doubled cloud.
pub const STABILITY_TOL: f64 = 0.10;
/// Sups below this are treated as identically zero (FD resolution).
pub const ZERO_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Item {
    pub name: &'static str,
    pub anchor: &'static str,
}

const fn item(name: &'static str, anchor: &'static str) -> Item {
    Item { name, anchor }
}

pub const ITEMS: &[Item] = &[
    item("div-f-deviation", anchors::STRUCTURE),
    item("f-of-mu", anchors::STRUCTURE),
    item("f-of-psi", anchors::STRUCTURE),
    item("div-sigma-z-over-mu", anchors::STRUCTURE),
    item("x-rho-z-bound", anchors::STRUCTURE),
    item("x-rho-t-bound", anchors::STRUCTURE),
    item("f-minus-z", anchors::STRUCTURE),
    item("f-of-a-norm", anchors::STRUCTURE),
    item("commutator-f", anchors::STRUCTURE),
    item("sigma-size", anchors::STRUCTURE),
    item("x-sigma-size", anchors::STRUCTURE),
    item("b-field-over-mu", anchors::STRUCTURE),
    item("x-psi-z", anchors::STRUCTURE),
    item("x-psi-t", anchors::STRUCTURE),
    item("sigma-over-mu", anchors::STRUCTURE),
    item("z-sigma", anchors::STRUCTURE),
    item("commutator-sigma-z", anchors::STRUCTURE),
    item("commutator-b-field", anchors::STRUCTURE),
    item("x-b-x-rho-over-psi", anchors::PERTURBATION_BOUNDS),
    item("sum-x-b-x-rho-over-mu", anchors::PERTURBATION_BOUNDS),
    item("sum-b-xx-rho-over-mu", anchors::PERTURBATION_BOUNDS),
    item("b-x-rho-over-mu-power", anchors::PERTURBATION_BOUNDS),
    item("f-of-b-xx-rho", anchors::THIRD_BOUND),
    item("second-like-blocks", anchors::SECOND_BOUNDS),
    item("second-mixed-z-then-t", anchors::SECOND_BOUNDS),
    item("second-mixed-t-then-z", anchors::SECOND_BOUNDS),
    item("f-rho-minus-rho", anchors::MU_SIGMA_F),
    item("mu-over-psi-max", anchors::MU_SIGMA_F),
    item("psi-over-mu-max", anchors::MU_SIGMA_F),
];

/// Ratios at one point, in [`ITEMS`] order.
pub fn ratios_at(coeff: &dyn CoefficientField, space: &GrushinSpace, p: &Point) -> Result<Vec<f64>> {
    let fd = frame_data(coeff, space, p)?;
    let (m, n) = (space.m(), space.dim());
    let g = space.gamma();
    let q = space.homogeneous_dimension();
    let d = &fd.derived;
    let (rho, psi, mu, sigma) = (d.rho, d.psi, d.mu, d.sigma);
    let zn = fd.jets.z_norm;
    let xr = &fd.jets.grad;
    let b = coeff.perturbation(space, p);
    let db: Vec<Matrix> = (0..n).map(|l| coeff.x_derivative(space, l, p)).collect::<Result<_>>()?;

    // Frame coefficients of F, -sigma Z / mu and (rho/mu) B X rho, differentiated together.
    let fields = |q: &Point| -> Result<Vector> {
        let f = frame_data(coeff, space, q)?;
        Ok(stacked_fields(space, coeff, q, &f))
    };
    let (jac, _) = fd_jacobian(space, &fields, p, &StepRule::default())?;
    let stacked = stacked_fields(space, coeff, p, &fd);
    let jsub = |blk: usize| Matrix::from_fn(n, |j, k| jac[(j, blk * n + k)]);
    let (jf, jw, jb) = (jsub(0), jsub(1), jsub(2));
    let (cf, cw, cb) = (&stacked[..n], &stacked[n..2 * n], &stacked[2 * n..]);

    let z_frame: Vector = xr.iter().map(|x| rho / psi * x).collect();
    let dmu = mu_gradient(coeff, space, &fd, p)?;
    let dsigma: Vector = (0..n)
        .map(|j| {
            let hrow: Vector = (0..n).map(|c| fd.jets.hess[(j, c)]).collect();
            db[j].quad_form(xr, xr) + 2.0 * b.quad_form(xr, &hrow)
        })
        .collect();
    let dot = |a: &[f64], c: &[f64]| a.iter().zip(c).map(|(x, y)| x * y).sum::<f64>();

    let div_f: f64 = (0..n).map(|k| jf[(k, k)]).sum();
    let div_w: f64 = -(0..n).map(|k| jw[(k, k)]).sum::<f64>();
    let f_mu = dot(cf, &dmu);
    let f_psi = dot(cf, &fd.jets.psi_grad);
    let xrz = (0..m).map(|i| xr[i].abs()).fold(0.0, f64::max) / psi.powf(1.0 + 0.5 / g);
    let xrt = (m..n).map(|i| xr[i].abs()).fold(0.0, f64::max) / ((g + 1.0) * psi.sqrt());
    let f_minus_z = norm(&cf.iter().zip(&z_frame).map(|(a, c)| a - c).collect::<Vector>());
    let mut fa = Matrix::zeros(n);
    for (k, dk) in db.iter().enumerate() {
        fa = fa.add(&dk.scale(cf[k]));
    }
    let bxr = b.mul_vec(xr);

    let mut comm = [0.0f64; 3];
    for idx in 0..5 {
        let u = smooth_test_field(idx);
        let Some(ju) = u.jet(space, p) else { continue };
        let gu = norm(&ju.grad);
        if gu < 1e-12 {
            continue;
        }
        for (slot, (jm, c, sub_self)) in [(&jf, cf, true), (&jw, cw, false), (&jb, cb, false)].into_iter().enumerate() {
            for i in 0..n {
                let mut v = 0.0;
                for k in 0..n {
                    v += jm[(i, k)] * ju.grad[k] + c[k] * (ju.hess[(i, k)] - ju.hess[(k, i)]);
                }
                if sub_self {
                    v -= ju.grad[i];
                }
                comm[slot] = comm[slot].max(v.abs() / (rho * gu));
            }
        }
    }

    let mut x_b_x_rho = 0.0f64;
    for (l, dl) in db.iter().enumerate() {
        let _ = l;
        for j in 0..n {
            let s: f64 = (0..n).map(|i| dl[(i, j)] * xr[i]).sum();
            x_b_x_rho = x_b_x_rho.max(s.abs());
        }
    }
    let sum_xb: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| (db[i][(i, j)] * xr[j]).abs()).sum();
    let sum_bh: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| (b[(i, j)] * fd.jets.hess[(i, j)]).abs()).sum();
    let b_power = bxr.iter().fold(0.0f64, |a, x| a.max(x.abs())) / (rho * mu.powf(1.0 + 0.5 / g));

    let mut f_bh = 0.0;
    for (qq, fq) in cf.iter().enumerate() {
        if *fq == 0.0 {
            continue;
        }
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += db[qq][(i, j)] * fd.jets.hess[(i, j)];
                if b[(i, j)] != 0.0 {
                    s += b[(i, j)] * fd.jets.third(qq, i, j);
                }
            }
        }
        f_bh += fq * s;
    }

    let mut like = 0.0f64;
    let mut zt = 0.0f64;
    let mut tz = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let h = fd.jets.hess[(i, j)].abs();
            match (i < m, j < m) {
                (true, true) | (false, false) => like = like.max(h * rho / mu),
                (true, false) => zt = zt.max(h * rho / mu.powf(0.5 - 0.5 / g)),
                (false, true) => tz = tz.max(h * rho / mu.powf(1.5 + 0.5 / g)),
            }
        }
    }
    let f_rho: f64 = dot(cf, xr);

    let xpsi_z = (0..m).map(|i| fd.jets.psi_grad[i].abs()).fold(0.0, f64::max) * zn / (g * psi);
    let xpsi_t = (m..n).map(|i| fd.jets.psi_grad[i].abs()).fold(0.0, f64::max) * rho / (g * psi);

    Ok(vec![
        (q - div_f).abs() / rho,
        f_mu.abs() / (rho * psi),
        f_psi.abs() / (rho * psi),
        div_w.max(0.0) / rho,
        xrz,
        if n > m { xrt } else { 0.0 },
        f_minus_z / (rho * rho),
        fa.spectral_norm() / rho,
        comm[0],
        sigma.abs() / (rho * psi.powf(1.5 + 0.5 / g)),
        norm(&dsigma) / psi.powf(1.5),
        norm(&bxr) / (mu * zn),
        xpsi_z,
        if n > m { xpsi_t } else { 0.0 },
        (sigma / mu).abs() / (rho * psi),
        dot(&z_frame, &dsigma).abs() / (rho * psi),
        comm[1],
        comm[2],
        x_b_x_rho / psi,
        sum_xb / mu,
        sum_bh / mu,
        b_power,
        f_bh.abs() / psi,
        like,
        zt,
        tz,
        (f_rho - rho).abs() / rho,
        mu / psi,
        psi / mu,
    ])
}

fn stacked_fields(space: &GrushinSpace, coeff: &dyn CoefficientField, p: &Point, f: &FrameData) -> Vector {
    let n = space.dim();
    let d = &f.derived;
    let b = coeff.perturbation(space, p);
    let bxr = b.mul_vec(&f.jets.grad);
    let mut out = zeros(3 * n);
    for k in 0..n {
        out[k] = d.f_coeffs[k];
        out[n + k] = -(d.sigma / d.mu) * (d.rho / d.psi) * f.jets.grad[k];
        out[2 * n + k] = d.rho / d.mu * bxr[k];
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ItemSup {
    pub name: String,
    pub sup_base: f64,
    pub sup_doubled: f64,
    pub growth: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteOutcome {
    pub items: Vec<ItemSup>,
    pub skipped: usize,
    pub evaluated: usize,
    pub report: VerificationReport,
}

/// Runs every item on `spec.count` points and on `2 spec.count` points (the
/// smaller cloud is a prefix of the larger one).
pub fn bound_suite(coeff: &dyn CoefficientField, space: &GrushinSpace, spec: &SampleSpec) -> Result<SuiteOutcome> {
    let big = halton_cloud(space, &spec.with_count(2 * spec.count))?;
    let rows = par::map_slice(&big, |p| ratios_at(coeff, space, p).ok());
    let k = ITEMS.len();
    let sup_over = |upto: usize| -> Vec<f64> {
        let mut s = vec![0.0f64; k];
        for r in rows[..upto].iter().flatten() {
            for (a, v) in s.iter_mut().zip(r) {
                *a = if v.is_nan() { f64::INFINITY } else { a.max(*v) };
            }
        }
        s
    };
    let base = sup_over(spec.count);
    let dbl = sup_over(big.len());
    let skipped = rows.iter().filter(|r| r.is_none()).count();
    let mut report = VerificationReport::new();
    let mut items = Vec::with_capacity(k);
    for (i, it) in ITEMS.iter().enumerate() {
        let (a, b) = (base[i], dbl[i]);
        let growth = if b <= ZERO_FLOOR { 0.0 } else { (b - a) / a.max(f64::MIN_POSITIVE) };
        let passed = a.is_finite() && b.is_finite() && growth <= STABILITY_TOL;
        let mut rec = CheckRecord::new(format!("bounds/{}", it.name), it.anchor, Verdict::from_bool(passed))
            .value("sup_ratio", a)
            .value("sup_ratio_doubled", b)
            .value("growth", growth)
            .tol(STABILITY_TOL)
            .archive("sup_ratio_doubled", 0.10);
        if b <= ZERO_FLOOR {
            rec = rec.note("vanishes to finite-difference resolution");
        }
        report.push(rec);
        items.push(ItemSup { name: it.name.to_string(), sup_base: a, sup_doubled: b, growth, passed });
    }
    // 128-bit recomputation of the gauge and angle on a subsample
    let mut worst = 0.0f64;
    for p in big.iter().step_by((big.len() / 100).max(1)).take(100) {
        let ga = space.gauge_unchecked(p);
        let (r, s) = gauge_and_angle_quad(space, p);
        worst = worst.max(((ga.rho - r) / r).abs()).max(((ga.psi - s) / s).abs());
    }
    report.push(
        CheckRecord::new("bounds/quad-precision-recompute", anchors::GAUGE_AND_ANGLE, Verdict::from_bool(worst <= 1e-12))
            .value("max_relative_deviation", worst)
            .tol(1e-12),
    );
    report.push(
        CheckRecord::new("bounds/skipped-samples", anchors::STRUCTURE, Verdict::Diagnostic)
            .value("skipped", skipped as f64)
            .value("evaluated", (big.len() - skipped) as f64),
    );
    Ok(SuiteOutcome { items, skipped, evaluated: big.len() - skipped, report })
}

/// Worst structural ratios over the cloud, the implied minimal `Lambda`,
/// and a divergence diagnostic (log-log slope of the binned sup of
/// `|b_11|/rho` against `rho`).
pub fn hypothesis_check(coeff: &dyn CoefficientField, space: &GrushinSpace, spec: &SampleSpec) -> Result<(HypothesisRatios, VerificationReport)> {
    let cloud = halton_cloud(space, spec)?;
    let rows = par::map_slice(&cloud, |p| hypothesis_ratios_at(coeff, space, p).ok().map(|r| (space.rho(p), r)));
    let mut worst = HypothesisRatios::default();
    let bins = 8;
    let (l0, l1) = (spec.rho_min.ln(), spec.rho_max.ln());
    let mut binned = vec![0.0f64; bins];
    for (rho, r) in rows.iter().flatten() {
        worst = worst.merge(r);
        let bi = (((rho.ln() - l0) / (l1 - l0)) * bins as f64).floor().clamp(0.0, bins as f64 - 1.0) as usize;
        binned[bi] = binned[bi].max(r.minimal_lambda());
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = (0..bins)
        .filter(|&i| binned[i] > 0.0)
        .map(|i| (((l0 + (i as f64 + 0.5) * (l1 - l0) / bins as f64).exp()), binned[i]))
        .unzip();
    let slope = if xs.len() >= 3 { log_log_fit(&xs, &ys).slope } else { 0.0 };
    let diverging = slope < -0.25;
    let min_lambda = worst.minimal_lambda();
    let declared = coeff.structural();
    let passed = min_lambda <= declared && !diverging && min_lambda.is_finite();
    let mut rep = VerificationReport::new();
    rep.push(
        CheckRecord::new(format!("hypothesis/{}", coeff.name()), anchors::HYPOTHESIS, Verdict::from_bool(passed))
            .value("b_upper_left_over_rho", worst.b_upper_left)
            .value("b_other_over_scale", worst.b_other)
            .value("xb_z_upper_left", worst.xb_z_upper_left)
            .value("xb_t_mixed_over_scale", worst.xb_t_mixed)
            .value("xb_other_over_sqrt_psi", worst.xb_other)
            .value("minimal_lambda", min_lambda)
            .value("declared_lambda", declared)
            .value("small_rho_slope", slope)
            .tol(declared),
    );
    Ok((worst, rep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{ExampleFamily, Identity, SqrtViolation};

    #[test]
    fn identity_items_vanish() {
        let s = GrushinSpace::new(1, 1, 1.0).unwrap();
        let p = Point::new(&[0.3], &[0.2]);
        let r = ratios_at(&Identity, &s, &p).unwrap();
        let idx = |name: &str| ITEMS.iter().position(|i| i.name == name).unwrap();
        assert!(r[idx("div-f-deviation")] < 1e-6);
        assert!(r[idx("f-of-b-xx-rho")] == 0.0);
        assert!(r[idx("sigma-size")] == 0.0);
        assert!((r[idx("mu-over-psi-max")] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn hypothesis_examples() {
        let s = GrushinSpace::new(1, 1, 1.0).unwrap();
        let spec = SampleSpec::new(400);
        let (w, rep) = hypothesis_check(&Identity, &s, &spec).unwrap();
        assert_eq!(w.minimal_lambda(), 0.0);
        assert!(rep.all_passed());
        let (w, _) = hypothesis_check(&ExampleFamily::new(0.25, 0.1, 0.1), &s, &spec).unwrap();
        assert!((w.b_upper_left - 0.25).abs() < 1e-12);
        let (_, rep) = hypothesis_check(&SqrtViolation { c: 0.5, big_lambda: 2.0 }, &s, &spec).unwrap();
        assert!(!rep.all_passed());
    }
}
