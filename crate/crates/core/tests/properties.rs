use grushin_core::calculus::{gauge_jets, generator_apply};
use grushin_core::coefficients::{f_apply, ExampleFamily, Identity};
use grushin_core::field::{Angle, Gauge};
use grushin_core::geometry::{GrushinSpace, Point};
use grushin_core::suites::{identity_suite, COMMUTATOR_TOL};
use grushin_core::sparse::{bicgstab, pcg, CsrBuilder, SolverOptions};
use proptest::prelude::*;

fn space() -> impl Strategy<Value = GrushinSpace> {
    (prop::sample::select(vec![(1usize, 1usize), (2, 1), (2, 3)]), prop::sample::select(vec![0.5, 1.0, 2.0]))
        .prop_map(|((m, k), g)| GrushinSpace::new(m, k, g).unwrap())
}

/// A point with every z-coordinate at least 0.1 in size, so `psi > 0`.
fn point(s: &GrushinSpace) -> impl Strategy<Value = Point> {
    let (m, k) = (s.m(), s.k());
    (prop::collection::vec(prop_oneof![-1.0..-0.1, 0.1..1.0], m), prop::collection::vec(-1.0..1.0f64, k))
        .prop_map(|(z, t)| Point::new(&z, &t))
}

fn space_and_point() -> impl Strategy<Value = (GrushinSpace, Point)> {
    space().prop_flat_map(|s| (Just(s), point(&s)))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn gauge_is_homogeneous((s, p) in space_and_point(), lambda in 0.05..20.0f64) {
        let a = s.gauge_and_angle(&p).unwrap();
        let b = s.gauge_and_angle(&s.dilate(lambda, &p).unwrap()).unwrap();
        prop_assert!(rel(b.rho, lambda * a.rho) < 1e-12);
        prop_assert!((b.psi - a.psi).abs() < 1e-12);
    }

    #[test]
    fn angle_in_unit_interval((s, p) in space_and_point()) {
        let g = s.gauge_and_angle(&p).unwrap();
        prop_assert!(g.psi > 0.0 && g.psi <= 1.0);
        prop_assert!(g.rho > 0.0);
        let on_axis = Point::new(&vec![0.0; s.m()], p.t());
        prop_assert_eq!(s.gauge_and_angle(&on_axis).unwrap().psi, 0.0);
    }

    #[test]
    fn generator_identities((s, p) in space_and_point()) {
        let rho = s.rho(&p);
        prop_assert!(rel(generator_apply(&s, &Gauge, &p).unwrap(), rho) < 1e-10);
        prop_assert!(generator_apply(&s, &Angle, &p).unwrap().abs() < 1e-10);
    }

    #[test]
    fn gradient_norm_is_angle((s, p) in space_and_point()) {
        let j = gauge_jets(&s, &p).unwrap();
        let n: f64 = j.grad.iter().map(|x| x * x).sum();
        prop_assert!(rel(n, j.psi) < 1e-12);
    }

    #[test]
    fn radial_field_fixes_gauge(s in space(), z in 0.1..0.6f64, t in -0.3..0.3f64, f in -0.2..0.2f64) {
        // inside rho <= 1, where the example family stays elliptic
        let p = Point::new(&vec![z / (s.m() as f64).sqrt(); s.m()], &vec![t / s.k() as f64; s.k()]);
        prop_assume!(s.rho(&p) <= 1.0);
        let c = ExampleFamily::new(f, 0.1, 0.1);
        let v = f_apply(&c, &s, &Gauge, &p).unwrap();
        prop_assert!(rel(v, s.rho(&p)) < 1e-10);
    }

    #[test]
    fn solvers_agree_on_spd_systems(n in 3usize..40, off in prop::collection::vec(0.0..1.0f64, 40), rhs in prop::collection::vec(-1.0..1.0f64, 40)) {
        // symmetric tridiagonal, strictly diagonally dominant
        let mut b = CsrBuilder::new(n);
        for i in 0..n {
            let lo = if i > 0 { off[i - 1] } else { 0.0 };
            let hi = if i + 1 < n { off[i] } else { 0.0 };
            if i > 0 { b.push(i - 1, -lo); }
            b.push(i, lo + hi + 0.5);
            if i + 1 < n { b.push(i + 1, -hi); }
            b.finish_row();
        }
        let a = b.build().unwrap();
        let rhs = &rhs[..n];
        let opts = SolverOptions { tol: 1e-12, ..Default::default() };
        let mut x = vec![0.0; n];
        let mut y = vec![0.0; n];
        pcg(&a, rhs, &mut x, &opts).unwrap();
        bicgstab(&a, rhs, &mut y, &opts).unwrap();
        let scale = x.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            prop_assert!((x[i] - y[i]).abs() <= 1e-8 * scale);
        }
        let r = a.residual(&x, rhs);
        prop_assert!(r.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-10 * (1.0 + rhs.iter().map(|v| v * v).sum::<f64>().sqrt()));
    }

    #[test]
    fn generator_commutator(s in space(), seed in any::<u64>()) {
        // [X_l, Z] = X_l on smooth fields, at a few seeded points
        let (o, _) = identity_suite(&s, &Identity, 3, seed).unwrap();
        prop_assert!(o.commutator <= COMMUTATOR_TOL, "{}", o.commutator);
        prop_assert!(o.gradient_generator <= 1e-8);
    }
}
