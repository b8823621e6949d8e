use criterion::{criterion_group, criterion_main, Criterion};
use grushin_core::carleman::{evaluate_batch, CarlemanCase, CarlemanKind, CarlemanQuad, TestFunction};
use grushin_core::operators::DegenerateOperator;
use grushin_core::par;
use grushin_core::quadrature::{PolarGrid, QuadratureGrid};
use grushin_core::GrushinSpace;

fn carleman_pass(c: &mut Criterion) {
    let op = DegenerateOperator::grushin(GrushinSpace::new(1, 1, 1.0).unwrap());
    let u = TestFunction::Radial { r_in: 0.2, r_out: 0.45, sharp: 4.0 };
    let cases: Vec<CarlemanCase> = [20.0, 40.0, 80.0, 160.0].iter().map(|&a| CarlemanCase::new(CarlemanKind::Est1, a)).collect();
    let quad = CarlemanQuad {
        polar: PolarGrid { angular: QuadratureGrid { z_cells: 16, char_refine: 1, ..Default::default() }, radial_panels: 32, radial_order: 4 },
        ..Default::default()
    };
    let mut g = c.benchmark_group("carleman_pass");
    g.sample_size(10);
    g.bench_function("parallel", |b| b.iter(|| evaluate_batch(&op, &cases, &u, &quad).unwrap()));
    g.bench_function("sequential", |b| b.iter(|| par::sequential_scope(|| evaluate_batch(&op, &cases, &u, &quad).unwrap())));
    g.finish();
}

criterion_group!(benches, carleman_pass);
criterion_main!(benches);
