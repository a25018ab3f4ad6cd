use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fgf_bench::{moments, noise_magnitude};
use fgf_core::oracle::{default_grids, joint_density_grid};
use fgf_core::quad::DEFAULT_MC_SAMPLES;
use fgf_core::{
    fgf_solve, filter_step, make_monomial_feature, predict, BuiltinModel, ExpectationEngine,
};
use std::hint::black_box;

fn engines() -> [(&'static str, ExpectationEngine); 2] {
    [
        ("sigma_point", ExpectationEngine::sigma_point(0.0).unwrap()),
        (
            "monte_carlo",
            ExpectationEngine::monte_carlo(DEFAULT_MC_SAMPLES, 0).unwrap(),
        ),
    ]
}

fn bench_predict(c: &mut Criterion) {
    let s = noise_magnitude();
    let mut group = c.benchmark_group("predict");
    for (name, engine) in engines() {
        group.bench_function(name, |b| {
            b.iter(|| predict(black_box(&s.prior), &s.model, &engine).unwrap())
        });
    }
    group.finish();
}

fn bench_step(c: &mut Criterion) {
    let s = noise_magnitude();
    let mut group = c.benchmark_group("filter_step");
    for (name, engine) in engines() {
        for order in [1, 2, 3] {
            let feature = make_monomial_feature(1, order).unwrap();
            group.bench_with_input(BenchmarkId::new(name, order), &order, |b, _| {
                b.iter(|| {
                    filter_step(
                        black_box(&s.prior),
                        &s.model,
                        &feature,
                        &engine,
                        &s.measurement,
                        0,
                    )
                    .unwrap()
                })
            });
        }
    }
    group.finish();
}

fn bench_solve(c: &mut Criterion) {
    let engine = ExpectationEngine::monte_carlo(DEFAULT_MC_SAMPLES, 0).unwrap();
    let mut group = c.benchmark_group("fgf_solve");
    for order in [1, 2, 3, 5] {
        let m = moments(order, &engine);
        group.bench_with_input(BenchmarkId::from_parameter(order), &m, |b, m| {
            b.iter(|| fgf_solve(black_box(m)).unwrap())
        });
    }
    group.finish();
}

fn bench_grid(c: &mut Criterion) {
    let mut group = c.benchmark_group("joint_density_grid");
    group.sample_size(10);
    for name in BuiltinModel::NAMES {
        let model = BuiltinModel::from_name(name).unwrap();
        let (ssm, prior) = model.build().unwrap();
        for n in [201, 801] {
            let (xg, yg) = default_grids(&model, &prior, n).unwrap();
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                b.iter(|| joint_density_grid(&ssm, &prior, xg, yg).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_predict, bench_step, bench_solve, bench_grid);
criterion_main!(benches);
