use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use ctlstop_bench::{drift_abs, put};
use ctlstop_core::hjb::{extract_policy, DEFAULT_STOP_TOLERANCE};
use ctlstop_core::strategy::evaluate;
use ctlstop_core::{
    simulate_uncontrolled, solve, solve_rbsde, sup_hamiltonian, unit_direction, Generator, RegressionOptions,
    SpaceTimeGrid, TimeGrid,
};

fn hamiltonian(c: &mut Criterion) {
    let spec = drift_abs(2);
    c.bench_function("sup_hamiltonian/d2_9_controls", |b| {
        b.iter(|| sup_hamiltonian(&spec, 0.3, black_box(&[0.4, -1.2]), black_box(&[0.7, 0.2])).unwrap())
    });
    let z = [0.3, -1.0, 2.0, 1e-3, -0.5];
    c.bench_function("unit_direction/d5", |b| b.iter(|| unit_direction(black_box(&z))));
}

fn pde(c: &mut Criterion) {
    let mut group = c.benchmark_group("pde_solve");
    group.sample_size(10);
    let spec = put();
    for nx in [101, 201, 401] {
        let grid = SpaceTimeGrid::with_cfl(&spec, nx, Generator::Sup).unwrap();
        group.bench_with_input(BenchmarkId::new("bachelier_put", nx), &grid, |b, g| {
            b.iter(|| solve(&spec, g, None).unwrap())
        });
    }
    let spec = drift_abs(2);
    let grid = SpaceTimeGrid::with_cfl(&spec, 41, Generator::Sup).unwrap();
    group.bench_function("controlled_drift_abs_d2/41", |b| b.iter(|| solve(&spec, &grid, None).unwrap()));
    group.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10);
    let spec = drift_abs(1);
    let tg = TimeGrid::new(0.0, 1.0, 50).unwrap();
    group.bench_function("simulate/1e4x50", |b| {
        b.iter(|| simulate_uncontrolled(&spec, 0.0, &spec.x0, tg, 10_000, 1).unwrap())
    });
    let batch = simulate_uncontrolled(&spec, 0.0, &spec.x0, tg, 10_000, 1).unwrap();
    let opts = RegressionOptions::default();
    group.bench_function("rbsde/1e4x50", |b| b.iter(|| solve_rbsde(&spec, &batch, &opts, None).unwrap()));

    let grid = SpaceTimeGrid::with_cfl(&spec, 201, Generator::Sup).unwrap();
    let field = solve(&spec, &grid, None).unwrap();
    let policy = extract_policy(&spec, &field, DEFAULT_STOP_TOLERANCE).unwrap();
    group.bench_function("evaluate_policy/1e4x50", |b| {
        b.iter(|| evaluate(&spec, &policy, 0.0, &spec.x0, tg, 10_000, 2).unwrap())
    });
    group.finish();
}

criterion_group!(benches, hamiltonian, pde, monte_carlo);
criterion_main!(benches);
