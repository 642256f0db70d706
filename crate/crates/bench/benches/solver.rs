use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use savch_bench::two_circle_state;
use savch_core::{sav_step, spectral_probe, Grid, PotentialSpec, SolverWorkspace};

fn bench_step(c: &mut Criterion) {
    let spec = PotentialSpec::default();
    let mut group = c.benchmark_group("sav_step");
    for n in [32, 64] {
        let ws = SolverWorkspace::new(Grid::unit_square(n).unwrap());
        let state = two_circle_state(n, 0.05, &spec);
        group.bench_with_input(BenchmarkId::from_parameter(n), &state, |b, s| {
            b.iter(|| sav_step(&ws, black_box(s), 1e-6, 0.05, &spec).unwrap())
        });
    }
    group.finish();
}

fn bench_transform(c: &mut Criterion) {
    let spec = PotentialSpec::default();
    let mut group = c.benchmark_group("cosine_transform");
    for n in [32, 64, 128] {
        let ws = SolverWorkspace::new(Grid::unit_square(n).unwrap());
        let u = two_circle_state(n, 0.05, &spec).u;
        group.bench_with_input(BenchmarkId::new("round_trip", n), &u, |b, u| {
            b.iter(|| ws.inverse(&ws.forward(black_box(u)).unwrap()).unwrap())
        });
    }
    group.finish();
}

fn bench_probe(c: &mut Criterion) {
    let spec = PotentialSpec::default();
    let n = 16;
    let ws = SolverWorkspace::new(Grid::unit_square(n).unwrap());
    let u = two_circle_state(n, 0.08, &spec).u;
    c.bench_function("spectral_probe/16", |b| {
        b.iter(|| spectral_probe(&ws, black_box(&u), 0.08, 1e-10, &spec).unwrap())
    });
}

criterion_group!(benches, bench_step, bench_transform, bench_probe);
criterion_main!(benches);
