use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ppk_bench::{critical_params, system};
use ppk_core::model::{build_hamiltonian, jump_operators};
use ppk_core::superop::{liouvillian, steady_state};
use ppk_core::wigner::{wigner, GridSpec};
use ppk_core::{CountingStatistics, MeasurementScheme};
use std::hint::black_box;

fn steady(c: &mut Criterion) {
    let p = critical_params();
    let mut group = c.benchmark_group("liouvillian_steady_state");
    group.sample_size(10);
    for dim in [20, 40, 60] {
        let h = build_hamiltonian(&p, dim).unwrap();
        let jumps = jump_operators(&p, dim).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(dim), &dim, |b, _| {
            b.iter(|| steady_state(&liouvillian(black_box(&h), &jumps).unwrap()).unwrap())
        });
    }
    group.finish();
}

fn diffusion(c: &mut Criterion) {
    let mut group = c.benchmark_group("drazin_diffusion");
    group.sample_size(10);
    for dim in [20, 40] {
        let sys = system(dim);
        for scheme in [MeasurementScheme::Photodetection, MeasurementScheme::homodyne()] {
            let stats = CountingStatistics::new(&sys, scheme).unwrap();
            group.bench_function(BenchmarkId::new(scheme.label(), dim), |b| {
                b.iter(|| stats.diffusion().unwrap())
            });
        }
    }
    group.finish();
}

fn wigner_grid(c: &mut Criterion) {
    let sys = system(48);
    let mut group = c.benchmark_group("wigner_grid");
    group.sample_size(10);
    for n in [81, 161] {
        let spec = GridSpec::for_params(&critical_params(), n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &spec, |b, spec| {
            b.iter(|| wigner(sys.rho_ss(), spec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, steady, diffusion, wigner_grid);
criterion_main!(benches);
