use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use psolv_core::corpus::builtin;
use psolv_core::grid::DerivativeNorms;
use psolv_core::psi::{sign_partition, signed_distance_with};
use psolv_core::pseudo_sign::build_rho_with;
use psolv_core::quantization::{weyl_quantize_with, RefinedSymbol};
use psolv_core::weights::{build_H, build_m_with};
use psolv_core::{Exec, PhaseGrid, TimeGrid};

const POLICIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn pipeline(c: &mut Criterion) {
    let h = 0.1;
    let grid = PhaseGrid::dft_window(64, 24.0, h).unwrap();
    let time = TimeGrid::symmetric(1.0, 33).unwrap();
    let f = builtin("moving_front", h).unwrap().sample(time, grid).unwrap();
    let partition = sign_partition(&f, 0.0);
    let sd = signed_distance_with(Exec::Sequential, &partition);
    let norms = DerivativeNorms::of(&f).unwrap();
    let hinv = build_H(&norms.first, &norms.second, &sd.delta0, h).unwrap();
    let m = build_m_with(Exec::Sequential, &sd.delta0, &hinv).unwrap();
    let symbol = RefinedSymbol::from_real_nodes(grid, f.slice(20)).unwrap();

    let mut group = c.benchmark_group("exec");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_with_input(BenchmarkId::new("signed_distance", name), &exec, |b, &e| {
            b.iter(|| signed_distance_with(e, &partition))
        });
        group.bench_with_input(BenchmarkId::new("weight_m", name), &exec, |b, &e| {
            b.iter(|| build_m_with(e, &sd.delta0, &hinv).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("pseudo_sign", name), &exec, |b, &e| {
            b.iter(|| build_rho_with(e, &sd.delta0, &m, 1.0).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("weyl_64", name), &exec, |b, &e| {
            b.iter(|| weyl_quantize_with(e, &symbol))
        });
    }
    group.finish();
}

criterion_group!(benches, pipeline);
criterion_main!(benches);
