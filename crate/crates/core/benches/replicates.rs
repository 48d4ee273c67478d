use std::hint::black_box;

use blockpower::matching::{greedy_matching, mahalanobis_distances, min_weight_perfect_matching};
use blockpower::par::with_threads;
use blockpower::sim::{build_design, count_rejections, design_kind, draw_covariates, draw_population, CellSpec};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn cell(two_n: usize, blocks: usize, ny: usize) -> CellSpec {
    CellSpec {
        two_n,
        blocks,
        p: 1,
        beta0: 0.0,
        beta_t: 0.7,
        beta: vec![1.0],
        ny,
        alpha: 0.05,
        seed: 1,
        design: design_kind(two_n, blocks, 1),
    }
}

/// One worker against the full pool on the same replicate loop.
fn replicate_loop(c: &mut Criterion) {
    let mut group = c.benchmark_group("count_rejections");
    group.sample_size(10);
    for &(two_n, blocks) in &[(96, 8), (384, 32)] {
        let spec = cell(two_n, blocks, 20_000);
        let pop = draw_population(&spec).unwrap();
        let bs = build_design(&spec, &pop.covariates).unwrap();
        group.throughput(Throughput::Elements(spec.ny as u64));
        for (label, threads) in [("sequential", 1), ("parallel", 0)] {
            group.bench_with_input(BenchmarkId::new(label, two_n), &spec, |b, spec| {
                b.iter(|| with_threads(threads, || count_rejections(black_box(spec), &pop.outcomes, &bs).unwrap()))
            });
        }
    }
    group.finish();
}

fn matching(c: &mut Criterion) {
    let mut group = c.benchmark_group("matching");
    group.sample_size(10);
    for &two_n in &[96, 384] {
        let d = mahalanobis_distances(&draw_covariates(two_n, 2, 3).unwrap()).unwrap();
        group.bench_with_input(BenchmarkId::new("blossom", two_n), &d, |b, d| {
            b.iter(|| min_weight_perfect_matching(black_box(d)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("greedy", two_n), &d, |b, d| {
            b.iter(|| greedy_matching(black_box(d)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, replicate_loop, matching);
criterion_main!(benches);
