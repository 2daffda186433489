use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use abcd_core::blocking::BlockingPlan;
use abcd_core::detect::{abcd_detect, BlockRetention, DetectConfig};
use abcd_core::series::{SeriesTensor, Shape};
use abcd_core::simgraph::{k_mst, pairwise_distances, Metric};
use abcd_core::simlab::{generate, ChangeKind, ChangeSpec, MeanMagnitude, NoiseSpec};

fn bench_series(n: usize, d: usize) -> SeriesTensor {
    let change = ChangeSpec::prefix_1d(
        n / 2,
        d,
        d / 10,
        1.0,
        ChangeKind::Mean(MeanMagnitude::TotalL2(2.0)),
    )
    .unwrap();
    generate(n, Shape::OneD(d), &change, &NoiseSpec::Gaussian, 42).unwrap()
}

fn modes() -> Vec<(&'static str, bool)> {
    if cfg!(feature = "parallel") {
        vec![("sequential", false), ("parallel", true)]
    } else {
        vec![("sequential", false)]
    }
}

fn bench_detect(c: &mut Criterion) {
    let series = bench_series(100, 120);
    let plan = BlockingPlan::parse("1,4,10", series.shape()).unwrap();
    let mut group = c.benchmark_group("abcd_detect_u100");
    group.sample_size(10);
    for (label, parallel) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(label), &parallel, |b, &par| {
            let mut cfg = DetectConfig::new(plan.clone());
            cfg.graph.k = 20;
            cfg.permutations = 100;
            cfg.seed = 7;
            cfg.retention = BlockRetention::None;
            cfg.parallel = par;
            b.iter(|| abcd_detect(&series, &cfg).unwrap());
        });
    }
    group.finish();
}

fn bench_block_graphs(c: &mut Criterion) {
    let series = bench_series(150, 200);
    let plan = BlockingPlan::parse("1,4,10,20", series.shape()).unwrap();
    let mut group = c.benchmark_group("block_graph_build");
    group.sample_size(10);
    for (label, parallel) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(label), &parallel, |b, &par| {
            let mut cfg = DetectConfig::new(plan.clone());
            cfg.graph.k = 30;
            cfg.permutations = 0;
            cfg.retention = BlockRetention::None;
            cfg.parallel = par;
            b.iter(|| abcd_detect(&series, &cfg).unwrap());
        });
    }
    group.finish();
}

fn bench_distances_and_kmst(c: &mut Criterion) {
    let series = bench_series(300, 100);
    let mut group = c.benchmark_group("graph_primitives");
    group.sample_size(10);
    group.bench_function("pairwise_distances_n300_d100", |b| {
        b.iter(|| pairwise_distances(&series, Metric::L2).unwrap());
    });
    let dist = pairwise_distances(&series, Metric::L2).unwrap();
    group.bench_function("k_mst_k40_n300", |b| {
        b.iter(|| k_mst(&dist, 40).unwrap());
    });
    group.finish();
}

criterion_group!(benches, bench_detect, bench_block_graphs, bench_distances_and_kmst);
criterion_main!(benches);
