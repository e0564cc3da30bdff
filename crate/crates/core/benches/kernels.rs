//! Kernels timed once inside a single-thread rayon pool and once on the
//! global pool. Build with `--no-default-features` for the purely
//! sequential code path.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mvgsl::gcn::{self, GcnConfig, Supervision};
use mvgsl::graph::{self, AdjacencyMatrix};
use mvgsl::linalg::eig_sym_smallest;
use mvgsl::merge::{self, MergeConfig};
use mvgsl::synth::{self, SynthConfig};
use mvgsl::DenseMatrix;

fn random_graph(n: usize, p: f64, seed: u64) -> AdjacencyMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < p {
                edges.push((i, j, rng.gen_range(0.1..1.0)));
            }
        }
    }
    AdjacencyMatrix::from_undirected_edges(n, &edges).unwrap()
}

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let all = rayon::current_num_threads();
    vec![
        ("1-thread", rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("all-threads", rayon::ThreadPoolBuilder::new().num_threads(all).build().unwrap()),
    ]
}

fn kernels(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = DenseMatrix::from_fn(256, 256, |_, _| rng.gen_range(-1.0..1.0));
    let b = DenseMatrix::from_fn(256, 128, |_, _| rng.gen_range(-1.0..1.0));
    let l = graph::normalized_laplacian(&random_graph(200, 0.05, 2)).unwrap().values;
    let views: Vec<_> = (0..3).map(|s| random_graph(200, 0.05, 10 + s)).collect();
    let merge_cfg = MergeConfig {
        alpha: 0.4,
        p: 20,
        k: 10,
        ..MergeConfig::for_classes(2)
    };
    let s = synth::generate(&SynthConfig { n: 600, ..SynthConfig::default() }).unwrap();
    let ds = s.dataset.with_row_normalized_features();
    let sup = Supervision::from_dataset(&ds);
    let prop = gcn::propagation_matrix(&s.graph);
    let gcn_cfg = GcnConfig {
        max_epochs: 10,
        stop_window: 0,
        ..GcnConfig::default()
    };

    let mut group = c.benchmark_group("kernels");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new("matmul_256", name), |bch| {
            pool.install(|| bch.iter(|| black_box(a.matmul(&b).unwrap())))
        });
        group.bench_function(BenchmarkId::new("eig_sym_smallest_200_p20", name), |bch| {
            pool.install(|| bch.iter(|| black_box(eig_sym_smallest(&l, 20).unwrap())))
        });
        group.bench_function(BenchmarkId::new("merge_graphs_3x200", name), |bch| {
            pool.install(|| bch.iter(|| black_box(merge::merge_graphs(&views, &merge_cfg).unwrap())))
        });
        group.bench_function(BenchmarkId::new("gcn_10_epochs_600", name), |bch| {
            pool.install(|| {
                bch.iter(|| black_box(gcn::train_gcn(&prop, &ds.features, ds.num_classes(), &sup, &gcn_cfg, 0).unwrap()))
            })
        });
    }
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
