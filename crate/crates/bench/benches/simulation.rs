//! Throughput benchmarks: topology construction, piece making, and full
//! model runs on a small swarm.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use distsim_core::chunking::{make_pieces, synth_file_bytes};
use distsim_core::protocols::{run_model, Model, RunConfig};
use distsim_core::topology::{
    build_paper_topology, compute_routes, random_topology, RandomTopologyParams,
};

fn bench_topology(c: &mut Criterion) {
    c.bench_function("build_paper_topology_with_routes", |b| {
        b.iter(|| {
            let topo = build_paper_topology();
            compute_routes(&topo)
        })
    });
}

fn bench_chunking(c: &mut Criterion) {
    let bytes = synth_file_bytes(1, 4 << 20);
    c.bench_function("make_pieces_4mib_256k", |b| {
        b.iter(|| make_pieces("f", &bytes, 256 * 1024).unwrap())
    });
}

fn bench_models(c: &mut Criterion) {
    let topo = Arc::new(random_topology(1, &RandomTopologyParams::default()));
    let mut group = c.benchmark_group("small_run");
    group.sample_size(10);
    for model in [Model::Www, Model::P2p, Model::Hybrid] {
        group.bench_function(model.as_str(), |b| {
            b.iter_batched(
                || {
                    let mut cfg = RunConfig::new(model, 7);
                    cfg.file_size = 64 * 1024;
                    cfg.piece_size = 16 * 1024;
                    cfg
                },
                |cfg| run_model(&topo, &cfg),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

fn bench_paper_scale(c: &mut Criterion) {
    let topo = Arc::new(build_paper_topology());
    let mut group = c.benchmark_group("study_run");
    group.sample_size(10);
    group.bench_function("hybrid_1mib_36_clients", |b| {
        b.iter_batched(
            || RunConfig::new(Model::Hybrid, 3),
            |cfg| run_model(&topo, &cfg),
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_topology,
    bench_chunking,
    bench_models,
    bench_paper_scale
);
criterion_main!(benches);
