//! Seed sweep on one thread versus the rayon pool.
//!
//! Each iteration scores the HOD design over 16 seeds of a rings=2 grid.
//! Without the `parallel` feature both benchmarks run the same sequential
//! loop.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use hodsim::config::ScenarioConfig;
use hodsim::engine::Architecture;
use hodsim::metrics::score;
use hodsim::sweep::{map_seeds, map_seeds_sequential, run_seed};

fn sweep_config() -> ScenarioConfig {
    let mut c = ScenarioConfig::default();
    c.topology.rings = 2;
    c.topology.sensors_per_cell = 6;
    c.workload.windows = 10;
    c
}

fn bench_sweep(c: &mut Criterion) {
    let cfg = sweep_config();
    let seeds: Vec<u64> = (0..16).collect();
    let one = |s: u64| score(&run_seed(&cfg, s, Architecture::Hod).expect("valid scenario")).expect("ground truth").ids_control_message_count;

    let mut group = c.benchmark_group("seed_sweep_16");
    group.sample_size(10);
    group.bench_function("sequential", |b| b.iter(|| black_box(map_seeds_sequential(black_box(&seeds), one))));
    group.bench_function("parallel", |b| b.iter(|| black_box(map_seeds(black_box(&seeds), one))));
    group.finish();
}

criterion_group!(benches, bench_sweep);
criterion_main!(benches);
