//! Single worker vs the full pool on the data-parallel stages. Build with
//! `--no-default-features` to time the sequential fallback instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use monolabel::cluster::double_cluster;
use monolabel::exec;
use monolabel::pipeline::{run_global_ba, simulate, PipelineConfig, SimConfig};
use monolabel::triangulate::reconstruct;

fn stages(c: &mut Criterion) {
    let cfg = PipelineConfig {
        sim: SimConfig { seed: 3, n_objects: 20, n_frames: 40, moving_fraction: 0.2, ..SimConfig::default() },
        ..PipelineConfig::default()
    };
    let scene = simulate(&cfg.sim).expect("scene");
    let rec = reconstruct(&scene.obs_tracks, &scene.frames, &cfg.ba);
    let pool = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut group = c.benchmark_group(if exec::is_parallel() { "rayon" } else { "sequential" });
    group.sample_size(10);
    for threads in [1, pool] {
        group.bench_with_input(BenchmarkId::new("reconstruct", threads), &threads, |b, &t| {
            b.iter(|| exec::with_threads(t, || reconstruct(&scene.obs_tracks, &scene.frames, &cfg.ba)))
        });
        group.bench_with_input(BenchmarkId::new("double_cluster", threads), &threads, |b, &t| {
            b.iter(|| exec::with_threads(t, || double_cluster(&rec.points, &scene.frames, &scene.tracks2d, &cfg.cluster)))
        });
        group.bench_with_input(BenchmarkId::new("run_global_ba", threads), &threads, |b, &t| {
            b.iter(|| exec::with_threads(t, || run_global_ba(&scene, &cfg)))
        });
        if pool == 1 {
            break;
        }
    }
    group.finish();
}

criterion_group!(benches, stages);
criterion_main!(benches);
