use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use semtrans::autodiff::{ConvSpec, Graph};
use semtrans::geometry::{project_cloud_with, ProjectionConfig};
use semtrans::labels::colorize;
use semtrans::metrics::{swd_pyramid, SwdConfig};
use semtrans::pipeline::{generate_split, synth_scene, Split, SyntheticSceneConfig};
use semtrans::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn projection(c: &mut Criterion) {
    let cfg = SyntheticSceneConfig::default();
    let cloud = synth_scene(&cfg).unwrap().cloud;
    let lidar = ProjectionConfig::hdl64();
    let mut group = c.benchmark_group("project_cloud");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| project_cloud_with(exec, black_box(&cloud), &lidar).unwrap())
        });
    }
    group.finish();
}

fn convolution(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d_backward");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let g = Graph::<f32>::with_exec(exec);
                let x = g.variable(vec![0.5; 4 * 16 * 64 * 128], &[4, 16, 64, 128]).unwrap();
                let k = g.variable(vec![0.01; 16 * 16 * 9], &[16, 16, 3, 3]).unwrap();
                let y = x.conv2d(&k, ConvSpec::same(3, 2)).unwrap().sum_all();
                g.backward(&y).unwrap()
            })
        });
    }
    group.finish();
}

fn synthesis(c: &mut Criterion) {
    let cfg = SyntheticSceneConfig::desk();
    let mut group = c.benchmark_group("generate_split");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate_split(&cfg, 0, Split::Train, 8, exec).unwrap())
        });
    }
    group.finish();
}

fn sliced_wasserstein(c: &mut Criterion) {
    let samples = generate_split(&SyntheticSceneConfig::desk(), 0, Split::Val, 4, Exec::default()).unwrap();
    let a: Vec<_> = samples.iter().map(|s| colorize(&s.camera)).collect();
    let b: Vec<_> = a.iter().rev().cloned().collect();
    let cfg = SwdConfig { resolution: 128, ..SwdConfig::default() };
    let mut group = c.benchmark_group("swd_pyramid");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |bch| {
            bch.iter(|| swd_pyramid(&a, &b, &cfg, 0, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, projection, convolution, synthesis, sliced_wasserstein);
criterion_main!(benches);
