use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use swgtoy_core::swg::{corner_pair, CropDenoisers};
use swgtoy_core::{
    euler_sample, posterior_weights, swg_negative, Dataset, DenoiserHandle, DenoiserSpec,
    GridShape, GuidanceRule, NoiseSchedule,
};

fn bench_posterior_weights(c: &mut Criterion) {
    let mut group = c.benchmark_group("posterior_weights");
    for &(n, dim) in &[(3, 2), (100, 2), (1000, 16)] {
        let spec = DenoiserSpec::optimal(Arc::new(
            Dataset::gaussian_cloud(n, dim, 1.0, 7).expect("cloud"),
        ));
        let x = vec![0.3; dim];
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("n{n}_d{dim}")),
            &x,
            |b, x| b.iter(|| posterior_weights(black_box(x), 0.5, &spec, None).unwrap()),
        );
    }
    group.finish();
}

fn bench_euler_sample(c: &mut Criterion) {
    let data = Arc::new(Dataset::triangle(1.0));
    let pos: DenoiserHandle = Arc::new(DenoiserSpec::error_prone(data.clone(), 0.1).unwrap());
    let neg: DenoiserHandle = Arc::new(DenoiserSpec::error_prone(data, 0.2).unwrap());
    let rule = GuidanceRule::single(pos, neg, 5.0).unwrap();
    let mut group = c.benchmark_group("euler_sample");
    for steps in [40, 160] {
        let schedule = NoiseSchedule::default_with_steps(steps);
        group.bench_with_input(
            BenchmarkId::new("triangle_wmg", steps),
            &schedule,
            |b, s| {
                let mut seed = 0u64;
                b.iter(|| {
                    seed += 1;
                    euler_sample(&rule, s, black_box(seed), None).unwrap()
                })
            },
        );
    }
    group.finish();
}

fn bench_swg_negative(c: &mut Criterion) {
    let mut group = c.benchmark_group("swg_negative");
    group.sample_size(20);
    for &(side, patch, k, n) in &[(8, 3, 5, 4), (64, 16, 40, 4)] {
        let shape = GridShape::square(side).unwrap();
        let data = Arc::new(corner_pair(shape, patch).unwrap());
        let base = DenoiserSpec::error_prone(data, 0.1).unwrap();
        let plan = swgtoy_core::plan_windows(shape, k, n).unwrap();
        let window = CropDenoisers::new(&base, &plan).unwrap();
        let x: Vec<f64> = (0..shape.dim())
            .map(|i| ((i % 7) as f64 - 3.0) * 0.1)
            .collect();
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("h{side}_k{k}_n{n}")),
            &x,
            |b, x| b.iter(|| swg_negative(&window, black_box(x), 0.5, &plan, None).unwrap()),
        );
    }
    group.finish();
}

criterion_group!(
    kernels,
    bench_posterior_weights,
    bench_euler_sample,
    bench_swg_negative
);
criterion_main!(kernels);
