use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use ppr_bench::{data2d_net, gaussian_cloud, grf};
use ppr_core::datagen::{ks_solve, KsParams};
use ppr_core::metrics::{sinkhorn_divergence, SinkhornParams};
use ppr_core::projection::{project, LambdaSchedule, ProjectionConfig};
use ppr_core::rng;

fn denoise(c: &mut Criterion) {
    let net = data2d_net();
    let mut group = c.benchmark_group("denoise_batch");
    for n in [64usize, 1024] {
        let x = gaussian_cloud(n, 2, 3);
        group.bench_with_input(BenchmarkId::from_parameter(n), &x, |b, x| {
            b.iter(|| net.denoise_batch(black_box(x.as_slice()), 0.5).unwrap())
        });
    }
    group.finish();
}

fn projection(c: &mut Criterion) {
    let net = data2d_net();
    let constraint = grf();
    let cfg = ProjectionConfig {
        lambda: LambdaSchedule::Data2d,
        ..ProjectionConfig::default()
    };
    let x = rng::normal_vec(&mut rng::seeded(4), 2);
    c.bench_function("project_grf_8_iters", |b| {
        b.iter(|| project(&net, &constraint, black_box(&x), 0.5, 0.05, &cfg).unwrap())
    });
}

fn sinkhorn(c: &mut Criterion) {
    let a = gaussian_cloud(512, 2, 5);
    let b = gaussian_cloud(512, 2, 6);
    let params = SinkhornParams {
        max_iters: 500,
        ..SinkhornParams::default()
    };
    c.bench_function("sinkhorn_512", |bench| {
        bench.iter(|| sinkhorn_divergence(black_box(&a), black_box(&b), &params).unwrap())
    });
}

fn ks_steps(c: &mut Criterion) {
    let params = KsParams {
        steps: 10,
        ..KsParams::default()
    };
    let x: Vec<f64> = (0..params.grid)
        .map(|j| (2.0 * std::f64::consts::PI * j as f64 / params.grid as f64).cos())
        .collect();
    c.bench_function("ks_solve_10_steps", |b| b.iter(|| ks_solve(black_box(&x), &params).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = denoise, projection, sinkhorn, ks_steps
}
criterion_main!(benches);
