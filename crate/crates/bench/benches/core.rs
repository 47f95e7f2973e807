use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fleet_bench::DeskFixture;
use fleet_core::assign::SamplingScope;
use fleet_core::events::spectral_cluster;
use fleet_core::policy::{auction_square, BasePolicy, RolloutConfig, RolloutPolicy};
use fleet_core::predict::Mlp;
use fleet_core::rng::rng_from;
use fleet_core::sim::Policy;
use fleet_core::CityGraph;
use rand::Rng;
use std::hint::black_box;

fn graphs(c: &mut Criterion) {
    let mut group = c.benchmark_group("all_pairs");
    for side in [10, 20, 40] {
        group.bench_with_input(BenchmarkId::from_parameter(side * side), &side, |b, &side| {
            b.iter(|| CityGraph::grid(side, side, 2, 3).unwrap());
        });
    }
    group.finish();
}

fn auction(c: &mut Criterion) {
    let mut group = c.benchmark_group("auction");
    for n in [8, 32, 100] {
        let mut rng = rng_from(n as u64, &[]);
        let cost: Vec<Vec<i64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(0..1000)).collect()).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &cost, |b, cost| b.iter(|| auction_square(cost).unwrap()));
    }
    group.finish();
}

fn planners(c: &mut Criterion) {
    let fx = DeskFixture::new(20);
    let g = fx.graph();
    c.bench_function("greedy_decide", |b| b.iter(|| BasePolicy::Greedy.controls(black_box(&fx.state), g)));
    c.bench_function("instant_assign_decide", |b| b.iter(|| BasePolicy::InstantAssign.controls(black_box(&fx.state), g)));
    let mut group = c.benchmark_group("rollout_decide");
    group.sample_size(20);
    for scope in [SamplingScope::Local, SamplingScope::FullMap] {
        let cfg = RolloutConfig { sampling_scope: scope, scenarios: 20, ..fx.cfg.rollout.clone() };
        let mut policy = RolloutPolicy::new(cfg, fx.models.clone()).unwrap();
        group.bench_function(format!("{scope:?}"), |b| b.iter(|| policy.decide(black_box(&fx.state), g).unwrap()));
    }
    group.finish();
}

fn learning(c: &mut Criterion) {
    let net = Mlp::with_hidden(51, &[32, 32], 0).unwrap();
    let x = vec![0.5; 51];
    c.bench_function("mlp_forward_32x32", |b| b.iter(|| net.forward(black_box(&x)).unwrap()));
    let batch: Vec<(&[f64], f64)> = (0..64).map(|_| (x.as_slice(), 3.0)).collect();
    let mut grad = vec![0.0; net.params().len()];
    c.bench_function("mlp_batch64_gradient", |b| b.iter(|| net.loss_and_grad(black_box(&batch), &mut grad)));

    let mut rng = rng_from(9, &[]);
    let points: Vec<Vec<f64>> = (0..60).map(|k| (0..16).map(|i| if i == k % 3 { 2.0 } else { 0.0 } + 0.1 * rng.random::<f64>()).collect()).collect();
    c.bench_function("spectral_cluster_60x16", |b| b.iter(|| spectral_cluster(black_box(&points), 3, 1.0, 0).unwrap()));
}

criterion_group!(benches, graphs, auction, planners, learning);
criterion_main!(benches);
