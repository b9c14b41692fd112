use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rewire::neurons::{AlifLayer, AlifParams};
use rewire::plasticity::{Eligibility, EpropCoeffs};
use rewire::ragged::RaggedMatrix;
use rewire::topomap::{TopomapModel, TopomapParams};
use rewire::Exec;

fn policies() -> Vec<(&'static str, Exec)> {
    let n = std::thread::available_parallelism().map_or(2, |n| n.get()).max(2);
    vec![("serial", Exec::serial()), ("rayon", Exec::with_workers(n))]
}

fn topomap_steps(c: &mut Criterion) {
    let mut g = c.benchmark_group("topomap_100_steps");
    g.sample_size(10);
    for scale in [1, 2] {
        for (name, exec) in policies() {
            let mut model = TopomapModel::build(TopomapParams::with_scale(scale), 1, exec).unwrap();
            g.bench_with_input(BenchmarkId::new(name, scale), &scale, |b, _| {
                b.iter(|| {
                    for _ in 0..100 {
                        black_box(model.step().unwrap());
                    }
                })
            });
        }
    }
    g.finish();
}

fn pairwise_init(c: &mut Criterion) {
    let mut g = c.benchmark_group("pairwise_bernoulli_2048");
    g.sample_size(10);
    for (name, exec) in policies() {
        g.bench_function(name, |b| {
            b.iter(|| RaggedMatrix::init_pairwise_bernoulli(2048, 2048, |_, _| 0.02, 2.0, 3, 3, &exec))
        });
    }
    g.finish();
}

fn eligibility(c: &mut Criterion) {
    let mut g = c.benchmark_group("eprop_eligibility_512");
    let m = RaggedMatrix::init_pairwise_bernoulli(512, 512, |_, _| 0.2, 1.5, 1, 3, &Exec::serial());
    let layer = AlifLayer::new(512, &AlifParams::default());
    let coeffs = EpropCoeffs::from_layer(&layer);
    let z_bar: Vec<f64> = (0..512).map(|i| (i % 7) as f64 * 0.1).collect();
    let psi: Vec<f64> = (0..512).map(|i| (i % 5) as f64 * 0.05).collect();
    let learning: Vec<f64> = (0..512).map(|i| (i % 3) as f64 - 1.0).collect();
    for (name, exec) in policies() {
        let mut el = Eligibility::new(&m);
        g.bench_function(name, |b| b.iter(|| el.accumulate_step(&m, &z_bar, &psi, &learning, coeffs, &exec)));
    }
    g.finish();
}

criterion_group!(benches, topomap_steps, pairwise_init, eligibility);
criterion_main!(benches);
