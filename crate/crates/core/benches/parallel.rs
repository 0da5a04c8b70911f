use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use apct_core::exec::Exec;
use apct_core::geometry::gen_shape;
use apct_core::model::{prepare, ModelConfig, ModelParams};
use apct_core::rng::StreamKey;
use apct_core::training::{evaluate, mean_grads, sample_step, TrainConfig};

fn modes() -> [(&'static str, Exec); 2] {
    [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)]
}

fn bench_eval(c: &mut Criterion) {
    let cfg = ModelConfig::desk();
    let params = ModelParams::<f32>::init(&cfg, 0).unwrap();
    let clouds: Vec<_> = (0..16).map(|i| gen_shape(i % 8, i as u64, 1024).unwrap()).collect();
    let mut g = c.benchmark_group("evaluate_16");
    g.sample_size(10);
    for (name, exec) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| evaluate(&params, &clouds, exec).unwrap()));
    }
    g.finish();
}

fn bench_step(c: &mut Criterion) {
    let cfg = ModelConfig::desk();
    let params = ModelParams::<f32>::init(&cfg, 0).unwrap();
    let tc = TrainConfig::default();
    let batch: Vec<_> = (0..tc.batch_size).map(|i| prepare::<f32>(&gen_shape(i % 8, i as u64, 1024).unwrap(), &cfg).unwrap()).collect();
    let key = StreamKey::new(0).with_str("bench");
    let mut g = c.benchmark_group("train_batch_grads");
    g.sample_size(10);
    for (name, exec) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let steps = exec.try_map(&batch, |input| sample_step(&params, input, &tc, key)).unwrap();
                mean_grads(&steps)
            })
        });
    }
    g.finish();
}

criterion_group!(benches, bench_eval, bench_step);
criterion_main!(benches);
