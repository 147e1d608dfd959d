use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use himosa::model::{infer, ForwardOptions, HimosaWeights, ModelConfig};
use himosa::nn::conv2d_forward;
use himosa::Tensor;

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let auto = rayon::ThreadPoolBuilder::new().build().expect("pool");
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool");
    vec![("parallel", auto), ("one_thread", single)]
}

fn forward(c: &mut Criterion) {
    let cfg = ModelConfig::tiny();
    let weights = HimosaWeights::<f32>::init(&cfg, 0).expect("weights");
    let x = Tensor::from_fn(&[3, 48, 48], |i| ((i * 31) % 255) as f32 / 255.0);
    let mut group = c.benchmark_group("tiny_forward_48");
    group.sample_size(10);
    for (label, pool) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(label), &x, |b, x| {
            b.iter(|| pool.install(|| infer(&cfg, &weights, x, &ForwardOptions::default()).expect("forward")))
        });
    }
    group.finish();
}

fn conv(c: &mut Criterion) {
    let x = Tensor::<f32>::from_fn(&[32, 64, 64], |i| (i % 17) as f32 * 0.1);
    let w = Tensor::<f32>::from_fn(&[32, 32, 3, 3], |i| (i % 7) as f32 * 0.01);
    let mut group = c.benchmark_group("conv3x3_32ch_64");
    group.sample_size(10);
    for (label, pool) in pools() {
        group.bench_function(label, |b| b.iter(|| pool.install(|| conv2d_forward(&x, &w, None).expect("conv"))));
    }
    group.finish();
}

criterion_group!(benches, forward, conv);
criterion_main!(benches);
