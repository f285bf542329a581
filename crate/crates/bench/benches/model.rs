use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use inception_core::model::{build, Arch, ModelConfig};
use inception_core::nn::Mode;
use inception_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn clip(len: usize) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(len as u64);
    Tensor::from_vec(&[1, 1, len], (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn inference(c: &mut Criterion) {
    let mut group = c.benchmark_group("predict");
    group.sample_size(10);
    for arch in [Arch::Inception, Arch::InceptionBn] {
        let model = build(ModelConfig::new(arch, 10), 0).unwrap();
        for len in [16_000, 32_000] {
            let x = clip(len);
            group.bench_with_input(BenchmarkId::new(arch.name(), len), &len, |bench, _| {
                bench.iter(|| model.predict(black_box(&x)).unwrap())
            });
        }
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_backward");
    group.sample_size(10);
    let mut model = build(ModelConfig::new(Arch::Inception, 10), 0).unwrap();
    let x = clip(32_000);
    let grad = Tensor::from_vec(&[1, 10], vec![0.1f32; 10]).unwrap();
    group.bench_function("inception_32000", |bench| {
        bench.iter(|| {
            let fwd = model.forward(black_box(&x), Mode::Train).unwrap();
            model.backward(&fwd.tape, &grad).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, inference, train_step);
criterion_main!(benches);
