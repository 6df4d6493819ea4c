use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use kstar_core::analysis::{fit_scaling, FitForm};
use kstar_core::data::{synth_dataset, SynthSpec};
use kstar_core::nn;
use kstar_core::{Model, ModelSpec, SobolState, Tensor};

fn batch(shape: &[usize], n: usize) -> Tensor {
    let len: usize = shape.iter().product();
    let data = (0..n * len).map(|i| ((i * 7919) % 255) as f64 / 255.0).collect();
    let mut full = vec![n];
    full.extend_from_slice(shape);
    Tensor::new(full, data).unwrap()
}

fn gradients(c: &mut Criterion) {
    let mut group = c.benchmark_group("loss_and_gradient");
    let mlp = Model::build(&ModelSpec::mlp(784, &[32], 10, 0)).unwrap();
    let cnn = Model::build(&ModelSpec::cnn_lite([1, 16, 16], [8, 16], 10, 0)).unwrap();
    for b in [16usize, 128] {
        let x = batch(&[784], b);
        let y: Vec<usize> = (0..b).map(|i| i % 10).collect();
        group.bench_with_input(BenchmarkId::new("simple-mlp", b), &b, |bench, _| {
            bench.iter(|| nn::loss_and_gradient(black_box(&mlp), black_box(&x), &y).unwrap())
        });
        let x = batch(&[1, 16, 16], b);
        group.bench_with_input(BenchmarkId::new("cnn-lite", b), &b, |bench, _| {
            bench.iter(|| nn::loss_and_gradient(black_box(&cnn), black_box(&x), &y).unwrap())
        });
    }
    group.finish();
}

fn full_gradient(c: &mut Criterion) {
    let spec = SynthSpec {
        classes: 4,
        dims: 16,
        per_class: 500,
        separation: 4.0,
        conditioning: 1.0,
        clusters: 1,
    };
    let ds = synth_dataset(&spec, 0).unwrap();
    let model = Model::build(&ModelSpec::mlp(16, &[32], 4, 0)).unwrap();
    c.bench_function("full_gradient/synth-2000", |bench| {
        bench.iter(|| nn::full_loss_and_gradient(black_box(&model), black_box(&ds)).unwrap())
    });
}

fn sobol(c: &mut Criterion) {
    c.bench_function("sobol/1024x4", |bench| {
        bench.iter(|| SobolState::new(4).unwrap().take(black_box(1024)))
    });
}

fn fit(c: &mut Criterion) {
    let pts: Vec<(f64, f64)> = (1..=10)
        .map(|r| {
            let b = (1u64 << r) as f64;
            (b, 4000.0 / b + 120.0)
        })
        .collect();
    c.bench_function("fit_scaling/10", |bench| {
        bench.iter(|| fit_scaling(black_box(&pts), FitForm::FixedLr).unwrap())
    });
}

criterion_group!(benches, gradients, full_gradient, sobol, fit);
criterion_main!(benches);
