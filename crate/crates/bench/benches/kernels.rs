use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use eqgnn_core::dressed::{backward_batch, forward_batch, preprocess, GradMethod};
use eqgnn_core::qsim::GateOp;
use eqgnn_core::train::roc_auc;
use eqgnn_core::verify::random_jet;
use eqgnn_core::{CircuitShape, LorentzEqgnn, ModelConfig, Mode, StateVector};

criterion_group!(benches, gates, dressed, model, metrics);
criterion_main!(benches);

fn gates(c: &mut Criterion) {
    let mut g = c.benchmark_group("gate");
    for n in [4, 8, 12] {
        let mut s = StateVector::init_zero(n).unwrap();
        let (rx, crz) = (GateOp::rx(n / 2, 0.3), GateOp::crz(0, n - 1, 0.7));
        g.bench_with_input(BenchmarkId::new("rx", n), &n, |b, _| b.iter(|| s.apply_gate(black_box(&rx)).unwrap()));
        g.bench_with_input(BenchmarkId::new("crz", n), &n, |b, _| b.iter(|| s.apply_gate(black_box(&crz)).unwrap()));
    }
    g.finish();
}

fn dressed(c: &mut Criterion) {
    let shape = CircuitShape::new(4, 2).unwrap();
    let weights: Vec<f64> = (0..shape.n_weights()).map(|k| 0.01 * k as f64).collect();
    let features: Vec<f64> = (0..4 * 400).map(|k| (k as f64 * 0.37).sin()).collect();
    let batch = preprocess(&features, 4).unwrap();
    let upstream = vec![1.0; features.len()];
    let mut g = c.benchmark_group("dressed_400_edges");
    g.bench_function("forward", |b| b.iter(|| forward_batch(&shape, &weights, black_box(&batch)).unwrap()));
    for (name, method) in [("adjoint", GradMethod::Adjoint), ("parameter_shift", GradMethod::ParameterShift)] {
        g.bench_function(name, |b| b.iter(|| backward_batch(&shape, &weights, &batch, &upstream, method).unwrap()));
    }
    g.finish();
}

fn model(c: &mut Criterion) {
    let m = LorentzEqgnn::new(ModelConfig::default(), 1).unwrap();
    let mut g = c.benchmark_group("model");
    for n in [10, 20, 30] {
        let jet = random_jet(n, 3);
        g.bench_with_input(BenchmarkId::new("forward", n), &jet, |b, j| b.iter(|| m.forward(j, Mode::Eval).unwrap()));
        g.bench_with_input(BenchmarkId::new("loss_and_grad", n), &jet, |b, j| b.iter(|| m.loss_and_grad(j, Mode::Eval).unwrap()));
    }
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let labels: Vec<u8> = (0..10_000).map(|k| (k % 2) as u8).collect();
    let scores: Vec<f64> = (0..10_000).map(|k| ((k * 7919) % 10_007) as f64 / 10_007.0).collect();
    c.bench_function("roc_auc_10k", |b| b.iter(|| roc_auc(black_box(&scores), &labels).unwrap()));
}
