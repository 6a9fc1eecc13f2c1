use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use underdet_core::autodiff::{grad_prediction, hessian_loss, hessian_prediction};
use underdet_core::data::gen_sine;
use underdet_core::linalg::{eigh_symmetric, SymMatrix};
use underdet_core::qsim::run_circuit;
use underdet_core::rng::standard_normal;
use underdet_core::{build_template, rng_from_seed, ShotConfig, TemplateKind};

fn angles(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| standard_normal(&mut rng)).collect()
}

fn simulator(c: &mut Criterion) {
    for kind in [TemplateKind::Sine1d, TemplateKind::Fmnist] {
        let t = build_template(kind);
        let theta = angles(t.n_trainable, 1);
        let x = angles(t.n_features, 2);
        c.bench_function(&format!("run_circuit/{}", kind.name()), |b| {
            b.iter(|| run_circuit(black_box(&t), black_box(&theta), black_box(&x)).unwrap())
        });
    }
}

fn derivatives(c: &mut Criterion) {
    let mut rng = rng_from_seed(0);
    for kind in [TemplateKind::Sine1d, TemplateKind::Fmnist] {
        let t = build_template(kind);
        let theta = angles(t.n_trainable, 3);
        let x = angles(t.n_features, 4);
        c.bench_function(&format!("grad_prediction/{}", kind.name()), |b| {
            b.iter(|| grad_prediction(&t, black_box(&theta), &x, ShotConfig::Analytic, &mut rng).unwrap())
        });
        c.bench_function(&format!("hessian_prediction/{}", kind.name()), |b| {
            b.iter(|| hessian_prediction(&t, black_box(&theta), &x, ShotConfig::Analytic, &mut rng).unwrap())
        });
    }
    let t = build_template(TemplateKind::Sine1d);
    let theta = angles(t.n_trainable, 5);
    let (train, _) = gen_sine(200, 1, &mut rng_from_seed(6)).unwrap();
    c.bench_function("hessian_loss/sine1d_200", |b| {
        b.iter(|| hessian_loss(&t, black_box(&theta), &train, ShotConfig::Analytic, &mut rng).unwrap())
    });
}

fn eigensolver(c: &mut Criterion) {
    for n in [14usize, 70] {
        let a = angles(n * n, n as u64);
        let m = SymMatrix::from_fn(n, |i, j| a[i * n + j]);
        c.bench_function(&format!("eigh_symmetric/{n}"), |b| {
            b.iter(|| eigh_symmetric(black_box(&m)).unwrap())
        });
    }
}

criterion_group!(benches, simulator, derivatives, eigensolver);
criterion_main!(benches);
