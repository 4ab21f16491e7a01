use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;
use uman_core::labelspace::{partition_from_matrix, UmdaMatrix};
use uman_core::nn::{sgd_step, Activation, GradTape, Mlp, Tensor2};
use uman_core::synthgen::{SyntheticSpec, SyntheticWorld};
use uman_core::uman::{margin_vector, Hyperparams, Method, Trainer};

fn random_batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor2 {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Tensor2::from_vec(rows, cols, data).unwrap()
}

fn mlp_step(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = Mlp::new(
        &[16, 32, 16, 12],
        Activation::Relu,
        Activation::Identity,
        &mut rng,
    )
    .unwrap();
    let x = random_batch(&mut rng, 96, 16);
    let labels: Vec<usize> = (0..96).map(|i| i % 12).collect();
    let weights = vec![1.0; 96];
    c.bench_function("mlp_forward_backward_sgd_b96", |b| {
        b.iter(|| {
            let mut tape = GradTape::new();
            let input = tape.leaf(x.clone());
            let logits = net.forward(&mut tape, input).unwrap();
            let loss = tape
                .softmax_cross_entropy(logits, &labels, &weights)
                .unwrap();
            tape.backward(loss).unwrap();
            net.collect_grads(&tape);
            sgd_step(&mut net, 1e-3).unwrap();
            black_box(tape.value(loss).item())
        })
    });
}

fn margins(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let probs: Vec<Vec<f64>> = (0..256)
        .map(|_| {
            let e: Vec<f64> = (0..12)
                .map(|_| rng.random_range(-3.0..3.0f64).exp())
                .collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect();
    c.bench_function("margin_vector_256x12", |b| {
        b.iter(|| margin_vector(black_box(&probs)).unwrap())
    });
}

fn training(c: &mut Criterion) {
    let partition = partition_from_matrix(&UmdaMatrix::new(vec![4, 4], vec![3, 3], 6, 3)).unwrap();
    let spec = SyntheticSpec {
        feature_dim: 16,
        samples_per_class_per_domain: 50,
        class_center_scale: 1.0,
        domain_shift_scale: 1.0,
        domain_rotation: false,
        noise_sigma: 0.5,
        seed: 0,
    };
    let data = SyntheticWorld::new(&spec, &partition)
        .unwrap()
        .training_sets();
    let hp = Hyperparams {
        max_steps: 100,
        ..Hyperparams::default()
    };
    let mut group = c.benchmark_group("train_100_steps");
    group.sample_size(10);
    for method in [
        Method::SourceOnly,
        Method::UnweightedAdversarial,
        Method::Uman,
    ] {
        group.bench_function(method.name(), |b| {
            b.iter_batched(
                || Trainer::new(method, hp.clone()),
                |t| t.run(&data, &partition).unwrap(),
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, mlp_step, margins, training);
criterion_main!(benches);
