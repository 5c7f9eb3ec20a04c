//! Finite-difference oracle for analytic input-gradients: every zoo
//! architecture must match central differences on random (sample, loss)
//! pairs, and zoo construction must be a pure function of its seeds.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use transferbench_core::zoo::{
    generate_dataset, train_model, Activation, ArchSpec, Dataset, Loss, Model,
};

const FD_STEP: f64 = 1e-4;

fn small_zoo(data: &Dataset) -> Vec<Model> {
    let arch = |hidden: Vec<usize>, act: Activation, ls: f64| ArchSpec {
        hidden,
        activation: act,
        label_smoothing: ls,
        train_fraction: 1.0,
        learning_rate: 0.4,
        epochs: 300,
    };
    vec![
        ("lin", "linear", arch(vec![], Activation::Identity, 0.0)),
        ("lin-sm", "linear", arch(vec![], Activation::Identity, 0.1)),
        ("tanh-1", "mlp-tanh", arch(vec![12], Activation::Tanh, 0.0)),
        ("tanh-2", "mlp-tanh", arch(vec![12, 12], Activation::Tanh, 0.0)),
        ("relu-1", "mlp-relu", arch(vec![16], Activation::Relu, 0.0)),
        ("wide", "wide", arch(vec![48], Activation::Tanh, 0.0)),
    ]
    .into_iter()
    .enumerate()
    .map(|(i, (id, fam, a))| train_model(id, fam, &a, data, 500 + i as u64, 0.0).unwrap())
    .collect()
}

fn central_difference(model: &Model, x: &[f64], loss: Loss) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + FD_STEP;
        let plus = model.loss_value(&probe, loss).unwrap();
        probe[i] = x[i] - FD_STEP;
        let minus = model.loss_value(&probe, loss).unwrap();
        probe[i] = x[i];
        grad[i] = (plus - minus) / (2.0 * FD_STEP);
    }
    grad
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

#[test]
fn analytic_gradients_match_central_differences() {
    let data = generate_dataset(41, 200, 40, 5, 16).unwrap();
    let models = small_zoo(&data);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for model in &models {
        for case in 0..25 {
            let sample = &data.train[rng.gen_range(0..data.train.len())];
            let loss = if case % 2 == 0 {
                Loss::CrossEntropy { label: sample.y }
            } else {
                let pos = rng.gen_range(0..5);
                let neg = rng.gen_range(0..5);
                Loss::LogitDiff { pos, neg }
            };
            let analytic = model.input_gradient(&sample.x, loss).unwrap();
            let numeric = central_difference(model, &sample.x, loss);
            let err = rel_l2(&analytic, &numeric);
            assert!(
                err <= 1e-3,
                "model `{}` case {case}: relative l2 error {err}",
                model.id
            );
        }
    }
}

#[test]
fn zoo_construction_is_pure_in_the_seed() {
    let data_a = generate_dataset(41, 150, 30, 4, 12).unwrap();
    let data_b = generate_dataset(41, 150, 30, 4, 12).unwrap();
    let arch = ArchSpec {
        hidden: vec![8],
        activation: Activation::Tanh,
        label_smoothing: 0.0,
        train_fraction: 1.0,
        learning_rate: 0.4,
        epochs: 200,
    };
    let a = train_model("m", "f", &arch, &data_a, 9, 0.0).unwrap();
    let b = train_model("m", "f", &arch, &data_b, 9, 0.0).unwrap();
    assert_eq!(a.eval_accuracy, b.eval_accuracy);
    for (la, lb) in a.layers.iter().zip(&b.layers) {
        assert_eq!(la.w, lb.w);
        assert_eq!(la.b, lb.b);
    }
}

#[test]
fn differently_seeded_models_disagree_somewhere() {
    let data = generate_dataset(42, 300, 60, 5, 16).unwrap();
    let arch = ArchSpec {
        hidden: vec![12],
        activation: Activation::Tanh,
        label_smoothing: 0.0,
        train_fraction: 1.0,
        learning_rate: 0.4,
        epochs: 400,
    };
    let a = train_model("a", "f", &arch, &data, 1, 0.0).unwrap();
    let b = train_model("b", "f", &arch, &data, 2, 0.0).unwrap();
    let disagree = data
        .eval
        .iter()
        .any(|s| a.decide(&s.x).unwrap() != b.decide(&s.x).unwrap());
    assert!(disagree, "differently seeded models never disagree on eval");
}
