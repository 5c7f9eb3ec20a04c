use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::zoo::arch::{Activation, ArchSpec};
use crate::zoo::dataset::Dataset;
use crate::zoo::model::{softmax, Layer, Model};

/// Train a classifier with full-batch gradient descent at a fixed step.
/// Deterministic for fixed (arch, dataset, seed): the same call always
/// produces identical parameter vectors.
pub fn train_model(
    id: &str,
    family: &str,
    arch: &ArchSpec,
    dataset: &Dataset,
    seed: u64,
    accuracy_floor: f64,
) -> Result<Model> {
    arch.validate()?;
    let dims = arch.dims(dataset.features, dataset.classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = init_layers(&dims, arch.activation, &mut rng);

    // Per-model training subset, drawn without replacement from the seed.
    let batch: Vec<&crate::zoo::dataset::Sample> = if arch.train_fraction < 1.0 {
        use rand::seq::SliceRandom;
        let take = ((dataset.train.len() as f64 * arch.train_fraction).round() as usize)
            .max(dataset.classes);
        let mut idx: Vec<usize> = (0..dataset.train.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(take);
        idx.sort_unstable();
        idx.into_iter().map(|i| &dataset.train[i]).collect()
    } else {
        dataset.train.iter().collect()
    };

    let n = batch.len() as f64;
    let k = dataset.classes;
    let alpha = arch.label_smoothing;

    let mut grads: Vec<(Vec<f64>, Vec<f64>)> = layers
        .iter()
        .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
        .collect();

    for _ in 0..arch.epochs {
        for (gw, gb) in grads.iter_mut() {
            gw.iter_mut().for_each(|v| *v = 0.0);
            gb.iter_mut().for_each(|v| *v = 0.0);
        }
        for sample in &batch {
            accumulate_gradients(&layers, sample.x.as_slice(), sample.y, k, alpha, &mut grads);
        }
        let step = arch.learning_rate / n;
        for (layer, (gw, gb)) in layers.iter_mut().zip(&grads) {
            for (w, g) in layer.w.iter_mut().zip(gw) {
                *w -= step * g;
            }
            for (b, g) in layer.b.iter_mut().zip(gb) {
                *b -= step * g;
            }
        }
    }

    let model = Model {
        id: id.to_string(),
        family: family.to_string(),
        arch: arch.clone(),
        layers,
        training_seed: seed,
        eval_accuracy: 0.0,
    };
    let accuracy = eval_accuracy(&model, dataset)?;
    if accuracy < accuracy_floor {
        return Err(Error::TrainingFailure {
            model_id: id.to_string(),
            accuracy,
            floor: accuracy_floor,
            epochs: arch.epochs,
        });
    }
    Ok(Model { eval_accuracy: accuracy, ..model })
}

/// Fraction of the eval split classified correctly.
pub fn eval_accuracy(model: &Model, dataset: &Dataset) -> Result<f64> {
    let mut hits = 0usize;
    for s in &dataset.eval {
        if model.decide(&s.x)? == s.y {
            hits += 1;
        }
    }
    Ok(hits as f64 / dataset.eval.len() as f64)
}

fn init_layers(dims: &[usize], activation: Activation, rng: &mut ChaCha8Rng) -> Vec<Layer> {
    use rand::Rng;
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for win in dims.windows(2) {
        let (fan_in, fan_out) = (win[0], win[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
        layers.push(Layer {
            w,
            b: vec![0.0; fan_out],
            in_dim: fan_in,
            out_dim: fan_out,
            activation,
        });
    }
    // Output layer is affine regardless of the hidden nonlinearity.
    layers.last_mut().unwrap().activation = Activation::Identity;
    layers
}

fn accumulate_gradients(
    layers: &[Layer],
    x: &[f64],
    y: usize,
    classes: usize,
    label_smoothing: f64,
    grads: &mut [(Vec<f64>, Vec<f64>)],
) {
    // Forward, keeping activations and pre-activations.
    let mut activations: Vec<Vec<f64>> = Vec::with_capacity(layers.len() + 1);
    let mut preacts: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    activations.push(x.to_vec());
    for layer in layers {
        let mut z = Vec::new();
        layer.affine(activations.last().unwrap(), &mut z);
        preacts.push(z.clone());
        for v in z.iter_mut() {
            *v = layer.activation.apply(*v);
        }
        activations.push(z);
    }

    // dL/dlogits for smoothed cross-entropy: softmax - q.
    let logits = activations.last().unwrap();
    let mut delta = softmax(logits);
    let spread = label_smoothing / classes as f64;
    for (c, d) in delta.iter_mut().enumerate() {
        let q = if c == y { 1.0 - label_smoothing + spread } else { spread };
        *d -= q;
    }

    for (idx, layer) in layers.iter().enumerate().rev() {
        for (d, z) in delta.iter_mut().zip(&preacts[idx]) {
            *d *= layer.activation.derivative(*z);
        }
        let input = &activations[idx];
        let (gw, gb) = &mut grads[idx];
        for r in 0..layer.out_dim {
            let dr = delta[r];
            gb[r] += dr;
            let row = &mut gw[r * layer.in_dim..(r + 1) * layer.in_dim];
            for (g, xi) in row.iter_mut().zip(input) {
                *g += dr * xi;
            }
        }
        if idx > 0 {
            let mut prev = vec![0.0; layer.in_dim];
            for r in 0..layer.out_dim {
                let row = &layer.w[r * layer.in_dim..(r + 1) * layer.in_dim];
                let dr = delta[r];
                for (p, wi) in prev.iter_mut().zip(row) {
                    *p += dr * wi;
                }
            }
            delta = prev;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::dataset::Sample;

    /// Two linearly separable classes on a 2D slice, padded to 3 classes by
    /// a tiny third cluster so the task stays a valid multiclass problem.
    fn separable_dataset() -> Dataset {
        let mut train = Vec::new();
        let mut eval = Vec::new();
        let mut id = 0u32;
        let mut push = |split: &mut Vec<Sample>, x: Vec<f64>, y: usize, id: &mut u32| {
            split.push(Sample { id: *id, x, y });
            *id += 1;
        };
        for i in 0..40 {
            let t = i as f64 / 40.0;
            push(&mut train, vec![0.1 + 0.05 * t, 0.2 + 0.1 * t], 0, &mut id);
            push(&mut train, vec![0.8 + 0.05 * t, 0.9 - 0.1 * t], 1, &mut id);
            push(&mut train, vec![0.9 - 0.05 * t, 0.1 + 0.05 * t], 2, &mut id);
        }
        for i in 0..10 {
            let t = i as f64 / 10.0;
            push(&mut eval, vec![0.12 + 0.05 * t, 0.22 + 0.1 * t], 0, &mut id);
            push(&mut eval, vec![0.82 + 0.05 * t, 0.88 - 0.1 * t], 1, &mut id);
            push(&mut eval, vec![0.88 - 0.05 * t, 0.12 + 0.05 * t], 2, &mut id);
        }
        Dataset { train, eval, classes: 3, features: 2, seed: 0 }
    }

    fn linear_arch() -> ArchSpec {
        ArchSpec {
            hidden: vec![],
            activation: Activation::Identity,
            label_smoothing: 0.0,
            train_fraction: 1.0,
            learning_rate: 2.0,
            epochs: 400,
        }
    }

    #[test]
    fn linear_softmax_separates_a_separable_task() {
        let data = separable_dataset();
        let model = train_model("lin", "linear", &linear_arch(), &data, 11, 0.95).unwrap();
        assert!(model.eval_accuracy >= 0.95);
    }

    #[test]
    fn training_is_deterministic() {
        let data = separable_dataset();
        let a = train_model("lin", "linear", &linear_arch(), &data, 11, 0.5).unwrap();
        let b = train_model("lin", "linear", &linear_arch(), &data, 11, 0.5).unwrap();
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            assert_eq!(la.w, lb.w);
            assert_eq!(la.b, lb.b);
        }
    }

    #[test]
    fn unreachable_floor_names_the_model() {
        let data = separable_dataset();
        let mut arch = linear_arch();
        arch.epochs = 1;
        match train_model("weak", "linear", &arch, &data, 11, 0.99) {
            Err(Error::TrainingFailure { model_id, .. }) => assert_eq!(model_id, "weak"),
            other => panic!("expected training failure, got {other:?}"),
        }
    }

    #[test]
    fn zero_width_hidden_layer_is_a_configuration_error() {
        let data = separable_dataset();
        let arch = ArchSpec { hidden: vec![0], ..linear_arch() };
        assert!(matches!(
            train_model("bad", "mlp", &arch, &data, 1, 0.5),
            Err(Error::Config(_))
        ));
    }
}
