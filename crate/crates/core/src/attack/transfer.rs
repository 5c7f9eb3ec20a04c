//! Transferable-direction generators run on source models only. Each variant
//! is iterative sign-gradient ascent on the cross-entropy with a different
//! gradient estimate: DI takes the gradient at a stochastically transformed
//! input, TAIG follows the sign of integrated gradients of the true-class
//! logit, DWP averages gradients over randomly pruned copies of the source.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_finite, signed_step, SourceStack};
use crate::error::{Error, Result};
use crate::geometry::{normalize_direction, Direction};
use crate::zoo::{Model, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferAttackId {
    Di,
    Taig,
    Dwp,
}

impl TransferAttackId {
    pub fn name(self) -> &'static str {
        match self {
            TransferAttackId::Di => "di",
            TransferAttackId::Taig => "taig",
            TransferAttackId::Dwp => "dwp",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferConfig {
    pub attack: TransferAttackId,
    /// L-inf cap per pixel in [0,1] feature units.
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    /// DI: probability of transforming the input before each gradient.
    #[serde(default = "default_transform_probability")]
    pub transform_probability: f64,
    /// DI: largest fraction of coordinates zero-padded by a transform.
    #[serde(default = "default_max_pad_fraction")]
    pub max_pad_fraction: f64,
    /// TAIG: path steps of the integrated-gradient estimate.
    #[serde(default = "default_path_steps")]
    pub path_steps: usize,
    /// DWP: pruned copies averaged per step.
    #[serde(default = "default_copies")]
    pub copies: usize,
    /// DWP: fraction of weights zeroed in each copy.
    #[serde(default)]
    pub prune_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_transform_probability() -> f64 {
    0.5
}
fn default_max_pad_fraction() -> f64 {
    0.3
}
fn default_path_steps() -> usize {
    16
}
fn default_copies() -> usize {
    4
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon <= 0.0 || self.steps == 0 || self.step_size <= 0.0 {
            return Err(Error::Config("transfer attack needs positive epsilon, steps, step size".into()));
        }
        if !(0.0..=1.0).contains(&self.transform_probability)
            || !(0.0..=1.0).contains(&self.max_pad_fraction)
        {
            return Err(Error::Config("DI probabilities must lie in [0, 1]".into()));
        }
        if self.path_steps == 0 {
            return Err(Error::Config("TAIG needs at least one path step".into()));
        }
        if self.copies == 0 || !(0.0..1.0).contains(&self.prune_fraction) {
            return Err(Error::Config("DWP needs copies >= 1 and prune fraction in [0, 1)".into()));
        }
        Ok(())
    }
}

/// An ordered set of source models attacked through their logit average.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub source_ids: Vec<String>,
}

impl EnsembleSpec {
    /// Stable attack-table id: `ens(a+b+c)`.
    pub fn id(&self) -> String {
        format!("ens({})", self.source_ids.join("+"))
    }
}

/// Run a transferable attack on one source or a logit-averaged ensemble.
/// Deterministic for a fixed config seed.
pub fn run_transfer(sources: &SourceStack, sample: &Sample, cfg: &TransferConfig) -> Result<Direction> {
    cfg.validate()?;
    sources.check_correct(&sample.x, sample.y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = sample.x.len();
    let mut adv = sample.x.clone();
    let context = || format!("transfer attack `{}` sample {}", cfg.attack.name(), sample.id);

    for _ in 0..cfg.steps {
        let g = match cfg.attack {
            TransferAttackId::Di => {
                let apply: f64 = rng.gen();
                let input = if apply < cfg.transform_probability {
                    resize_pad_analog(&adv, cfg.max_pad_fraction, &mut rng)
                } else {
                    adv.clone()
                };
                sources.ce_input_gradient(&input, sample.y)?
            }
            TransferAttackId::Taig => {
                let baseline = vec![0.0; n];
                let ig = stack_integrated_gradients(sources, &adv, &baseline, cfg.path_steps, sample.y)?;
                // Move against the true-class attribution.
                ig.into_iter().map(|v| -v).collect()
            }
            TransferAttackId::Dwp => {
                let mut acc = vec![0.0; n];
                for _ in 0..cfg.copies {
                    let masked: Vec<Model> = sources
                        .members()
                        .iter()
                        .map(|m| prune_weights(m, cfg.prune_fraction, &mut rng))
                        .collect();
                    let refs: Vec<&Model> = masked.iter().collect();
                    let stack = SourceStack::ensemble(refs)?;
                    for (a, v) in acc.iter_mut().zip(stack.ce_input_gradient(&adv, sample.y)?) {
                        *a += v;
                    }
                }
                let scale = 1.0 / cfg.copies as f64;
                acc.iter_mut().for_each(|v| *v *= scale);
                acc
            }
        };
        check_finite(&g, &context())?;
        signed_step(&mut adv, &sample.x, &g, cfg.step_size, cfg.epsilon);
    }

    let raw: Vec<f64> = adv.iter().zip(&sample.x).map(|(a, b)| a - b).collect();
    let source_id = if sources.members().len() == 1 {
        sources.members()[0].id.clone()
    } else {
        EnsembleSpec {
            source_ids: sources.members().iter().map(|m| m.id.clone()).collect(),
        }
        .id()
    };
    normalize_direction(&raw, cfg.attack.name(), &source_id, sample.id)
}

/// Desk-scale analog of the resize-and-pad input diversity transform:
/// shrink the kept coordinates by a random factor and zero a randomly
/// permuted subset of the rest.
fn resize_pad_analog(x: &[f64], max_pad_fraction: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = x.len();
    let gamma = rng.gen_range(1.0 - max_pad_fraction..=1.0);
    let pad_count = ((1.0 - gamma) * n as f64).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut out: Vec<f64> = x.iter().map(|v| gamma * v).collect();
    for &i in idx.iter().take(pad_count) {
        out[i] = 0.0;
    }
    out
}

/// Copy a model with a fraction of its affine weights zeroed at random.
/// Biases are kept.
fn prune_weights(model: &Model, prune_fraction: f64, rng: &mut ChaCha8Rng) -> Model {
    let mut pruned = model.clone();
    if prune_fraction > 0.0 {
        for layer in &mut pruned.layers {
            for w in layer.w.iter_mut() {
                if rng.gen::<f64>() < prune_fraction {
                    *w = 0.0;
                }
            }
        }
    }
    pruned
}

/// Riemann-midpoint approximation of the path integral of the class-logit
/// gradient from `baseline` to `x`.
pub fn integrated_gradients(
    model: &Model,
    x: &[f64],
    baseline: &[f64],
    path_steps: usize,
    class: usize,
) -> Result<Vec<f64>> {
    let stack = SourceStack::single(model);
    stack_integrated_gradients(&stack, x, baseline, path_steps, class)
}

fn stack_integrated_gradients(
    sources: &SourceStack,
    x: &[f64],
    baseline: &[f64],
    path_steps: usize,
    class: usize,
) -> Result<Vec<f64>> {
    if path_steps == 0 {
        return Err(Error::Config("integrated gradients need at least one path step".into()));
    }
    if x.len() != baseline.len() {
        return Err(Error::Input("baseline and input dimensions differ".into()));
    }
    if class >= sources.classes() {
        return Err(Error::Config(format!("class {class} out of range")));
    }
    let n = x.len();
    let mut dl = vec![0.0; sources.classes()];
    dl[class] = 1.0;
    let mut avg = vec![0.0; n];
    for s in 0..path_steps {
        let alpha = (s as f64 + 0.5) / path_steps as f64;
        let point: Vec<f64> = baseline
            .iter()
            .zip(x)
            .map(|(b, xi)| b + alpha * (xi - b))
            .collect();
        for (a, g) in avg.iter_mut().zip(sources.backprop_mean(&point, &dl)?) {
            *a += g;
        }
    }
    let scale = 1.0 / path_steps as f64;
    Ok((0..n).map(|i| (x[i] - baseline[i]) * avg[i] * scale).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::whitebox::{run_whitebox, WhiteBoxAttackId, WhiteBoxConfig};
    use crate::zoo::arch::{Activation, ArchSpec};
    use crate::zoo::model::Layer;

    fn model_from_layers(layers: Vec<Layer>) -> Model {
        Model {
            id: "m".into(),
            family: "f".into(),
            arch: ArchSpec {
                hidden: vec![],
                activation: Activation::Identity,
                label_smoothing: 0.0,
                train_fraction: 1.0,
                learning_rate: 1.0,
                epochs: 1,
            },
            layers,
            training_seed: 0,
            eval_accuracy: 1.0,
        }
    }

    fn linear(w: Vec<Vec<f64>>, b: Vec<f64>) -> Model {
        let out_dim = w.len();
        let in_dim = w[0].len();
        model_from_layers(vec![Layer {
            w: w.into_iter().flatten().collect(),
            b,
            in_dim,
            out_dim,
            activation: Activation::Identity,
        }])
    }

    fn tiny_mlp(seed: u64) -> Model {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |in_dim: usize, out_dim: usize, act: Activation| Layer {
            w: (0..in_dim * out_dim).map(|_| rng.gen_range(-0.8..0.8)).collect(),
            b: (0..out_dim).map(|_| rng.gen_range(-0.2..0.2)).collect(),
            in_dim,
            out_dim,
            activation: act,
        };
        let l1 = layer(4, 6, Activation::Tanh);
        let l2 = layer(6, 3, Activation::Identity);
        model_from_layers(vec![l1, l2])
    }

    fn transfer_cfg(attack: TransferAttackId) -> TransferConfig {
        TransferConfig {
            attack,
            epsilon: 8.0 / 255.0,
            steps: 10,
            step_size: 2.0 / 255.0,
            transform_probability: 0.5,
            max_pad_fraction: 0.3,
            path_steps: 8,
            copies: 2,
            prune_fraction: 0.1,
            seed: 17,
        }
    }

    #[test]
    fn ig_completeness_on_a_smooth_model() {
        let model = tiny_mlp(5);
        let x = vec![0.7, 0.2, 0.9, 0.4];
        let baseline = vec![0.0; 4];
        for class in 0..3 {
            let ig = integrated_gradients(&model, &x, &baseline, 64, class).unwrap();
            let total: f64 = ig.iter().sum();
            let expected =
                model.forward(&x).unwrap()[class] - model.forward(&baseline).unwrap()[class];
            assert!(
                (total - expected).abs() <= 1e-2 * expected.abs().max(1e-3),
                "class {class}: IG sum {total} vs logit gap {expected}"
            );
        }
    }

    #[test]
    fn ig_is_exact_for_linear_models_at_any_step_count() {
        let w = vec![vec![1.2, -0.4, 0.9], vec![0.3, 0.8, -1.1], vec![-0.5, 0.2, 0.6]];
        let model = linear(w.clone(), vec![0.1, -0.2, 0.3]);
        let x = vec![0.6, 0.8, 0.1];
        let baseline = vec![0.2, 0.3, 0.4];
        for steps in [1, 3, 16] {
            let ig = integrated_gradients(&model, &x, &baseline, steps, 1).unwrap();
            for i in 0..3 {
                let expected = (x[i] - baseline[i]) * w[1][i];
                assert!((ig[i] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ig_at_its_own_baseline_is_zero() {
        let model = tiny_mlp(8);
        let x = vec![0.3, 0.3, 0.3, 0.3];
        let ig = integrated_gradients(&model, &x, &x, 4, 0).unwrap();
        assert!(ig.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn di_without_transforms_reduces_to_ifgsm() {
        let model = tiny_mlp(2);
        let x = vec![0.55, 0.4, 0.6, 0.45];
        let y = model.decide(&x).unwrap();
        let sample = Sample { id: 0, x, y };
        let mut cfg = transfer_cfg(TransferAttackId::Di);
        cfg.transform_probability = 0.0;
        let di = run_transfer(&SourceStack::single(&model), &sample, &cfg).unwrap();
        let wb = run_whitebox(
            &model,
            &sample,
            &WhiteBoxConfig {
                attack: WhiteBoxAttackId::Ifgsm,
                epsilon: cfg.epsilon,
                steps: cfg.steps,
                step_size: cfg.step_size,
                seed: 0,
            },
        )
        .unwrap();
        assert_eq!(di.u, wb.u);
    }

    #[test]
    fn dwp_without_pruning_reduces_to_ifgsm() {
        let model = tiny_mlp(3);
        let x = vec![0.5, 0.45, 0.55, 0.6];
        let y = model.decide(&x).unwrap();
        let sample = Sample { id: 0, x, y };
        let mut cfg = transfer_cfg(TransferAttackId::Dwp);
        cfg.copies = 1;
        cfg.prune_fraction = 0.0;
        let dwp = run_transfer(&SourceStack::single(&model), &sample, &cfg).unwrap();
        let wb = run_whitebox(
            &model,
            &sample,
            &WhiteBoxConfig {
                attack: WhiteBoxAttackId::Ifgsm,
                epsilon: cfg.epsilon,
                steps: cfg.steps,
                step_size: cfg.step_size,
                seed: 0,
            },
        )
        .unwrap();
        assert_eq!(dwp.u, wb.u);
    }

    #[test]
    fn taig_single_step_matches_ifgsm_on_an_antisymmetric_linear_model() {
        // Binary model with logits (w.x, -w.x): the sign of -IG of the true
        // class equals the cross-entropy sign gradient when x > 0.
        let w = vec![0.8, -1.1, 0.4, 0.9];
        let neg: Vec<f64> = w.iter().map(|v| -v).collect();
        let model = linear(vec![w, neg], vec![0.0, 0.0]);
        let x = vec![0.6, 0.7, 0.8, 0.9];
        let y = model.decide(&x).unwrap();
        let sample = Sample { id: 0, x, y };
        let mut cfg = transfer_cfg(TransferAttackId::Taig);
        cfg.steps = 1;
        cfg.path_steps = 1;
        let taig = run_transfer(&SourceStack::single(&model), &sample, &cfg).unwrap();
        let wb = run_whitebox(
            &model,
            &sample,
            &WhiteBoxConfig {
                attack: WhiteBoxAttackId::Ifgsm,
                epsilon: cfg.epsilon,
                steps: 1,
                step_size: cfg.step_size,
                seed: 0,
            },
        )
        .unwrap();
        assert_eq!(taig.u, wb.u);
    }

    #[test]
    fn singleton_ensemble_equals_single_source() {
        let model = tiny_mlp(11);
        let x = vec![0.5, 0.6, 0.4, 0.5];
        let y = model.decide(&x).unwrap();
        let sample = Sample { id: 0, x, y };
        let cfg = transfer_cfg(TransferAttackId::Di);
        let single = run_transfer(&SourceStack::single(&model), &sample, &cfg).unwrap();
        let ens = run_transfer(&SourceStack::ensemble(vec![&model]).unwrap(), &sample, &cfg).unwrap();
        assert_eq!(single.u, ens.u);
    }

    #[test]
    fn mismatched_ensemble_dims_are_rejected() {
        let a = tiny_mlp(1);
        let b = linear(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]], vec![0.0; 3]);
        assert!(matches!(
            SourceStack::ensemble(vec![&a, &b]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn emitted_directions_have_sqrt_n_norm() {
        let model = tiny_mlp(21);
        let x = vec![0.52, 0.61, 0.43, 0.57];
        let y = model.decide(&x).unwrap();
        let sample = Sample { id: 0, x, y };
        for attack in [TransferAttackId::Di, TransferAttackId::Taig, TransferAttackId::Dwp] {
            let dir = run_transfer(&SourceStack::single(&model), &sample, &transfer_cfg(attack)).unwrap();
            let n = dir.u.len() as f64;
            assert!((dir.norm() - n.sqrt()).abs() / n.sqrt() < 1e-9);
        }
    }
}
