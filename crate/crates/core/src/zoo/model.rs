use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::zoo::arch::{Activation, ArchSpec};

/// One affine map followed by an elementwise nonlinearity.
/// Weights are row-major `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl Layer {
    pub fn affine(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.out_dim {
            let row = &self.w[r * self.in_dim..(r + 1) * self.in_dim];
            let mut acc = self.b[r];
            for (wi, xi) in row.iter().zip(input) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }
}

/// A trained classifier. Parameters are frozen once training completes;
/// all methods take `&self` so a model can be shared across workers freely.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model {
    pub id: String,
    pub family: String,
    pub arch: ArchSpec,
    pub layers: Vec<Layer>,
    pub training_seed: u64,
    pub eval_accuracy: f64,
}

/// Scalar objectives whose input-gradient the zoo exposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// Cross-entropy of the softmax against the given label.
    CrossEntropy { label: usize },
    /// logits[pos] - logits[neg].
    LogitDiff { pos: usize, neg: usize },
}

impl Model {
    pub fn features(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn classes(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    /// Raw logits for an input of the model's feature dimension.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.features() {
            return Err(Error::Input(format!(
                "model `{}` expects {} features, got {}",
                self.id,
                self.features(),
                x.len()
            )));
        }
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.affine(&cur, &mut next);
            for v in next.iter_mut() {
                *v = layer.activation.apply(*v);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Predicted class; ties broken toward the smallest index.
    pub fn decide(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    /// Forward pass keeping every pre-activation, for input-side backprop.
    fn preactivations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut z = Vec::new();
            layer.affine(&cur, &mut z);
            preacts.push(z.clone());
            for v in z.iter_mut() {
                *v = layer.activation.apply(*v);
            }
            cur = z;
        }
        preacts
    }

    /// Gradient of `sum(dl_dlogits . logits)` with respect to the input.
    /// The primitive behind both loss gradients and integrated gradients.
    pub fn backprop_logits(&self, x: &[f64], dl_dlogits: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.features() {
            return Err(Error::Input(format!(
                "model `{}` expects {} features, got {}",
                self.id,
                self.features(),
                x.len()
            )));
        }
        if dl_dlogits.len() != self.classes() {
            return Err(Error::Input("upstream gradient has wrong class count".into()));
        }
        let preacts = self.preactivations(x);
        let mut delta = dl_dlogits.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            for (d, z) in delta.iter_mut().zip(&preacts[idx]) {
                *d *= layer.activation.derivative(*z);
            }
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
        Ok(delta)
    }

    /// Exact analytic gradient of the chosen scalar loss with respect to x.
    pub fn input_gradient(&self, x: &[f64], loss: Loss) -> Result<Vec<f64>> {
        let logits = self.forward(x)?;
        let dl = loss_logit_gradient(&logits, loss, self.classes())?;
        self.backprop_logits(x, &dl)
    }

    /// Scalar loss value, mainly for finite-difference checks.
    pub fn loss_value(&self, x: &[f64], loss: Loss) -> Result<f64> {
        let logits = self.forward(x)?;
        match loss {
            Loss::CrossEntropy { label } => {
                if label >= logits.len() {
                    return Err(Error::Config(format!("label {label} out of range")));
                }
                Ok(log_sum_exp(&logits) - logits[label])
            }
            Loss::LogitDiff { pos, neg } => {
                if pos >= logits.len() || neg >= logits.len() {
                    return Err(Error::Config("logit index out of range".into()));
                }
                Ok(logits[pos] - logits[neg])
            }
        }
    }
}

pub(crate) fn loss_logit_gradient(logits: &[f64], loss: Loss, classes: usize) -> Result<Vec<f64>> {
    match loss {
        Loss::CrossEntropy { label } => {
            if label >= classes {
                return Err(Error::Config(format!("label {label} out of range")));
            }
            let mut dl = softmax(logits);
            dl[label] -= 1.0;
            Ok(dl)
        }
        Loss::LogitDiff { pos, neg } => {
            if pos >= classes || neg >= classes {
                return Err(Error::Config("logit index out of range".into()));
            }
            let mut dl = vec![0.0; classes];
            dl[pos] += 1.0;
            dl[neg] -= 1.0;
            Ok(dl)
        }
    }
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln()
}
