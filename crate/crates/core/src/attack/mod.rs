//! Attack implementations: white-box references, transferable direction
//! generators, and the decision-only black-box reference.

pub mod blackbox;
pub mod transfer;
pub mod whitebox;

pub use blackbox::{blackbox_reference_distortions, run_blackbox, BlackBoxConfig, BlackBoxResult};
pub use transfer::{
    integrated_gradients, run_transfer, EnsembleSpec, TransferAttackId, TransferConfig,
};
pub use whitebox::{
    run_whitebox, whitebox_reference_distortions, ReferenceDistortion, WhiteBoxAttackId,
    WhiteBoxConfig,
};

use crate::error::{Error, Result};
use crate::zoo::{argmax, softmax, Model};

pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One or more source models attacked jointly through their averaged logits.
#[derive(Debug, Clone)]
pub struct SourceStack<'a> {
    members: Vec<&'a Model>,
}

impl<'a> SourceStack<'a> {
    pub fn single(model: &'a Model) -> Self {
        Self { members: vec![model] }
    }

    pub fn ensemble(members: Vec<&'a Model>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Config("ensemble needs at least one source".into()));
        }
        let (f, k) = (members[0].features(), members[0].classes());
        for m in &members {
            if m.features() != f || m.classes() != k {
                return Err(Error::Config(format!(
                    "ensemble member `{}` has mismatched dimensions",
                    m.id
                )));
            }
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[&'a Model] {
        &self.members
    }

    pub fn features(&self) -> usize {
        self.members[0].features()
    }

    pub fn classes(&self) -> usize {
        self.members[0].classes()
    }

    /// Logit average across members.
    pub fn forward_mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.classes()];
        for m in &self.members {
            for (a, l) in acc.iter_mut().zip(m.forward(x)?) {
                *a += l;
            }
        }
        let scale = 1.0 / self.members.len() as f64;
        acc.iter_mut().for_each(|v| *v *= scale);
        Ok(acc)
    }

    pub fn decide(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward_mean(x)?))
    }

    /// Gradient of the cross-entropy of the averaged logits w.r.t. the input.
    pub fn ce_input_gradient(&self, x: &[f64], label: usize) -> Result<Vec<f64>> {
        let logits = self.forward_mean(x)?;
        let mut dl = softmax(&logits);
        dl[label] -= 1.0;
        self.backprop_mean(x, &dl)
    }

    /// Gradient of `dl . mean_logits` w.r.t. the input.
    pub fn backprop_mean(&self, x: &[f64], dl: &[f64]) -> Result<Vec<f64>> {
        let scale = 1.0 / self.members.len() as f64;
        let mut acc = vec![0.0; x.len()];
        for m in &self.members {
            for (a, g) in acc.iter_mut().zip(m.backprop_logits(x, dl)?) {
                *a += g;
            }
        }
        acc.iter_mut().for_each(|v| *v *= scale);
        Ok(acc)
    }

    /// Every member must classify the input correctly before an attack runs.
    pub fn check_correct(&self, x: &[f64], y: usize) -> Result<()> {
        for m in &self.members {
            if m.decide(x)? != y {
                return Err(Error::Precondition(format!(
                    "source `{}` misclassifies the input",
                    m.id
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn check_finite(g: &[f64], context: &str) -> Result<()> {
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient in {context}")));
    }
    Ok(())
}

/// One sign-gradient step with the L-inf ball and unit-box projections.
pub(crate) fn signed_step(adv: &mut [f64], x: &[f64], g: &[f64], step_size: f64, epsilon: f64) {
    for i in 0..adv.len() {
        let moved = adv[i] + step_size * sign(g[i]);
        adv[i] = moved.clamp(x[i] - epsilon, x[i] + epsilon).clamp(0.0, 1.0);
    }
}
