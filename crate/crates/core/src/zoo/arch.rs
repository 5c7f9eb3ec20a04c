use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden-layer nonlinearity. The output layer is always affine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed in terms of the pre-activation. relu'(0) := 0.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Architecture plus training hyperparameters; everything needed to rebuild
/// a model deterministically from (arch, dataset, seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    /// Hidden layer widths; empty means a plain linear softmax classifier.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Label-smoothing mass spread over the other classes (0 disables it).
    #[serde(default)]
    pub label_smoothing: f64,
    /// Fraction of the train split this model sees, drawn without
    /// replacement from its training seed. Data diversity keeps the zoo's
    /// decision boundaries from collapsing onto each other.
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    pub learning_rate: f64,
    pub epochs: usize,
}

fn default_train_fraction() -> f64 {
    1.0
}

impl ArchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::Config("hidden layer width must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "label smoothing {} outside [0, 1)",
                self.label_smoothing
            )));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) || self.train_fraction == 0.0 {
            return Err(Error::Config(format!(
                "train fraction {} outside (0, 1]",
                self.train_fraction
            )));
        }
        if self.learning_rate <= 0.0 || self.epochs == 0 {
            return Err(Error::Config("learning rate and epochs must be positive".into()));
        }
        Ok(())
    }

    /// Layer dimensions for the given task: input, hidden..., classes.
    pub fn dims(&self, features: usize, classes: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(features);
        dims.extend_from_slice(&self.hidden);
        dims.push(classes);
        dims
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_width_hidden_layer_is_rejected() {
        let arch = ArchSpec {
            hidden: vec![0],
            activation: Activation::Tanh,
            label_smoothing: 0.0,
            train_fraction: 1.0,
            learning_rate: 0.5,
            epochs: 10,
        };
        assert!(arch.validate().is_err());
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        assert_eq!(Activation::Relu.derivative(0.0), 0.0);
        assert_eq!(Activation::Relu.derivative(1.0), 1.0);
    }
}
