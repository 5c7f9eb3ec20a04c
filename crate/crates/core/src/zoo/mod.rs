//! The model zoo: dataset generation, small classifier architectures grouped
//! into families, deterministic training, and persistence. Trained models are
//! immutable and serve as both attack sources and targets.

pub mod arch;
pub mod dataset;
pub mod io;
pub mod model;
pub mod train;

use std::collections::BTreeMap;

pub use arch::{Activation, ArchSpec};
pub use dataset::{generate_dataset, Dataset, Sample};
pub use model::{argmax, softmax, Loss, Model};
pub use train::{eval_accuracy, train_model};

use crate::error::{Error, Result};

/// An immutable collection of trained models indexed by architecture family.
#[derive(Debug, Clone)]
pub struct ModelZoo {
    pub models: Vec<Model>,
    pub family_index: BTreeMap<String, Vec<String>>,
}

impl ModelZoo {
    /// Validates the family structure: at least 3 families, at least 2
    /// members each (so same-family exclusion always leaves sources), and a
    /// shared feature/class dimension across every member.
    pub fn new(models: Vec<Model>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::Config("zoo must contain at least one model".into()));
        }
        let features = models[0].features();
        let classes = models[0].classes();
        let mut family_index: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for m in &models {
            if m.features() != features || m.classes() != classes {
                return Err(Error::Config(format!(
                    "model `{}` has dims ({}, {}), zoo uses ({features}, {classes})",
                    m.id,
                    m.features(),
                    m.classes()
                )));
            }
            family_index.entry(m.family.clone()).or_default().push(m.id.clone());
        }
        if family_index.len() < 3 {
            return Err(Error::Config(format!(
                "zoo needs at least 3 architecture families, got {}",
                family_index.len()
            )));
        }
        if let Some((fam, ids)) = family_index.iter().find(|(_, ids)| ids.len() < 2) {
            return Err(Error::Config(format!(
                "family `{fam}` has {} member(s), need at least 2",
                ids.len()
            )));
        }
        Ok(Self { models, family_index })
    }

    pub fn get(&self, id: &str) -> Option<&Model> {
        self.models.iter().find(|m| m.id == id)
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Model ids outside the given model's family, in zoo order. The source
    /// pool available against a target under same-family exclusion.
    pub fn cross_family_ids(&self, target_id: &str) -> Vec<String> {
        let family = self.get(target_id).map(|m| m.family.clone());
        self.models
            .iter()
            .filter(|m| Some(&m.family) != family.as_ref())
            .map(|m| m.id.clone())
            .collect()
    }
}
