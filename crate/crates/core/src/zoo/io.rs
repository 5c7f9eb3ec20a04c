//! Zoo persistence: a JSON manifest (id, family, architecture, seed,
//! accuracy) plus one parameter blob per model — flat little-endian f64
//! arrays with a JSON header giving the shapes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::zoo::arch::{Activation, ArchSpec};
use crate::zoo::model::{Layer, Model};
use crate::zoo::ModelZoo;

#[derive(Debug, Serialize, Deserialize)]
pub struct ZooManifestEntry {
    pub id: String,
    pub family: String,
    pub arch: ArchSpec,
    pub seed: u64,
    pub eval_accuracy: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlobHeader {
    layers: Vec<LayerShape>,
    total_values: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerShape {
    w_shape: [usize; 2],
    b_len: usize,
    activation: Activation,
}

pub fn save_zoo(dir: &Path, zoo: &ModelZoo) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest: Vec<ZooManifestEntry> = zoo
        .models
        .iter()
        .map(|m| ZooManifestEntry {
            id: m.id.clone(),
            family: m.family.clone(),
            arch: m.arch.clone(),
            seed: m.training_seed,
            eval_accuracy: m.eval_accuracy,
        })
        .collect();
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    for m in &zoo.models {
        save_parameters(dir, m)?;
    }
    Ok(())
}

pub fn load_zoo(dir: &Path) -> Result<ModelZoo> {
    let manifest: Vec<ZooManifestEntry> =
        serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    let mut models = Vec::with_capacity(manifest.len());
    for entry in manifest {
        models.push(load_parameters(dir, entry)?);
    }
    ModelZoo::new(models)
}

fn save_parameters(dir: &Path, model: &Model) -> Result<()> {
    let header = BlobHeader {
        layers: model
            .layers
            .iter()
            .map(|l| LayerShape {
                w_shape: [l.out_dim, l.in_dim],
                b_len: l.b.len(),
                activation: l.activation,
            })
            .collect(),
        total_values: model.layers.iter().map(|l| l.w.len() + l.b.len()).sum(),
    };
    fs::write(dir.join(format!("{}.json", model.id)), serde_json::to_vec_pretty(&header)?)?;
    let mut bytes = Vec::with_capacity(header.total_values * 8);
    for l in &model.layers {
        for v in l.w.iter().chain(&l.b) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join(format!("{}.bin", model.id)), bytes)?;
    Ok(())
}

fn load_parameters(dir: &Path, entry: ZooManifestEntry) -> Result<Model> {
    let header: BlobHeader =
        serde_json::from_slice(&fs::read(dir.join(format!("{}.json", entry.id)))?)?;
    let bytes = fs::read(dir.join(format!("{}.bin", entry.id)))?;
    if bytes.len() != header.total_values * 8 {
        return Err(Error::Input(format!(
            "parameter blob for `{}` has {} bytes, header declares {}",
            entry.id,
            bytes.len(),
            header.total_values * 8
        )));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut layers = Vec::with_capacity(header.layers.len());
    for shape in &header.layers {
        let [out_dim, in_dim] = shape.w_shape;
        let w: Vec<f64> = values.by_ref().take(out_dim * in_dim).collect();
        let b: Vec<f64> = values.by_ref().take(shape.b_len).collect();
        layers.push(Layer { w, b, in_dim, out_dim, activation: shape.activation });
    }
    Ok(Model {
        id: entry.id,
        family: entry.family,
        arch: entry.arch,
        layers,
        training_seed: entry.seed,
        eval_accuracy: entry.eval_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::dataset::generate_dataset;
    use crate::zoo::train::train_model;

    #[test]
    fn zoo_round_trips_through_disk() {
        let data = generate_dataset(5, 150, 30, 3, 8).unwrap();
        let arch = ArchSpec {
            hidden: vec![8],
            activation: Activation::Tanh,
            label_smoothing: 0.0,
            train_fraction: 1.0,
            learning_rate: 1.5,
            epochs: 300,
        };
        let mut models = Vec::new();
        for (i, fam) in [(0, "a"), (1, "a"), (2, "b"), (3, "b"), (4, "c"), (5, "c")] {
            models.push(train_model(&format!("m{i}"), fam, &arch, &data, 100 + i, 0.0).unwrap());
        }
        let zoo = ModelZoo::new(models).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_zoo(dir.path(), &zoo).unwrap();
        let loaded = load_zoo(dir.path()).unwrap();
        assert_eq!(zoo.models.len(), loaded.models.len());
        for (a, b) in zoo.models.iter().zip(&loaded.models) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.layers, b.layers);
            assert_eq!(a.eval_accuracy, b.eval_accuracy);
        }
    }
}
