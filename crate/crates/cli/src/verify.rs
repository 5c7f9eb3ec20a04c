//! Re-checks invariants over the persisted tables of a completed run
//! directory, without recomputing attacks.

use std::path::Path;

use anyhow::{bail, Context, Result};

use transferbench_core::fingerprint::SimilarityMatrix;
use transferbench_core::metrics::{
    transfer_matrix, DistortionTable, TransferMatrix, BB_REF, WB_REF,
};
use transferbench_core::zoo::io as zoo_io;

use crate::config::RunConfig;
use crate::manifest::{hash_file, RunManifest};
use crate::pipeline::CONFIG_COPY;

/// Every violation found, empty when the directory checks out.
pub fn verify(dir: &Path) -> Result<Vec<String>> {
    let config = RunConfig::load(&dir.join(CONFIG_COPY)).context("loading config copy")?;
    let manifest = RunManifest::load(dir).context("loading manifest")?;
    let mut problems = Vec::new();

    // Artifact hashes.
    for (stage, record) in &manifest.stages {
        for artifact in &record.artifacts {
            let path = dir.join(&artifact.path);
            match hash_file(&path) {
                Ok(h) if h == artifact.sha256 => {}
                Ok(_) => problems.push(format!("{stage}: {} content changed", artifact.path)),
                Err(_) => problems.push(format!("{stage}: {} missing", artifact.path)),
            }
        }
    }

    let zoo = zoo_io::load_zoo(&dir.join("zoo")).context("loading zoo")?;
    for m in &zoo.models {
        if m.eval_accuracy < config.zoo.accuracy_floor {
            problems.push(format!(
                "zoo: model `{}` accuracy {:.4} below floor {:.4}",
                m.id, m.eval_accuracy, config.zoo.accuracy_floor
            ));
        }
    }

    let filter: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("filter.json"))?)?;
    let sample_ids: Vec<u32> = filter["attack_sample_ids"]
        .as_array()
        .map(|a| a.iter().filter_map(|v| v.as_u64().map(|x| x as u32)).collect())
        .unwrap_or_default();
    if sample_ids.len() != config.evaluation.samples {
        problems.push(format!(
            "filter: {} attack samples persisted, config wants {}",
            sample_ids.len(),
            config.evaluation.samples
        ));
    }

    let references = DistortionTable::read_csv(&dir.join("tables/references.csv"))?;
    let transfer = DistortionTable::read_csv(&dir.join("tables/transfer.csv"))?;

    // Distortions are nonnegative and reference rows exist everywhere.
    for row in references.rows().chain(transfer.rows()) {
        if row.d < 0.0 || !row.d.is_finite() {
            problems.push(format!(
                "table: row ({}, {}, {}, {}) has invalid distortion {}",
                row.attack, row.source, row.target, row.sample, row.d
            ));
        }
    }
    for m in &zoo.models {
        for which in [WB_REF, BB_REF] {
            if let Err(e) = references.reference_list(which, &m.id, &sample_ids) {
                problems.push(format!("references: {e}"));
            }
        }
    }

    // Matrices recompute to the persisted values.
    let families: Vec<(String, String)> =
        zoo.models.iter().map(|m| (m.id.clone(), m.family.clone())).collect();
    let mut combined = transfer.clone();
    for row in references.rows() {
        combined.insert(row.clone())?;
    }
    for attack in config.source_attack_ids() {
        let path = dir.join(format!("matrices/{attack}.csv"));
        let persisted = read_matrix_csv(&path, &attack)?;
        let recomputed = transfer_matrix(&combined, &attack, &families, &sample_ids)?;
        if persisted.model_ids != recomputed.model_ids {
            problems.push(format!("matrix {attack}: model ordering changed"));
            continue;
        }
        for (i, (p, r)) in persisted.values.iter().zip(&recomputed.values).enumerate() {
            if (p - r).abs() > 1e-9 * r.abs().max(1.0) {
                problems.push(format!("matrix {attack}: cell {i} is {p}, recomputed {r}"));
                break;
            }
        }
    }

    // Similarity matrices are symmetric with unit diagonal.
    for budget in budgets(&config) {
        let path = dir.join(format!("fingerprint/similarity_b{budget}.csv"));
        let sim = SimilarityMatrix::read_csv(&path, "verify", budget)?;
        for a in &sim.model_ids {
            match sim.get(a, a) {
                Some(v) if (v - 1.0).abs() < 1e-12 => {}
                Some(v) => problems.push(format!(
                    "similarity b{budget}: diagonal for `{a}` is {v}, expected 1"
                )),
                None => problems.push(format!("similarity b{budget}: missing diagonal for `{a}`")),
            }
        }
    }

    Ok(problems)
}

fn budgets(config: &RunConfig) -> Vec<usize> {
    let mut budgets = config.fingerprint.sweep.clone();
    budgets.push(config.fingerprint.budget);
    budgets.sort_unstable();
    budgets.dedup();
    budgets
}

fn read_matrix_csv(path: &Path, attack: &str) -> Result<TransferMatrix> {
    let mut r = csv::Reader::from_path(path)
        .with_context(|| format!("opening matrix {}", path.display()))?;
    let model_ids: Vec<String> = r.headers()?.iter().skip(1).map(str::to_string).collect();
    let mut values = Vec::new();
    for record in r.records() {
        let rec = record?;
        for j in 0..model_ids.len() {
            let v: f64 = rec[j + 1].parse().context("parsing matrix value")?;
            values.push(v);
        }
    }
    if values.len() != model_ids.len() * model_ids.len() {
        bail!("matrix {} has wrong shape", path.display());
    }
    let same_family = vec![false; values.len()];
    Ok(TransferMatrix { attack: attack.to_string(), model_ids, values, same_family })
}
