//! Run manifest: per-stage status, artifact hashes, query accounting, and
//! timings. Persisted after every stage so an aborted run resumes where it
//! stopped and a completed run is skipped wholesale.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
    /// Decision queries an attacker would have spent against each target:
    /// fingerprint budget plus the line searches of the selected directions.
    #[serde(default)]
    pub attacker_queries: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub status: StageStatus,
    /// Hash of the stage's config slice chained with its upstream hashes.
    pub stage_hash: String,
    pub artifacts: Vec<Artifact>,
    pub duration_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn load_or_default(dir: &Path, config_hash: &str) -> Self {
        match Self::load(dir) {
            Ok(m) if m.config_hash == config_hash => m,
            _ => Self { config_hash: config_hash.to_string(), ..Default::default() },
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// A stage can be skipped when its hash matches and every artifact is
    /// still on disk with the recorded content hash.
    pub fn stage_is_current(&self, dir: &Path, name: &str, stage_hash: &str) -> bool {
        match self.stages.get(name) {
            Some(rec) if rec.status == StageStatus::Complete && rec.stage_hash == stage_hash => {
                rec.artifacts.iter().all(|a| {
                    let path = dir.join(&a.path);
                    matches!(hash_file(&path), Ok(h) if h == a.sha256)
                })
            }
            _ => false,
        }
    }

    pub fn record_stage(
        &mut self,
        dir: &Path,
        name: &str,
        stage_hash: &str,
        artifact_paths: &[PathBuf],
        duration_secs: f64,
    ) -> Result<()> {
        let mut artifacts = Vec::with_capacity(artifact_paths.len());
        for p in artifact_paths {
            let rel = p
                .strip_prefix(dir)
                .map(|r| r.to_string_lossy().into_owned())
                .unwrap_or_else(|_| p.to_string_lossy().into_owned());
            artifacts.push(Artifact { path: rel, sha256: hash_file(p)? });
        }
        self.stages.insert(
            name.to_string(),
            StageRecord {
                status: StageStatus::Complete,
                stage_hash: stage_hash.to_string(),
                artifacts,
                duration_secs,
            },
        );
        self.save(dir)
    }

    pub fn stage_hash(&self, name: &str) -> Option<&str> {
        self.stages.get(name).map(|r| r.stage_hash.as_str())
    }
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex(&hasher.finalize())
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hash_bytes(&bytes))
}

/// Hash any serializable value through its canonical JSON form.
pub fn hash_value<T: Serialize>(value: &T) -> Result<String> {
    Ok(hash_bytes(&serde_json::to_vec(value)?))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
