//! Run configuration: one TOML file drives the whole benchmark. All
//! randomness flows from the root seed through named sub-seeds per stage.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use transferbench_core::attack::{
    BlackBoxConfig, TransferAttackId, TransferConfig, WhiteBoxAttackId, WhiteBoxConfig,
};
use transferbench_core::geometry::LineSearchParams;
use transferbench_core::zoo::ArchSpec;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub zoo: ZooConfig,
    pub line_search: LineSearchConfig,
    pub reference: ReferenceConfig,
    pub transfer: TransferSection,
    pub fingerprint: FingerprintConfig,
    pub evaluation: EvaluationConfig,
    pub experiments: ExperimentsConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub train: usize,
    pub eval: usize,
    pub classes: usize,
    pub features: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZooConfig {
    pub accuracy_floor: f64,
    pub models: Vec<ModelSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub id: String,
    pub family: String,
    #[serde(flatten)]
    pub arch: ArchSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineSearchConfig {
    pub initial_step: f64,
    pub tolerance: f64,
    pub cap: f64,
}

impl LineSearchConfig {
    pub fn params(&self) -> LineSearchParams {
        LineSearchParams {
            initial_step: self.initial_step,
            tolerance: self.tolerance,
            cap: self.cap,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceConfig {
    pub whitebox: Vec<WhiteBoxConfig>,
    pub blackbox: BlackBoxSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlackBoxSection {
    pub budget: usize,
    pub restarts: usize,
    /// Re-run the reference at twice the budget to audit convergence.
    #[serde(default)]
    pub doubling_check: bool,
}

impl BlackBoxSection {
    pub fn config(&self, seed: u64) -> BlackBoxConfig {
        BlackBoxConfig { budget: self.budget, restarts: self.restarts, seed }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferSection {
    pub attacks: Vec<TransferConfig>,
    /// White-box attacks additionally run as transferable direction
    /// generators on source models, for attack pooling.
    #[serde(default)]
    pub pooled_whitebox: Vec<WhiteBoxAttackId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FingerprintConfig {
    pub budget: usize,
    /// Budgets for the image-count study; each must fit in the reserve.
    #[serde(default)]
    pub sweep: Vec<usize>,
    /// Evaluation samples set aside (by id order) as the benign query pool,
    /// disjoint from the attack set.
    pub reserve: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationConfig {
    /// Attack set size after the correctly-classified-by-all filter.
    pub samples: usize,
    pub family_exclusion: bool,
    /// Whether a source joins its own surrogate pool.
    #[serde(default)]
    pub transq_include_self: bool,
    /// Distortion budget of the success-rate selection baseline.
    pub asr_distortion_budget: f64,
    pub random_reps: usize,
    /// Attack used for ensemble evaluation.
    pub ensemble_attack: TransferAttackId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentsConfig {
    pub best_worst: Option<BestWorstConfig>,
    pub attack_dependence: Option<AttackDependenceConfig>,
    pub epsilon_sweep: Option<EpsilonSweepConfig>,
    pub ensemble_size: Option<EnsembleSizeConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BestWorstConfig {
    pub attack: TransferAttackId,
    pub pool_sizes: Vec<usize>,
    pub reps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackDependenceConfig {
    pub pairs: Vec<(String, String)>,
    pub bins: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsilonSweepConfig {
    pub attack: TransferAttackId,
    pub epsilons: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleSizeConfig {
    pub sizes: Vec<usize>,
    pub reps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text).context("parsing config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every structural check that should fail before any compute starts.
    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.classes < 3 || d.features < 2 || d.train < d.classes || d.eval < d.classes {
            bail!("dataset sizes are degenerate");
        }
        if self.zoo.models.is_empty() {
            bail!("zoo has no models");
        }
        let mut ids = BTreeSet::new();
        for m in &self.zoo.models {
            if !ids.insert(&m.id) {
                bail!("duplicate model id `{}`", m.id);
            }
            m.arch.validate().map_err(|e| anyhow::anyhow!("model `{}`: {e}", m.id))?;
            if m.id.contains(['+', ',']) || m.id.contains("ens(") {
                bail!("model id `{}` uses reserved characters", m.id);
            }
        }
        let families: BTreeSet<&str> = self.zoo.models.iter().map(|m| m.family.as_str()).collect();
        if families.len() < 3 {
            bail!("zoo needs at least 3 families, got {}", families.len());
        }
        for fam in &families {
            let members = self.zoo.models.iter().filter(|m| &m.family == fam).count();
            if members < 2 {
                bail!("family `{fam}` has {members} member(s), need at least 2");
            }
        }
        self.line_search
            .params()
            .validate()
            .map_err(|e| anyhow::anyhow!("line search: {e}"))?;
        if self.reference.whitebox.is_empty() {
            bail!("white-box reference pool is empty");
        }
        for wb in &self.reference.whitebox {
            wb.validate().map_err(|e| anyhow::anyhow!("white-box reference: {e}"))?;
        }
        self.reference
            .blackbox
            .config(0)
            .validate()
            .map_err(|e| anyhow::anyhow!("black-box reference: {e}"))?;
        if self.transfer.attacks.is_empty() {
            bail!("no transfer attacks configured");
        }
        for t in &self.transfer.attacks {
            t.validate().map_err(|e| anyhow::anyhow!("transfer attack: {e}"))?;
        }
        let transfer_ids: BTreeSet<&str> =
            self.transfer.attacks.iter().map(|t| t.attack.name()).collect();
        if transfer_ids.len() != self.transfer.attacks.len() {
            bail!("duplicate transfer attack ids");
        }
        if !transfer_ids.contains(self.evaluation.ensemble_attack.name()) {
            bail!(
                "ensemble attack `{}` is not among the configured transfer attacks",
                self.evaluation.ensemble_attack.name()
            );
        }
        let fp = &self.fingerprint;
        if fp.budget < 10 {
            bail!("fingerprint budget {} below minimum 10", fp.budget);
        }
        if fp.budget > fp.reserve || fp.sweep.iter().any(|&b| b > fp.reserve) {
            bail!("fingerprint budgets must fit in the reserve of {}", fp.reserve);
        }
        if fp.sweep.iter().any(|&b| b < 10) {
            bail!("fingerprint sweep budgets must be at least 10");
        }
        if fp.reserve >= d.eval {
            bail!("fingerprint reserve {} leaves no eval samples for attacks", fp.reserve);
        }
        if self.evaluation.samples > d.eval - fp.reserve {
            bail!(
                "evaluation wants {} samples but only {} eval samples remain after the \
                 fingerprint reserve",
                self.evaluation.samples,
                d.eval - fp.reserve
            );
        }
        if self.evaluation.samples == 0 || self.evaluation.random_reps == 0 {
            bail!("evaluation needs positive sample count and random reps");
        }
        if self.evaluation.asr_distortion_budget <= 0.0 {
            bail!("success-rate baseline needs a positive distortion budget");
        }
        // The smallest candidate pool any target can have.
        let min_pool = if self.evaluation.family_exclusion {
            families
                .iter()
                .map(|fam| {
                    self.zoo.models.iter().filter(|m| &m.family != fam).count()
                })
                .min()
                .unwrap_or(0)
        } else {
            self.zoo.models.len() - 1
        };
        if min_pool == 0 {
            bail!("some target would have an empty source pool");
        }
        if min_pool < 3 {
            bail!("ensemble evaluation needs source pools of at least 3, smallest is {min_pool}");
        }
        if let Some(bw) = &self.experiments.best_worst {
            if bw.reps == 0 || bw.pool_sizes.is_empty() {
                bail!("best/worst curves need reps and pool sizes");
            }
            if bw.pool_sizes.iter().any(|&k| k == 0 || k > min_pool) {
                bail!("best/worst pool sizes must lie in 1..={min_pool}");
            }
            if !transfer_ids.contains(bw.attack.name()) {
                bail!("best/worst attack is not configured");
            }
        }
        if let Some(ad) = &self.experiments.attack_dependence {
            if ad.bins < 2 {
                bail!("attack dependence needs at least 2 bins");
            }
            for (a, b) in &ad.pairs {
                for name in [a, b] {
                    let known = transfer_ids.contains(name.as_str())
                        || self.transfer.pooled_whitebox.iter().any(|w| w.name() == name);
                    if !known {
                        bail!("attack dependence references unknown attack `{name}`");
                    }
                }
            }
        }
        if let Some(es) = &self.experiments.epsilon_sweep {
            if es.epsilons.is_empty() || es.epsilons.iter().any(|&e| e <= 0.0) {
                bail!("epsilon sweep needs positive epsilons");
            }
            if !transfer_ids.contains(es.attack.name()) {
                bail!("epsilon sweep attack is not configured");
            }
        }
        if let Some(en) = &self.experiments.ensemble_size {
            if en.reps == 0 || en.sizes.is_empty() {
                bail!("ensemble size study needs reps and sizes");
            }
            if en.sizes.iter().any(|&k| k == 0 || k > min_pool) {
                bail!("ensemble sizes must lie in 1..={min_pool}");
            }
            if !en.sizes.contains(&3) {
                bail!("ensemble sizes must include 3 for the top-3 comparison");
            }
        }
        Ok(())
    }

    /// Transfer attack config by id.
    pub fn transfer_attack(&self, id: TransferAttackId) -> Option<&TransferConfig> {
        self.transfer.attacks.iter().find(|t| t.attack == id)
    }

    /// Ids of every direction generator run on sources: transfer attacks
    /// plus the pooled white-box attacks.
    pub fn source_attack_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> =
            self.transfer.attacks.iter().map(|t| t.attack.name().to_string()).collect();
        for wb in &self.transfer.pooled_whitebox {
            ids.push(wb.name().to_string());
        }
        ids
    }
}
