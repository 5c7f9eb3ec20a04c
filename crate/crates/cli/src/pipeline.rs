//! Stage-ordered benchmark pipeline. Every stage persists its outputs with
//! content hashes; a re-run whose config and upstream artifacts are
//! unchanged loads from disk instead of recomputing.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use transferbench_core::attack::{
    run_blackbox, run_transfer, run_whitebox, whitebox_reference_distortions, SourceStack,
    TransferConfig, WhiteBoxConfig,
};
use transferbench_core::fingerprint::{DecisionProfile, SimilarityMatrix};
use transferbench_core::geometry::min_distortion_along;
use transferbench_core::metrics::{
    transfer_matrix, DistortionRow, DistortionTable, OperatingCharacteristic, TransferMatrix,
    BB_REF, NO_SOURCE, WB_REF,
};
use transferbench_core::rng::sub_seed;
use transferbench_core::select::{FitTable, SelectionResult, TransQVariant};
use transferbench_core::zoo::{generate_dataset, io as zoo_io, train_model, Dataset, Model, ModelZoo, Sample};

use crate::config::RunConfig;
use crate::ensembles::{run_ensemble_stage, EnsembleSummary};
use crate::experiments;
use crate::manifest::{hash_value, RunManifest};
use crate::report;
use crate::selection::{run_selection_stage, SelectionSummary};

pub const CONFIG_COPY: &str = "config.toml";

/// Everything later stages and the report consume.
pub struct Artifacts {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    pub dataset: Dataset,
    pub zoo: ModelZoo,
    pub attack_samples: Vec<Sample>,
    pub dropped_samples: Vec<u32>,
    pub references: DistortionTable,
    pub references_doubled: Option<DistortionTable>,
    pub transfer: DistortionTable,
    pub matrices: BTreeMap<String, TransferMatrix>,
    pub similarity: BTreeMap<usize, SimilarityMatrix>,
    pub fit_tables: BTreeMap<(String, TransQVariant), FitTable>,
    pub selection: SelectionSummary,
    pub ensembles: EnsembleSummary,
}

pub struct RunOutcome {
    pub manifest: RunManifest,
    /// Stage names that were actually recomputed in this invocation.
    pub executed: Vec<String>,
    pub artifacts: Artifacts,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetSummary {
    seed: u64,
    train: usize,
    eval: usize,
    classes: usize,
    features: usize,
    content_hash: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct FilterOutput {
    attack_sample_ids: Vec<u32>,
    dropped_sample_ids: Vec<u32>,
}

/// Execute the full pipeline for a validated config.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    let out = config.output.dir.clone();
    fs::create_dir_all(&out)?;
    for sub in ["zoo", "tables", "matrices", "curves", "fingerprint", "selection", "experiments"] {
        fs::create_dir_all(out.join(sub))?;
    }
    fs::write(out.join(CONFIG_COPY), toml::to_string_pretty(config)?)?;

    let config_hash = hash_value(config)?;
    let mut manifest = RunManifest::load_or_default(&out, &config_hash);
    manifest.config_hash = config_hash.clone();
    let mut executed: Vec<String> = Vec::new();
    let root = config.seed;

    // -- dataset ----------------------------------------------------------
    let dataset_hash = hash_value(&(&config.dataset, root, "dataset-v1"))?;
    let dataset_seed = sub_seed(root, "dataset");
    let dataset = stage(
        &out,
        &mut manifest,
        &mut executed,
        "dataset",
        &dataset_hash,
        || {
            // Regeneration is pure, so loading just regenerates.
            generate_dataset(
                dataset_seed,
                config.dataset.train,
                config.dataset.eval,
                config.dataset.classes,
                config.dataset.features,
            )
            .map_err(Into::into)
        },
        || {
            let data = generate_dataset(
                dataset_seed,
                config.dataset.train,
                config.dataset.eval,
                config.dataset.classes,
                config.dataset.features,
            )?;
            let summary = DatasetSummary {
                seed: dataset_seed,
                train: data.train.len(),
                eval: data.eval.len(),
                classes: data.classes,
                features: data.features,
                content_hash: hash_value(&data)?,
            };
            let path = out.join("dataset.json");
            fs::write(&path, serde_json::to_vec_pretty(&summary)?)?;
            Ok((data, vec![path]))
        },
    )?;

    // -- zoo ----------------------------------------------------------------
    let zoo_hash = hash_value(&(&dataset_hash, &config.zoo, "zoo-v1"))?;
    let zoo_dir = out.join("zoo");
    let zoo = stage(
        &out,
        &mut manifest,
        &mut executed,
        "zoo",
        &zoo_hash,
        || zoo_io::load_zoo(&zoo_dir).map_err(Into::into),
        || {
            let models: Vec<Model> = config
                .zoo
                .models
                .par_iter()
                .map(|spec| {
                    train_model(
                        &spec.id,
                        &spec.family,
                        &spec.arch,
                        &dataset,
                        sub_seed(root, &format!("train:{}", spec.id)),
                        config.zoo.accuracy_floor,
                    )
                })
                .collect::<transferbench_core::Result<_>>()?;
            let zoo = ModelZoo::new(models)?;
            zoo_io::save_zoo(&zoo_dir, &zoo)?;
            let mut paths = vec![zoo_dir.join("manifest.json")];
            for m in &zoo.models {
                paths.push(zoo_dir.join(format!("{}.json", m.id)));
                paths.push(zoo_dir.join(format!("{}.bin", m.id)));
            }
            Ok((zoo, paths))
        },
    )?;

    // -- filter: correctly classified by all models, outside the reserve ----
    let filter_hash = hash_value(&(
        &zoo_hash,
        config.evaluation.samples,
        config.fingerprint.reserve,
        "filter-v1",
    ))?;
    let filter_path = out.join("filter.json");
    let filter = stage(
        &out,
        &mut manifest,
        &mut executed,
        "filter",
        &filter_hash,
        || {
            let bytes = fs::read(&filter_path)?;
            Ok(serde_json::from_slice::<FilterOutput>(&bytes)?)
        },
        || {
            let mut kept = Vec::new();
            let mut dropped = Vec::new();
            for s in dataset.eval.iter().skip(config.fingerprint.reserve) {
                let ok = zoo
                    .models
                    .iter()
                    .map(|m| m.decide(&s.x).map(|c| c == s.y))
                    .collect::<transferbench_core::Result<Vec<bool>>>()?
                    .into_iter()
                    .all(|b| b);
                if ok && kept.len() < config.evaluation.samples {
                    kept.push(s.id);
                } else if !ok {
                    dropped.push(s.id);
                }
            }
            if kept.len() < config.evaluation.samples {
                bail!(
                    "only {} of the requested {} samples are correctly classified by all models",
                    kept.len(),
                    config.evaluation.samples
                );
            }
            let output = FilterOutput { attack_sample_ids: kept, dropped_sample_ids: dropped };
            fs::write(&filter_path, serde_json::to_vec_pretty(&output)?)?;
            Ok((output, vec![filter_path.clone()]))
        },
    )?;
    let attack_samples: Vec<Sample> = filter
        .attack_sample_ids
        .iter()
        .map(|id| {
            dataset
                .eval_sample(*id)
                .cloned()
                .ok_or_else(|| anyhow!("filtered sample {id} missing from eval split"))
        })
        .collect::<Result<_>>()?;

    // -- references ----------------------------------------------------------
    let ls = config.line_search.params();
    let refs_hash = hash_value(&(
        &filter_hash,
        &config.reference,
        &config.line_search,
        "references-v1",
    ))?;
    let refs_path = out.join("tables/references.csv");
    let refs_doubled_path = out.join("tables/references_doubled.csv");
    let (references, references_doubled) = stage(
        &out,
        &mut manifest,
        &mut executed,
        "references",
        &refs_hash,
        || {
            let main = DistortionTable::read_csv(&refs_path)?;
            let doubled = if config.reference.blackbox.doubling_check {
                Some(DistortionTable::read_csv(&refs_doubled_path)?)
            } else {
                None
            };
            Ok((main, doubled))
        },
        || {
            let mut table = DistortionTable::new();
            // White-box reference rows.
            let wb_rows: Vec<Vec<DistortionRow>> = zoo
                .models
                .par_iter()
                .map(|target| -> transferbench_core::Result<Vec<DistortionRow>> {
                    let cfgs: Vec<WhiteBoxConfig> = config
                        .reference
                        .whitebox
                        .iter()
                        .map(|c| WhiteBoxConfig {
                            seed: sub_seed(root, &format!("wbref:{}:{}", c.attack.name(), target.id)),
                            ..c.clone()
                        })
                        .collect();
                    let refs = whitebox_reference_distortions(target, &attack_samples, &cfgs, &ls)?;
                    Ok(refs
                        .into_iter()
                        .map(|r| DistortionRow {
                            attack: WB_REF.into(),
                            source: NO_SOURCE.into(),
                            target: target.id.clone(),
                            sample: r.sample_id,
                            d: r.d,
                            status: r.status.into(),
                            clipped: r.clipped,
                            queries: r.queries,
                        })
                        .collect())
                })
                .collect::<transferbench_core::Result<_>>()?;
            for rows in wb_rows {
                for row in rows {
                    table.insert(row)?;
                }
            }
            // Black-box reference rows, optionally at the doubled budget too.
            let budgets: Vec<(usize, bool)> = if config.reference.blackbox.doubling_check {
                vec![(config.reference.blackbox.budget, false), (config.reference.blackbox.budget * 2, true)]
            } else {
                vec![(config.reference.blackbox.budget, false)]
            };
            let mut doubled_table =
                config.reference.blackbox.doubling_check.then(DistortionTable::new);
            for (budget, is_doubled) in budgets {
                let work: Vec<(usize, usize)> = (0..zoo.models.len())
                    .flat_map(|t| (0..attack_samples.len()).map(move |s| (t, s)))
                    .collect();
                let rows: Vec<DistortionRow> = work
                    .par_iter()
                    .map(|&(ti, si)| -> transferbench_core::Result<DistortionRow> {
                        let target = &zoo.models[ti];
                        let sample = &attack_samples[si];
                        let cfg = transferbench_core::attack::BlackBoxConfig {
                            budget,
                            restarts: config.reference.blackbox.restarts,
                            seed: sub_seed(root, &format!("bbref:{}:{}", target.id, sample.id)),
                        };
                        let res = run_blackbox(target, sample, &cfg, &ls)?;
                        Ok(DistortionRow {
                            attack: BB_REF.into(),
                            source: NO_SOURCE.into(),
                            target: target.id.clone(),
                            sample: sample.id,
                            d: res.d,
                            status: res.status.into(),
                            clipped: res.clipped,
                            queries: res.queries,
                        })
                    })
                    .collect::<transferbench_core::Result<_>>()?;
                let sink = if is_doubled { doubled_table.as_mut().unwrap() } else { &mut table };
                for row in rows {
                    sink.insert(row)?;
                }
            }
            table.write_csv(&refs_path)?;
            let mut paths = vec![refs_path.clone()];
            if let Some(d) = &doubled_table {
                d.write_csv(&refs_doubled_path)?;
                paths.push(refs_doubled_path.clone());
            }
            Ok(((table, doubled_table), paths))
        },
    )?;

    // -- transfer distortion tables ------------------------------------------
    let transfer_hash = hash_value(&(
        &refs_hash,
        &config.transfer,
        &config.line_search,
        "transfer-v1",
    ))?;
    let transfer_path = out.join("tables/transfer.csv");
    let transfer = stage(
        &out,
        &mut manifest,
        &mut executed,
        "transfer",
        &transfer_hash,
        || DistortionTable::read_csv(&transfer_path).map_err(Into::into),
        || {
            let attack_ids = config.source_attack_ids();
            let n_samples = attack_samples.len();
            let work: Vec<(String, usize, usize)> = attack_ids
                .iter()
                .flat_map(|a| {
                    (0..zoo.models.len()).flat_map(move |s| {
                        let a = a.clone();
                        (0..n_samples).map(move |x| (a.clone(), s, x))
                    })
                })
                .collect();
            let batches: Vec<Vec<DistortionRow>> = work
                .par_iter()
                .map(|(attack_id, si, xi)| -> Result<Vec<DistortionRow>> {
                    let source = &zoo.models[*si];
                    let sample = &attack_samples[*xi];
                    let seed = sub_seed(root, &format!("dir:{attack_id}:{}:{}", source.id, sample.id));
                    let dir = generate_source_direction(config, attack_id, source, sample, seed)?;
                    let mut rows = Vec::with_capacity(zoo.models.len());
                    for target in &zoo.models {
                        let res = min_distortion_along(target, sample, &dir, &ls, None)
                            .map_err(anyhow::Error::from)?;
                        rows.push(DistortionRow {
                            attack: attack_id.clone(),
                            source: source.id.clone(),
                            target: target.id.clone(),
                            sample: sample.id,
                            d: res.d,
                            status: res.status.into(),
                            clipped: res.clipped,
                            queries: res.queries as u64,
                        });
                    }
                    Ok(rows)
                })
                .collect::<Result<_>>()?;
            let mut table = DistortionTable::new();
            for batch in batches {
                for row in batch {
                    table.insert(row)?;
                }
            }
            table.write_csv(&transfer_path)?;
            Ok((table, vec![transfer_path.clone()]))
        },
    )?;

    // -- transferability matrices and curve exports ---------------------------
    let matrices_hash = hash_value(&(&transfer_hash, "matrices-v1"))?;
    let families: Vec<(String, String)> =
        zoo.models.iter().map(|m| (m.id.clone(), m.family.clone())).collect();
    let sample_ids = filter.attack_sample_ids.clone();
    let matrices = stage(
        &out,
        &mut manifest,
        &mut executed,
        "matrices",
        &matrices_hash,
        || compute_matrices(config, &transfer, &references, &families, &sample_ids).map(|(m, _)| m),
        || {
            let (matrices, mut paths) =
                compute_matrices(config, &transfer, &references, &families, &sample_ids)?;
            for (attack, matrix) in &matrices {
                let path = out.join(format!("matrices/{attack}.csv"));
                matrix.write_csv(&path)?;
                paths.push(path);
                let flags = out.join(format!("matrices/{attack}.flags.csv"));
                write_flags_csv(&flags, matrix)?;
                paths.push(flags);
            }
            paths.extend(write_curves(&out, config, &zoo, &transfer, &references, &sample_ids)?);
            Ok((matrices, paths))
        },
    )?;

    // -- fingerprints ----------------------------------------------------------
    let fingerprint_hash = hash_value(&(&zoo_hash, &config.fingerprint, "fingerprint-v1"))?;
    let similarity_json = out.join("fingerprint/similarity.json");
    let similarity = stage(
        &out,
        &mut manifest,
        &mut executed,
        "fingerprint",
        &fingerprint_hash,
        || {
            let bytes = fs::read(&similarity_json)?;
            let flat: Vec<(usize, SimilarityMatrix)> = serde_json::from_slice(&bytes)?;
            Ok(flat.into_iter().collect::<BTreeMap<usize, SimilarityMatrix>>())
        },
        || {
            let reserve = &dataset.eval[..config.fingerprint.reserve];
            let full: Vec<(String, Vec<usize>)> = zoo
                .models
                .par_iter()
                .map(|m| -> transferbench_core::Result<(String, Vec<usize>)> {
                    let decisions = reserve
                        .iter()
                        .map(|s| m.decide(&s.x))
                        .collect::<transferbench_core::Result<Vec<usize>>>()?;
                    Ok((m.id.clone(), decisions))
                })
                .collect::<transferbench_core::Result<_>>()?;
            let mut budgets: Vec<usize> = config.fingerprint.sweep.clone();
            budgets.push(config.fingerprint.budget);
            budgets.sort_unstable();
            budgets.dedup();
            let mut by_budget = BTreeMap::new();
            let mut paths = Vec::new();
            for &budget in &budgets {
                let query_set_id = format!("eval[0..{budget})");
                let profiles: Vec<DecisionProfile> = full
                    .iter()
                    .map(|(id, decisions)| DecisionProfile {
                        model_id: id.clone(),
                        decisions: decisions[..budget].to_vec(),
                        query_set_id: query_set_id.clone(),
                    })
                    .collect();
                let matrix = transferbench_core::fingerprint::similarity_matrix(&profiles)?;
                let path = out.join(format!("fingerprint/similarity_b{budget}.csv"));
                matrix.write_csv(&path)?;
                paths.push(path);
                by_budget.insert(budget, matrix);
            }
            let flat: Vec<(&usize, &SimilarityMatrix)> = by_budget.iter().collect();
            fs::write(&similarity_json, serde_json::to_vec_pretty(&flat)?)?;
            paths.push(similarity_json.clone());
            Ok((by_budget, paths))
        },
    )?;

    // -- transfer quality, fit scores, and selections ---------------------------
    let selection_hash = hash_value(&(
        &transfer_hash,
        &fingerprint_hash,
        &config.evaluation,
        "selection-v1",
    ))?;
    let summary_path = out.join("selection/summary.json");
    let (fit_tables, selection) = stage(
        &out,
        &mut manifest,
        &mut executed,
        "selection",
        &selection_hash,
        || {
            let mut tables = BTreeMap::new();
            for attack in config.source_attack_ids() {
                for variant in [TransQVariant::One, TransQVariant::Two] {
                    let path = out.join(format!("selection/fit_{attack}_{}.csv", variant.name()));
                    tables.insert(
                        (attack.clone(), variant),
                        FitTable::read_csv(&path, &attack, variant)?,
                    );
                }
            }
            let summary: SelectionSummary = serde_json::from_slice(&fs::read(&summary_path)?)?;
            Ok((tables, summary))
        },
        || {
            let (tables, summary, rows) = run_selection_stage(
                config,
                &zoo,
                &attack_samples,
                &references,
                &transfer,
                &similarity,
                root,
            )?;
            let mut paths = Vec::new();
            for ((attack, variant), table) in &tables {
                let path = out.join(format!("selection/fit_{attack}_{}.csv", variant.name()));
                table.write_csv(&path)?;
                paths.push(path);
            }
            let rows_path = out.join("selection/selections.csv");
            SelectionResult::write_csv(&rows, &rows_path)?;
            paths.push(rows_path);
            fs::write(&summary_path, serde_json::to_vec_pretty(&summary)?)?;
            paths.push(summary_path.clone());
            let sweep_path = out.join("selection/sweep.json");
            fs::write(&sweep_path, serde_json::to_vec_pretty(&summary.sweep)?)?;
            paths.push(sweep_path);
            Ok(((tables, summary), paths))
        },
    )?;
    for (key, queries) in &selection.attacker_queries {
        manifest.attacker_queries.insert(key.clone(), *queries);
    }
    manifest.save(&out)?;

    // -- ensemble attacks ---------------------------------------------------------
    let ensembles_hash = hash_value(&(
        &selection_hash,
        &config.experiments.ensemble_size,
        "ensembles-v1",
    ))?;
    let ensemble_summary_path = out.join("selection/ensemble_summary.json");
    let ensembles = stage(
        &out,
        &mut manifest,
        &mut executed,
        "ensembles",
        &ensembles_hash,
        || Ok(serde_json::from_slice::<EnsembleSummary>(&fs::read(&ensemble_summary_path)?)?),
        || {
            let (summary, rows) = run_ensemble_stage(
                config,
                &zoo,
                &attack_samples,
                &references,
                &transfer,
                &similarity,
                &fit_tables,
                root,
            )?;
            let mut paths = Vec::new();
            let rows_path = out.join("selection/ensembles.csv");
            SelectionResult::write_csv(&rows, &rows_path)?;
            paths.push(rows_path);
            fs::write(&ensemble_summary_path, serde_json::to_vec_pretty(&summary)?)?;
            paths.push(ensemble_summary_path.clone());
            let exp_path = out.join("experiments/ensemble_size.json");
            fs::write(&exp_path, serde_json::to_vec_pretty(&summary)?)?;
            paths.push(exp_path);
            Ok((summary, paths))
        },
    )?;

    // -- remaining experiment suites -----------------------------------------------
    let experiments_hash = hash_value(&(
        &transfer_hash,
        &refs_hash,
        &config.experiments,
        "experiments-v1",
    ))?;
    stage(
        &out,
        &mut manifest,
        &mut executed,
        "experiments",
        &experiments_hash,
        || Ok(()),
        || {
            let paths = experiments::run_all(
                config,
                &out,
                &zoo,
                &attack_samples,
                &references,
                &transfer,
                root,
            )?;
            Ok(((), paths))
        },
    )?;

    // -- report -----------------------------------------------------------------
    let report_hash = hash_value(&(
        &matrices_hash,
        &selection_hash,
        &ensembles_hash,
        &experiments_hash,
        "report-v1",
    ))?;
    let artifacts = Artifacts {
        config: config.clone(),
        out_dir: out.clone(),
        dataset,
        zoo,
        attack_samples,
        dropped_samples: filter.dropped_sample_ids,
        references,
        references_doubled,
        transfer,
        matrices,
        similarity,
        fit_tables,
        selection,
        ensembles,
    };
    stage(
        &out,
        &mut manifest,
        &mut executed,
        "report",
        &report_hash,
        || Ok(()),
        || {
            let path = report::write_report(&artifacts)?;
            Ok(((), vec![path]))
        },
    )?;

    Ok(RunOutcome { manifest, executed, artifacts })
}

/// Load the artifacts of a completed run directory without recomputation.
pub fn load_artifacts(dir: &Path) -> Result<Artifacts> {
    let config = RunConfig::load(&dir.join(CONFIG_COPY))?;
    let mut config = config;
    config.output.dir = dir.to_path_buf();
    let outcome = run(&config)?;
    if !outcome.executed.is_empty() {
        bail!(
            "run directory {} is incomplete; stages {:?} had to be recomputed",
            dir.display(),
            outcome.executed
        );
    }
    Ok(outcome.artifacts)
}

fn stage<T>(
    out: &Path,
    manifest: &mut RunManifest,
    executed: &mut Vec<String>,
    name: &str,
    stage_hash: &str,
    load: impl FnOnce() -> Result<T>,
    compute: impl FnOnce() -> Result<(T, Vec<PathBuf>)>,
) -> Result<T> {
    if manifest.stage_is_current(out, name, stage_hash) {
        match load() {
            Ok(v) => return Ok(v),
            Err(e) => {
                eprintln!("stage `{name}`: reload failed ({e}), recomputing");
            }
        }
    }
    let t0 = Instant::now();
    let (value, artifacts) =
        compute().with_context(|| format!("stage `{name}` failed"))?;
    manifest
        .record_stage(out, name, stage_hash, &artifacts, t0.elapsed().as_secs_f64())
        .with_context(|| format!("recording stage `{name}`"))?;
    executed.push(name.to_string());
    Ok(value)
}

/// Direction generator dispatch for everything run on source models.
pub fn generate_source_direction(
    config: &RunConfig,
    attack_id: &str,
    source: &Model,
    sample: &Sample,
    seed: u64,
) -> Result<transferbench_core::geometry::Direction> {
    if let Some(tc) = config.transfer.attacks.iter().find(|t| t.attack.name() == attack_id) {
        let cfg = TransferConfig { seed, ..tc.clone() };
        return run_transfer(&SourceStack::single(source), sample, &cfg).map_err(Into::into);
    }
    if let Some(wc) = config
        .reference
        .whitebox
        .iter()
        .find(|w| w.attack.name() == attack_id)
    {
        let cfg = WhiteBoxConfig { seed, ..wc.clone() };
        return run_whitebox(source, sample, &cfg).map_err(Into::into);
    }
    bail!("unknown source attack `{attack_id}`")
}

fn compute_matrices(
    config: &RunConfig,
    transfer: &DistortionTable,
    references: &DistortionTable,
    families: &[(String, String)],
    sample_ids: &[u32],
) -> Result<(BTreeMap<String, TransferMatrix>, Vec<PathBuf>)> {
    // The matrix needs reference rows available in the same table view.
    let mut combined = transfer.clone();
    for row in references.rows() {
        combined.insert(row.clone())?;
    }
    let mut matrices = BTreeMap::new();
    for attack in config.source_attack_ids() {
        matrices.insert(
            attack.clone(),
            transfer_matrix(&combined, &attack, families, sample_ids)?,
        );
    }
    Ok((matrices, Vec::new()))
}

fn write_flags_csv(path: &Path, matrix: &TransferMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["source".to_string()];
    header.extend(matrix.model_ids.iter().cloned());
    w.write_record(&header)?;
    for (i, src) in matrix.model_ids.iter().enumerate() {
        let mut rec = vec![src.clone()];
        for j in 0..matrix.model_ids.len() {
            rec.push(if matrix.flagged(i, j) { "1".into() } else { "0".into() });
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Operating-characteristic exports per (attack, target): transfer attacks
/// pool their allowed sources; reference curves come from the reference rows.
fn write_curves(
    out: &Path,
    config: &RunConfig,
    zoo: &ModelZoo,
    transfer: &DistortionTable,
    references: &DistortionTable,
    sample_ids: &[u32],
) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for target in &zoo.models {
        for which in [WB_REF, BB_REF] {
            let d = references.reference_list(which, &target.id, sample_ids)?;
            let oc = OperatingCharacteristic::new(&d)?;
            let path = out.join(format!("curves/{which}--{}.json", target.id));
            fs::write(&path, serde_json::to_vec_pretty(&oc.export())?)?;
            paths.push(path);
        }
        let pool = source_pool(config, zoo, &target.id);
        for attack in config.source_attack_ids() {
            let mut pooled = Vec::new();
            for source in &pool {
                pooled.extend(transfer.sample_list(&attack, source, &target.id, sample_ids)?);
            }
            let oc = OperatingCharacteristic::new(&pooled)?;
            let path = out.join(format!("curves/{attack}--{}.json", target.id));
            fs::write(&path, serde_json::to_vec_pretty(&oc.export())?)?;
            paths.push(path);
        }
    }
    Ok(paths)
}

/// Candidate sources for a target under the configured exclusion rule.
pub fn source_pool(config: &RunConfig, zoo: &ModelZoo, target_id: &str) -> Vec<String> {
    if config.evaluation.family_exclusion {
        zoo.cross_family_ids(target_id)
    } else {
        zoo.models.iter().filter(|m| m.id != target_id).map(|m| m.id.clone()).collect()
    }
}

/// Surrogate pool for scoring a source against a target.
pub fn surrogate_pool(config: &RunConfig, pool: &[String], source: &str) -> Vec<String> {
    if config.evaluation.transq_include_self {
        pool.to_vec()
    } else {
        pool.iter().filter(|id| id.as_str() != source).cloned().collect()
    }
}
