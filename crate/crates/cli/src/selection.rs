//! Transfer-quality tables, fit scores, and the per-method source
//! selections with their aggregate transferability.

use std::collections::BTreeMap;

use anyhow::{anyhow, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use transferbench_core::fingerprint::SimilarityMatrix;
use transferbench_core::metrics::{transferability_score, DistortionTable, BB_REF, WB_REF};
use transferbench_core::rng::sub_seed;
use transferbench_core::select::{
    asr_fraction, fit_score, select_attack_and_source, transq1_from_distortions,
    transq2_from_distortions, FitEntry, FitTable, SelectionResult, TransQVariant,
};
use transferbench_core::zoo::{ModelZoo, Sample};

use crate::config::RunConfig;
use crate::pipeline::{source_pool, surrogate_pool};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub mean: f64,
    pub per_target: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCurve {
    pub attack: String,
    pub budgets: Vec<usize>,
    pub mean_t: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionSummary {
    /// attack -> method -> aggregate transferability.
    pub attacks: BTreeMap<String, BTreeMap<String, MethodSummary>>,
    /// Methods choosing over (attack, source) jointly.
    pub pooled: BTreeMap<String, MethodSummary>,
    /// Fit selection quality as a function of the fingerprint budget.
    pub sweep: SweepCurve,
    /// Per "method:attack": fingerprint budget + line-search queries of the
    /// selected directions.
    pub attacker_queries: BTreeMap<String, u64>,
}

/// Table access with per-target reference vectors in sample order.
pub(crate) struct TableView<'a> {
    pub transfer: &'a DistortionTable,
    pub sample_ids: Vec<u32>,
    pub wb: BTreeMap<String, Vec<f64>>,
    pub bb: BTreeMap<String, Vec<f64>>,
}

impl<'a> TableView<'a> {
    pub fn new(
        zoo: &ModelZoo,
        samples: &[Sample],
        references: &'a DistortionTable,
        transfer: &'a DistortionTable,
    ) -> Result<Self> {
        let sample_ids: Vec<u32> = samples.iter().map(|s| s.id).collect();
        let mut wb = BTreeMap::new();
        let mut bb = BTreeMap::new();
        for m in &zoo.models {
            wb.insert(m.id.clone(), references.reference_list(WB_REF, &m.id, &sample_ids)?);
            bb.insert(m.id.clone(), references.reference_list(BB_REF, &m.id, &sample_ids)?);
        }
        Ok(Self { transfer, sample_ids, wb, bb })
    }

    pub fn d(&self, attack: &str, source: &str, target: &str, sample: u32) -> Result<f64> {
        self.transfer
            .get(attack, source, target, sample)
            .map(|r| r.d)
            .ok_or_else(|| anyhow!("missing row ({attack}, {source}, {target}, {sample})"))
    }

    pub fn queries(&self, attack: &str, source: &str, target: &str, sample: u32) -> Result<u64> {
        self.transfer
            .get(attack, source, target, sample)
            .map(|r| r.queries)
            .ok_or_else(|| anyhow!("missing row ({attack}, {source}, {target}, {sample})"))
    }

    pub fn score(&self, target: &str, chosen: &[f64]) -> Result<f64> {
        Ok(transferability_score(chosen, &self.wb[target], &self.bb[target])?.value)
    }
}

/// Argmax over the pool with ties broken toward the smallest id.
pub(crate) fn argmax_by(pool: &[String], mut score: impl FnMut(&str) -> f64) -> String {
    let mut ranked: Vec<(&String, f64)> = pool.iter().map(|id| (id, score(id))).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked[0].0.clone()
}

pub(crate) fn argmin_by(pool: &[String], mut score: impl FnMut(&str) -> f64) -> String {
    argmax_by(pool, |id| -score(id))
}

type FitTables = BTreeMap<(String, TransQVariant), FitTable>;

pub fn run_selection_stage(
    config: &RunConfig,
    zoo: &ModelZoo,
    samples: &[Sample],
    references: &DistortionTable,
    transfer: &DistortionTable,
    similarity: &BTreeMap<usize, SimilarityMatrix>,
    root: u64,
) -> Result<(FitTables, SelectionSummary, Vec<SelectionResult>)> {
    let view = TableView::new(zoo, samples, references, transfer)?;
    let attack_ids = config.source_attack_ids();
    let main_sim = &similarity[&config.fingerprint.budget];

    // Per-(attack, target) score tables for every candidate source.
    let work: Vec<(String, String)> = attack_ids
        .iter()
        .flat_map(|a| zoo.models.iter().map(move |t| (a.clone(), t.id.clone())))
        .collect();
    let computed: Vec<CellScores> = work
        .par_iter()
        .map(|(attack, target)| score_cell(config, zoo, samples, &view, main_sim, attack, target))
        .collect::<Result<_>>()?;

    let mut fit_tables: FitTables = BTreeMap::new();
    for attack in &attack_ids {
        fit_tables.insert((attack.clone(), TransQVariant::One), FitTable::new(attack, TransQVariant::One));
        fit_tables.insert((attack.clone(), TransQVariant::Two), FitTable::new(attack, TransQVariant::Two));
    }
    let mut asr: BTreeMap<(String, String, String, u32), f64> = BTreeMap::new();
    for cell in &computed {
        for entry in &cell.entries {
            let t1 = fit_tables.get_mut(&(cell.attack.clone(), TransQVariant::One)).unwrap();
            t1.insert(
                &entry.source,
                &cell.target,
                entry.sample,
                FitEntry {
                    modsim: entry.modsim,
                    transq: entry.q1,
                    fit: fit_score(entry.modsim, entry.q1),
                },
            );
            let t2 = fit_tables.get_mut(&(cell.attack.clone(), TransQVariant::Two)).unwrap();
            t2.insert(
                &entry.source,
                &cell.target,
                entry.sample,
                FitEntry {
                    modsim: entry.modsim,
                    transq: entry.q2,
                    fit: fit_score(entry.modsim, entry.q2),
                },
            );
            asr.insert(
                (cell.attack.clone(), cell.target.clone(), entry.source.clone(), entry.sample),
                entry.asr,
            );
        }
    }

    // Selection methods per attack.
    let mut summary_attacks: BTreeMap<String, BTreeMap<String, MethodSummary>> = BTreeMap::new();
    let mut rows: Vec<SelectionResult> = Vec::new();
    let mut attacker_queries: BTreeMap<String, u64> = BTreeMap::new();
    for attack in &attack_ids {
        let mut methods: BTreeMap<String, MethodSummary> = BTreeMap::new();
        let q1_table = &fit_tables[&(attack.clone(), TransQVariant::One)];
        let q2_table = &fit_tables[&(attack.clone(), TransQVariant::Two)];

        let mut per_target_choices: BTreeMap<String, BTreeMap<String, Vec<(u32, String, f64)>>> =
            BTreeMap::new();
        for target in &zoo.models {
            let pool = source_pool(config, zoo, &target.id);
            let choices = per_target_choices.entry(target.id.clone()).or_default();

            // Oracle: the best source per image against the true target.
            let best: Vec<(u32, String, f64)> = samples
                .iter()
                .map(|s| {
                    let chosen =
                        argmin_by(&pool, |src| view.d(attack, src, &target.id, s.id).unwrap());
                    let d = view.d(attack, &chosen, &target.id, s.id)?;
                    Ok((s.id, chosen, d))
                })
                .collect::<Result<_>>()?;
            choices.insert("best".into(), best);

            // One fixed source by model similarity.
            let modsim_choice = argmax_by(&pool, |src| main_sim.get(src, &target.id).unwrap());
            let modsim: Vec<(u32, String, f64)> = samples
                .iter()
                .map(|s| {
                    let d = view.d(attack, &modsim_choice, &target.id, s.id)?;
                    Ok((s.id, modsim_choice.clone(), d))
                })
                .collect::<Result<_>>()?;
            choices.insert("modsim".into(), modsim);

            // Per-image surrogate success-rate baseline.
            let asr_rows: Vec<(u32, String, f64)> = samples
                .iter()
                .map(|s| {
                    let chosen = argmax_by(&pool, |src| {
                        asr[&(attack.clone(), target.id.clone(), src.to_string(), s.id)]
                    });
                    let d = view.d(attack, &chosen, &target.id, s.id)?;
                    Ok((s.id, chosen, d))
                })
                .collect::<Result<_>>()?;
            choices.insert("asr".into(), asr_rows);

            // Per-image transfer-quality and fit selections.
            for (name, table) in
                [("transq1", q1_table), ("transq2", q2_table), ("fit-q1", q1_table), ("fit-q2", q2_table)]
            {
                let by_fit = name.starts_with("fit");
                let rows: Vec<(u32, String, f64)> = samples
                    .iter()
                    .map(|s| {
                        let chosen = if by_fit {
                            table.select_source(&target.id, s.id, &pool)?
                        } else {
                            argmax_by(&pool, |src| {
                                table.get(src, &target.id, s.id).unwrap().transq
                            })
                        };
                        let d = view.d(attack, &chosen, &target.id, s.id)?;
                        Ok((s.id, chosen, d))
                    })
                    .collect::<Result<_>>()?;
                choices.insert(name.into(), rows);
            }

            // Random per-image source, several seeded repetitions.
            for rep in 0..config.evaluation.random_reps {
                let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(
                    root,
                    &format!("randsel:{attack}:{}:rep{rep}", target.id),
                ));
                let rows: Vec<(u32, String, f64)> = samples
                    .iter()
                    .map(|s| {
                        let chosen = pool[rng.gen_range(0..pool.len())].clone();
                        let d = view.d(attack, &chosen, &target.id, s.id)?;
                        Ok((s.id, chosen, d))
                    })
                    .collect::<Result<_>>()?;
                choices.insert(format!("random-r{rep}"), rows);
            }
        }

        // Aggregate each method over targets; random averages its reps.
        let method_names: Vec<String> = {
            let mut names: Vec<String> =
                ["best", "modsim", "asr", "transq1", "transq2", "fit-q1", "fit-q2"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect();
            for rep in 0..config.evaluation.random_reps {
                names.push(format!("random-r{rep}"));
            }
            names
        };
        for name in &method_names {
            let mut per_target = BTreeMap::new();
            for target in &zoo.models {
                let chosen = &per_target_choices[&target.id][name];
                let d: Vec<f64> = chosen.iter().map(|(_, _, d)| *d).collect();
                per_target.insert(target.id.clone(), view.score(&target.id, &d)?);
                rows.push(SelectionResult {
                    method: name.clone(),
                    attack: attack.clone(),
                    target: target.id.clone(),
                    per_sample: chosen.clone(),
                    score: *per_target.get(&target.id).unwrap(),
                });
            }
            let mean = per_target.values().sum::<f64>() / per_target.len() as f64;
            methods.insert(name.clone(), MethodSummary { mean, per_target });
        }
        // Collapse random reps into one summary entry.
        let rep_means: Vec<&MethodSummary> = method_names
            .iter()
            .filter(|n| n.starts_with("random-r"))
            .map(|n| &methods[n.as_str()])
            .collect();
        let mut random_per_target = BTreeMap::new();
        for target in &zoo.models {
            let avg = rep_means.iter().map(|m| m.per_target[&target.id]).sum::<f64>()
                / rep_means.len() as f64;
            random_per_target.insert(target.id.clone(), avg);
        }
        let random_mean =
            random_per_target.values().sum::<f64>() / random_per_target.len() as f64;
        methods.insert(
            "random".into(),
            MethodSummary { mean: random_mean, per_target: random_per_target },
        );

        // Attacker query accounting for the fit selections.
        for (name, table_variant) in [("fit-q1", TransQVariant::One), ("fit-q2", TransQVariant::Two)] {
            let _ = table_variant;
            let mut line_search_queries = 0u64;
            for target in &zoo.models {
                for (sample, chosen, _) in &per_target_choices[&target.id][name] {
                    line_search_queries += view.queries(attack, chosen, &target.id, *sample)?;
                }
            }
            attacker_queries.insert(
                format!("{name}:{attack}"),
                config.fingerprint.budget as u64 + line_search_queries,
            );
        }

        summary_attacks.insert(attack.clone(), methods);
    }

    // Pooled (attack, source) selection across every configured generator.
    let mut pooled: BTreeMap<String, MethodSummary> = BTreeMap::new();
    for (name, variant) in [("pooled-fit-q1", TransQVariant::One), ("pooled-fit-q2", TransQVariant::Two)] {
        let tables: Vec<&FitTable> =
            attack_ids.iter().map(|a| &fit_tables[&(a.clone(), variant)]).collect();
        let mut per_target = BTreeMap::new();
        let mut pooled_queries = 0u64;
        for target in &zoo.models {
            let pool = source_pool(config, zoo, &target.id);
            let mut chosen_rows = Vec::with_capacity(samples.len());
            for s in samples {
                let (attack, source) = select_attack_and_source(&tables, &target.id, s.id, &pool)?;
                let d = view.d(&attack, &source, &target.id, s.id)?;
                pooled_queries += view.queries(&attack, &source, &target.id, s.id)?;
                chosen_rows.push((s.id, format!("{attack}:{source}"), d));
            }
            let d: Vec<f64> = chosen_rows.iter().map(|(_, _, d)| *d).collect();
            per_target.insert(target.id.clone(), view.score(&target.id, &d)?);
            rows.push(SelectionResult {
                method: name.into(),
                attack: "all".into(),
                target: target.id.clone(),
                per_sample: chosen_rows,
                score: per_target[&target.id],
            });
        }
        let mean = per_target.values().sum::<f64>() / per_target.len() as f64;
        pooled.insert(name.into(), MethodSummary { mean, per_target });
        attacker_queries
            .insert(format!("{name}:all"), config.fingerprint.budget as u64 + pooled_queries);
    }
    // Joint oracle over attacks and sources.
    {
        let mut per_target = BTreeMap::new();
        for target in &zoo.models {
            let pool = source_pool(config, zoo, &target.id);
            let mut chosen_rows = Vec::with_capacity(samples.len());
            for s in samples {
                let mut best: Option<(f64, String)> = None;
                for attack in &attack_ids {
                    for src in &pool {
                        let d = view.d(attack, src, &target.id, s.id)?;
                        let key = format!("{attack}:{src}");
                        if best.as_ref().map_or(true, |(bd, bk)| d < *bd || (d == *bd && key < *bk)) {
                            best = Some((d, key));
                        }
                    }
                }
                let (d, key) = best.expect("non-empty pool");
                chosen_rows.push((s.id, key, d));
            }
            let d: Vec<f64> = chosen_rows.iter().map(|(_, _, d)| *d).collect();
            per_target.insert(target.id.clone(), view.score(&target.id, &d)?);
            rows.push(SelectionResult {
                method: "pooled-best".into(),
                attack: "all".into(),
                target: target.id.clone(),
                per_sample: chosen_rows,
                score: per_target[&target.id],
            });
        }
        let mean = per_target.values().sum::<f64>() / per_target.len() as f64;
        pooled.insert("pooled-best".into(), MethodSummary { mean, per_target });
    }

    // Fingerprint-budget sweep: fit selection quality per budget.
    let sweep_attack = config.evaluation.ensemble_attack.name().to_string();
    let mut budgets: Vec<usize> = similarity.keys().copied().collect();
    budgets.sort_unstable();
    let mut sweep_means = Vec::with_capacity(budgets.len());
    for budget in &budgets {
        let sim = &similarity[budget];
        let q1 = &fit_tables[&(sweep_attack.clone(), TransQVariant::One)];
        let mut per_target = Vec::new();
        for target in &zoo.models {
            let pool = source_pool(config, zoo, &target.id);
            let mut d = Vec::with_capacity(samples.len());
            for s in samples {
                let chosen = argmax_by(&pool, |src| {
                    let q = q1.get(src, &target.id, s.id).unwrap().transq;
                    fit_score(sim.get(src, &target.id).unwrap(), q)
                });
                d.push(view.d(&sweep_attack, &chosen, &target.id, s.id)?);
            }
            per_target.push(view.score(&target.id, &d)?);
        }
        sweep_means.push(per_target.iter().sum::<f64>() / per_target.len() as f64);
    }

    let summary = SelectionSummary {
        attacks: summary_attacks,
        pooled,
        sweep: SweepCurve { attack: sweep_attack, budgets, mean_t: sweep_means },
        attacker_queries,
    };
    Ok((fit_tables, summary, rows))
}

struct CellScores {
    attack: String,
    target: String,
    entries: Vec<CellEntry>,
}

struct CellEntry {
    source: String,
    sample: u32,
    modsim: f64,
    q1: f64,
    q2: f64,
    asr: f64,
}

fn score_cell(
    config: &RunConfig,
    zoo: &ModelZoo,
    samples: &[Sample],
    view: &TableView,
    main_sim: &SimilarityMatrix,
    attack: &str,
    target: &str,
) -> Result<CellScores> {
    let pool = source_pool(config, zoo, target);
    let mut entries = Vec::new();
    for source in &pool {
        let surrogates = surrogate_pool(config, &pool, source);
        if surrogates.is_empty() {
            anyhow::bail!("source `{source}` has no surrogates against `{target}`");
        }
        let modsim = main_sim
            .get(source, target)
            .ok_or_else(|| anyhow!("similarity missing for ({source}, {target})"))?;
        for s in samples {
            let mut d_surr = Vec::with_capacity(surrogates.len());
            let mut wb_surr = Vec::with_capacity(surrogates.len());
            let mut bb_surr = Vec::with_capacity(surrogates.len());
            for sigma in &surrogates {
                d_surr.push(view.d(attack, source, sigma, s.id)?);
                let pos = view.sample_ids.iter().position(|&i| i == s.id).unwrap();
                wb_surr.push(view.wb[sigma][pos]);
                bb_surr.push(view.bb[sigma][pos]);
            }
            let q1 = transq1_from_distortions(&d_surr)?;
            let q2 = transq2_from_distortions(&d_surr, &wb_surr, &bb_surr)?;
            let asr = asr_fraction(&d_surr, config.evaluation.asr_distortion_budget)?;
            entries.push(CellEntry { source: source.clone(), sample: s.id, modsim, q1, q2, asr });
        }
    }
    Ok(CellScores { attack: attack.to_string(), target: target.to_string(), entries })
}
