//! Experiment suites over the persisted tables: best/worst source curves,
//! best-source distribution, attack-dependence histograms, and the
//! epsilon sweep.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use transferbench_core::attack::TransferConfig;
use transferbench_core::geometry::min_distortion_along;
use transferbench_core::metrics::{DistortionTable, OperatingCharacteristic};
use transferbench_core::rng::sub_seed;
use transferbench_core::zoo::{ModelZoo, Sample};

use crate::config::RunConfig;
use crate::pipeline::source_pool;
use crate::selection::TableView;

pub fn run_all(
    config: &RunConfig,
    out: &Path,
    zoo: &ModelZoo,
    samples: &[Sample],
    references: &DistortionTable,
    transfer: &DistortionTable,
    root: u64,
) -> Result<Vec<PathBuf>> {
    let view = TableView::new(zoo, samples, references, transfer)?;
    let mut paths = Vec::new();
    if let Some(bw) = &config.experiments.best_worst {
        let (curves, dist) = best_worst_curves(config, zoo, samples, &view, bw, root)?;
        let p1 = out.join("experiments/best_worst.json");
        fs::write(&p1, serde_json::to_vec_pretty(&curves)?)?;
        paths.push(p1);
        let p2 = out.join("experiments/best_source_distribution.json");
        fs::write(&p2, serde_json::to_vec_pretty(&dist)?)?;
        paths.push(p2);
    }
    if let Some(ad) = &config.experiments.attack_dependence {
        for (a, b) in &ad.pairs {
            let hist = attack_dependence(config, zoo, samples, &view, a, b, ad.bins)?;
            let p = out.join(format!("experiments/attack_dependence_{a}--{b}.json"));
            fs::write(&p, serde_json::to_vec_pretty(&hist)?)?;
            paths.push(p);
        }
    }
    if let Some(es) = &config.experiments.epsilon_sweep {
        let sweep = epsilon_sweep(config, zoo, samples, es, root)?;
        let p = out.join("experiments/epsilon_sweep.json");
        fs::write(&p, serde_json::to_vec_pretty(&sweep)?)?;
        paths.push(p);
    }
    Ok(paths)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BestWorstCurves {
    pub attack: String,
    pub pool_sizes: Vec<usize>,
    pub reps: usize,
    /// Best/worst single model, per-image best/worst, and the mean over
    /// single-model choices, per pool size (averaged over targets and reps).
    pub best_model: Vec<f64>,
    pub worst_model: Vec<f64>,
    pub image_best: Vec<f64>,
    pub image_worst: Vec<f64>,
    pub random_mean: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BestSourceDistribution {
    pub attack: String,
    pub pool_sizes: Vec<usize>,
    pub reps: usize,
    /// Fraction of images won by the modal best source, per pool size.
    pub modal_fraction: Vec<f64>,
}

fn best_worst_curves(
    config: &RunConfig,
    zoo: &ModelZoo,
    samples: &[Sample],
    view: &TableView,
    cfg: &crate::config::BestWorstConfig,
    root: u64,
) -> Result<(BestWorstCurves, BestSourceDistribution)> {
    let attack = cfg.attack.name();
    struct Acc {
        best: f64,
        worst: f64,
        image_best: f64,
        image_worst: f64,
        random: f64,
        modal: f64,
        count: usize,
    }
    let mut acc: BTreeMap<usize, Acc> = cfg
        .pool_sizes
        .iter()
        .map(|&k| {
            (k, Acc { best: 0.0, worst: 0.0, image_best: 0.0, image_worst: 0.0, random: 0.0, modal: 0.0, count: 0 })
        })
        .collect();

    for target in &zoo.models {
        let pool = source_pool(config, zoo, &target.id);
        // Single-model scores and per-sample distortions, computed once.
        let mut score_by_source: BTreeMap<&String, f64> = BTreeMap::new();
        let mut d_by_source: BTreeMap<&String, Vec<f64>> = BTreeMap::new();
        for src in &pool {
            let d: Vec<f64> = samples
                .iter()
                .map(|s| view.d(attack, src, &target.id, s.id))
                .collect::<Result<_>>()?;
            score_by_source.insert(src, view.score(&target.id, &d)?);
            d_by_source.insert(src, d);
        }
        for rep in 0..cfg.reps {
            let mut perm = pool.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(
                root,
                &format!("bwpool:{}:rep{rep}", target.id),
            ));
            perm.shuffle(&mut rng);
            for &k in &cfg.pool_sizes {
                if k > perm.len() {
                    bail!("pool size {k} exceeds available sources {}", perm.len());
                }
                let subset = &perm[..k];
                let scores: Vec<f64> = subset.iter().map(|s| score_by_source[s]).collect();
                let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let worst = scores.iter().cloned().fold(f64::INFINITY, f64::min);
                let random = scores.iter().sum::<f64>() / scores.len() as f64;
                // Per-image composite lists and the winner census.
                let mut d_best = vec![f64::INFINITY; samples.len()];
                let mut d_worst = vec![f64::NEG_INFINITY; samples.len()];
                let mut winner: Vec<&String> = Vec::with_capacity(samples.len());
                for (i, _) in samples.iter().enumerate() {
                    let mut w = &subset[0];
                    for src in subset {
                        let d = d_by_source[src][i];
                        if d < d_best[i] {
                            d_best[i] = d;
                        }
                        if d > d_worst[i] {
                            d_worst[i] = d;
                        }
                        if d < d_by_source[w][i] || (d == d_by_source[w][i] && src < w) {
                            w = src;
                        }
                    }
                    winner.push(w);
                }
                let mut census: BTreeMap<&String, usize> = BTreeMap::new();
                for w in &winner {
                    *census.entry(w).or_default() += 1;
                }
                let modal = census.values().max().copied().unwrap_or(0) as f64 / samples.len() as f64;
                let a = acc.get_mut(&k).unwrap();
                a.best += best;
                a.worst += worst;
                a.random += random;
                a.image_best += view.score(&target.id, &d_best)?;
                a.image_worst += view.score(&target.id, &d_worst)?;
                a.modal += modal;
                a.count += 1;
            }
        }
    }

    let collect = |f: &dyn Fn(&Acc) -> f64| -> Vec<f64> {
        cfg.pool_sizes
            .iter()
            .map(|k| {
                let a = &acc[k];
                f(a) / a.count as f64
            })
            .collect()
    };
    let curves = BestWorstCurves {
        attack: attack.to_string(),
        pool_sizes: cfg.pool_sizes.clone(),
        reps: cfg.reps,
        best_model: collect(&|a| a.best),
        worst_model: collect(&|a| a.worst),
        image_best: collect(&|a| a.image_best),
        image_worst: collect(&|a| a.image_worst),
        random_mean: collect(&|a| a.random),
    };
    let dist = BestSourceDistribution {
        attack: attack.to_string(),
        pool_sizes: cfg.pool_sizes.clone(),
        reps: cfg.reps,
        modal_fraction: collect(&|a| a.modal),
    };
    Ok((curves, dist))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackDependence {
    pub attack_a: String,
    pub attack_b: String,
    /// Log10 bin edges shared by both axes.
    pub bin_edges: Vec<f64>,
    /// Row-major counts: rows bin d_a, columns bin d_b.
    pub counts: Vec<u64>,
    pub triples: usize,
    /// P(d_a < d_b) among triples below / above the median joint minimum.
    pub crossover_low: f64,
    pub crossover_high: f64,
}

fn attack_dependence(
    config: &RunConfig,
    zoo: &ModelZoo,
    samples: &[Sample],
    view: &TableView,
    attack_a: &str,
    attack_b: &str,
    bins: usize,
) -> Result<AttackDependence> {
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for target in &zoo.models {
        let pool = source_pool(config, zoo, &target.id);
        for src in &pool {
            for s in samples {
                let da = view.d(attack_a, src, &target.id, s.id)?;
                let db = view.d(attack_b, src, &target.id, s.id)?;
                pairs.push((da, db));
            }
        }
    }
    if pairs.is_empty() {
        bail!("attack dependence has no overlapping (source, target, sample) triples");
    }
    let lo = config.line_search.tolerance.log10();
    let hi = config.line_search.cap.log10();
    let edges: Vec<f64> = (0..=bins)
        .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
        .collect();
    let bin_of = |d: f64| -> usize {
        let l = d.max(10f64.powf(lo)).log10();
        (((l - lo) / (hi - lo) * bins as f64).floor() as usize).min(bins - 1)
    };
    let mut counts = vec![0u64; bins * bins];
    for (da, db) in &pairs {
        counts[bin_of(*da) * bins + bin_of(*db)] += 1;
    }
    let mut mins: Vec<f64> = pairs.iter().map(|(a, b)| a.min(*b)).collect();
    mins.sort_by(f64::total_cmp);
    let median = mins[mins.len() / 2];
    let (mut low_wins, mut low_n, mut high_wins, mut high_n) = (0usize, 0usize, 0usize, 0usize);
    for (da, db) in &pairs {
        if da.min(*db) <= median {
            low_n += 1;
            if da < db {
                low_wins += 1;
            }
        } else {
            high_n += 1;
            if da < db {
                high_wins += 1;
            }
        }
    }
    Ok(AttackDependence {
        attack_a: attack_a.to_string(),
        attack_b: attack_b.to_string(),
        bin_edges: edges,
        counts,
        triples: pairs.len(),
        crossover_low: low_wins as f64 / low_n.max(1) as f64,
        crossover_high: high_wins as f64 / high_n.max(1) as f64,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsilonSweep {
    pub attack: String,
    pub epsilons: Vec<f64>,
    /// One success-rate-vs-distortion curve per epsilon, pooled over all
    /// allowed (source, target, sample) triples.
    pub curves: Vec<SweepCurvePoints>,
    /// Largest vertical gap between any two curves.
    pub max_gap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCurvePoints {
    pub epsilon: f64,
    pub breakpoints: Vec<f64>,
    pub levels: Vec<f64>,
}

fn epsilon_sweep(
    config: &RunConfig,
    zoo: &ModelZoo,
    samples: &[Sample],
    cfg: &crate::config::EpsilonSweepConfig,
    root: u64,
) -> Result<EpsilonSweep> {
    let base = config
        .transfer_attack(cfg.attack)
        .ok_or_else(|| anyhow::anyhow!("sweep attack not configured"))?;
    let ls = config.line_search.params();
    let mut characteristics: Vec<OperatingCharacteristic> = Vec::new();
    for &eps in &cfg.epsilons {
        // Same per-(source, sample) seed across epsilons: only the clip
        // budget changes.
        let work: Vec<(usize, usize)> = (0..zoo.models.len())
            .flat_map(|s| (0..samples.len()).map(move |x| (s, x)))
            .collect();
        let per_source: Vec<Vec<f64>> = work
            .par_iter()
            .map(|&(si, xi)| -> Result<Vec<f64>> {
                let source = &zoo.models[si];
                let sample = &samples[xi];
                let attack_id = cfg.attack.name();
                let tcfg = TransferConfig {
                    epsilon: eps,
                    step_size: base.step_size.min(eps / 2.0),
                    seed: sub_seed(root, &format!("dir:{attack_id}:{}:{}", source.id, sample.id)),
                    ..base.clone()
                };
                let dir = transferbench_core::attack::run_transfer(
                    &transferbench_core::attack::SourceStack::single(source),
                    sample,
                    &tcfg,
                )?;
                let mut ds = Vec::new();
                for target in &zoo.models {
                    if config.evaluation.family_exclusion && target.family == source.family {
                        continue;
                    }
                    if target.id == source.id {
                        continue;
                    }
                    let res = min_distortion_along(target, sample, &dir, &ls, None)?;
                    ds.push(res.d);
                }
                Ok(ds)
            })
            .collect::<Result<_>>()?;
        let pooled: Vec<f64> = per_source.into_iter().flatten().collect();
        characteristics.push(OperatingCharacteristic::new(&pooled)?);
    }

    // Largest vertical gap over the merged breakpoints of all curves.
    let mut grid: Vec<f64> = characteristics
        .iter()
        .flat_map(|oc| oc.sorted().to_vec())
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut max_gap = 0.0f64;
    for i in 0..characteristics.len() {
        for j in i + 1..characteristics.len() {
            for &g in &grid {
                let gap = (characteristics[i].eval(g) - characteristics[j].eval(g)).abs();
                max_gap = max_gap.max(gap);
            }
        }
    }
    let curves = cfg
        .epsilons
        .iter()
        .zip(&characteristics)
        .map(|(&epsilon, oc)| {
            let e = oc.export();
            SweepCurvePoints { epsilon, breakpoints: e.breakpoints, levels: e.levels }
        })
        .collect();
    Ok(EpsilonSweep {
        attack: cfg.attack.name().to_string(),
        epsilons: cfg.epsilons.clone(),
        curves,
        max_gap,
    })
}
