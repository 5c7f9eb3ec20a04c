//! Markdown run report: zoo quality, reference sanity, matrix summaries,
//! the selection-method tables, and one-line experiment digests.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::Result;

use transferbench_core::metrics::{RowStatus, BB_REF, WB_REF};

use crate::experiments::{AttackDependence, BestSourceDistribution, BestWorstCurves, EpsilonSweep};
use crate::pipeline::{source_pool, Artifacts};

pub fn write_report(artifacts: &Artifacts) -> Result<PathBuf> {
    let a = artifacts;
    let cfg = &a.config;
    let out = &a.out_dir;
    let mut md = String::new();
    let sample_ids: Vec<u32> = a.attack_samples.iter().map(|s| s.id).collect();

    writeln!(md, "# Transferability benchmark report\n")?;
    writeln!(md, "- seed: {}", cfg.seed)?;
    writeln!(md, "- models: {} in {} families", a.zoo.models.len(), a.zoo.family_index.len())?;
    writeln!(
        md,
        "- attack set: {} eval samples correctly classified by all models ({} dropped by the filter)",
        a.attack_samples.len(),
        a.dropped_samples.len()
    )?;
    writeln!(md, "- fingerprint budget: {} benign queries\n", cfg.fingerprint.budget)?;

    writeln!(md, "## Zoo\n")?;
    writeln!(md, "| model | family | eval accuracy |")?;
    writeln!(md, "|---|---|---|")?;
    for m in &a.zoo.models {
        writeln!(md, "| {} | {} | {:.4} |", m.id, m.family, m.eval_accuracy)?;
    }
    writeln!(md)?;

    writeln!(md, "## References\n")?;
    writeln!(md, "| target | median d (white box) | median d (black box) | wb <= bb |")?;
    writeln!(md, "|---|---|---|---|")?;
    let mut wb_le_bb_total = (0usize, 0usize);
    for m in &a.zoo.models {
        let wb = a.references.reference_list(WB_REF, &m.id, &sample_ids)?;
        let bb = a.references.reference_list(BB_REF, &m.id, &sample_ids)?;
        let le = wb.iter().zip(&bb).filter(|(w, b)| w <= b).count();
        wb_le_bb_total.0 += le;
        wb_le_bb_total.1 += wb.len();
        writeln!(
            md,
            "| {} | {:.4} | {:.4} | {}/{} |",
            m.id,
            median(&wb),
            median(&bb),
            le,
            wb.len()
        )?;
    }
    writeln!(
        md,
        "\nWhite box at or below black box on {}/{} (target, sample) pairs.",
        wb_le_bb_total.0, wb_le_bb_total.1
    )?;
    if let Some(doubled) = &a.references_doubled {
        let mut base = Vec::new();
        let mut twice = Vec::new();
        for m in &a.zoo.models {
            base.extend(a.references.reference_list(BB_REF, &m.id, &sample_ids)?);
            twice.extend(doubled.reference_list(BB_REF, &m.id, &sample_ids)?);
        }
        let (mb, mt) = (median(&base), median(&twice));
        writeln!(
            md,
            "Doubling the black-box budget ({} -> {}) moves the median distortion {:.4} -> {:.4} ({:+.2}%).\n",
            cfg.reference.blackbox.budget,
            cfg.reference.blackbox.budget * 2,
            mb,
            mt,
            (mt - mb) / mb * 100.0
        )?;
    }

    writeln!(md, "## Transferability matrices\n")?;
    writeln!(
        md,
        "Scores are anchored at 1 (white-box reference) and 0 (black-box reference); \
         negative means worse than the black box. Same-family cells excluded.\n"
    )?;
    writeln!(md, "| attack | mean | min | max | negative cells | capped rows | max asymmetry |")?;
    writeln!(md, "|---|---|---|---|---|---|---|")?;
    for (attack, matrix) in &a.matrices {
        let m = matrix.model_ids.len();
        let mut vals = Vec::new();
        let mut neg = 0usize;
        let mut max_asym = 0.0f64;
        for i in 0..m {
            for j in 0..m {
                if matrix.flagged(i, j) {
                    continue;
                }
                let v = matrix.get(i, j);
                vals.push(v);
                if v < 0.0 {
                    neg += 1;
                }
                if !matrix.flagged(j, i) {
                    max_asym = max_asym.max((v - matrix.get(j, i)).abs());
                }
            }
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        writeln!(
            md,
            "| {attack} | {mean:.3} | {lo:.3} | {hi:.3} | {neg}/{} | {:.1}% | {max_asym:.3} |",
            vals.len(),
            a.transfer.capped_fraction(attack) * 100.0
        )?;
    }
    writeln!(md)?;

    writeln!(md, "## Single-model source selection\n")?;
    writeln!(md, "Mean transferability over targets, per selection method and attack.\n")?;
    let attacks: Vec<&String> = a.selection.attacks.keys().collect();
    write!(md, "| method |")?;
    for attack in &attacks {
        write!(md, " {attack} |")?;
    }
    writeln!(md)?;
    write!(md, "|---|")?;
    for _ in &attacks {
        write!(md, "---|")?;
    }
    writeln!(md)?;
    for method in ["best", "random", "modsim", "asr", "transq1", "transq2", "fit-q1", "fit-q2"] {
        write!(md, "| {method} |")?;
        for attack in &attacks {
            match a.selection.attacks[*attack].get(method) {
                Some(s) => write!(md, " {:.3} |", s.mean)?,
                None => write!(md, " - |")?,
            }
        }
        writeln!(md)?;
    }
    writeln!(md)?;

    writeln!(md, "## Ensemble attacks ({} sources via {})\n", 3, a.ensembles.attack)?;
    writeln!(md, "| method | mean score |")?;
    writeln!(md, "|---|---|")?;
    for (name, summary) in &a.ensembles.methods {
        writeln!(md, "| {name} | {:.3} |", summary.mean)?;
    }
    writeln!(
        md,
        "\nRandom growth curve (sizes {:?}): {}",
        a.ensembles.sizes,
        a.ensembles
            .growth_mean
            .iter()
            .map(|v| format!("{v:.3}"))
            .collect::<Vec<_>>()
            .join(", ")
    )?;
    writeln!(
        md,
        "`best-observed` is the per-target maximum over every ensemble evaluated above.\n"
    )?;

    writeln!(md, "## Attack pooling\n")?;
    writeln!(md, "| attack | best | fit-q1 |")?;
    writeln!(md, "|---|---|---|")?;
    for attack in &attacks {
        let best = a.selection.attacks[*attack]["best"].mean;
        let fit = a.selection.attacks[*attack]["fit-q1"].mean;
        writeln!(md, "| {attack} | {best:.3} | {fit:.3} |")?;
    }
    writeln!(
        md,
        "| all attacks | {:.3} | {:.3} |",
        a.selection.pooled["pooled-best"].mean, a.selection.pooled["pooled-fit-q1"].mean
    )?;
    writeln!(md)?;

    writeln!(md, "## Experiments\n")?;
    let sweep = &a.selection.sweep;
    writeln!(
        md,
        "- Fingerprint budget sweep ({}): {}",
        sweep.attack,
        sweep
            .budgets
            .iter()
            .zip(&sweep.mean_t)
            .map(|(b, t)| format!("{b} -> {t:.3}"))
            .collect::<Vec<_>>()
            .join(", ")
    )?;
    if let Ok(bytes) = fs::read(out.join("experiments/epsilon_sweep.json")) {
        let es: EpsilonSweep = serde_json::from_slice(&bytes)?;
        writeln!(
            md,
            "- Epsilon sweep ({}, eps {:?}): max vertical gap between success-rate curves {:.4}",
            es.attack, es.epsilons, es.max_gap
        )?;
    }
    if let Ok(bytes) = fs::read(out.join("experiments/best_worst.json")) {
        let bw: BestWorstCurves = serde_json::from_slice(&bytes)?;
        let last = bw.pool_sizes.len() - 1;
        writeln!(
            md,
            "- Best/worst source curves ({}), pool of {}: best model {:.3}, per-image best {:.3}, \
             random {:.3}, worst model {:.3}",
            bw.attack,
            bw.pool_sizes[last],
            bw.best_model[last],
            bw.image_best[last],
            bw.random_mean[last],
            bw.worst_model[last]
        )?;
    }
    if let Ok(bytes) = fs::read(out.join("experiments/best_source_distribution.json")) {
        let bd: BestSourceDistribution = serde_json::from_slice(&bytes)?;
        let last = bd.pool_sizes.len() - 1;
        writeln!(
            md,
            "- Best-source distribution: modal source wins {:.0}% of images at pool size {}",
            bd.modal_fraction[last] * 100.0,
            bd.pool_sizes[last]
        )?;
    }
    if let Some(ad_cfg) = &cfg.experiments.attack_dependence {
        for (x, y) in &ad_cfg.pairs {
            if let Ok(bytes) = fs::read(out.join(format!("experiments/attack_dependence_{x}--{y}.json"))) {
                let ad: AttackDependence = serde_json::from_slice(&bytes)?;
                writeln!(
                    md,
                    "- Attack dependence {x} vs {y}: P({x} needs less distortion) = {:.2} on \
                     easy triples, {:.2} on hard triples ({} triples)",
                    ad.crossover_low, ad.crossover_high, ad.triples
                )?;
            }
        }
    }
    writeln!(md)?;

    writeln!(md, "## Attacker queries to the target\n")?;
    writeln!(
        md,
        "Fingerprinting plus the line searches of the finally selected directions; \
         surrogate evaluations are free.\n"
    )?;
    writeln!(md, "| selection | decision queries |")?;
    writeln!(md, "|---|---|")?;
    for (key, q) in &a.selection.attacker_queries {
        writeln!(md, "| {key} | {q} |")?;
    }
    writeln!(md)?;

    // Capped-row disclosure.
    let capped_total = a
        .transfer
        .rows()
        .filter(|r| r.status == RowStatus::NotFoundWithinCap)
        .count();
    writeln!(
        md,
        "Line searches that found no flip within the cap of {} enter every table at the cap \
         value: {} of {} transfer rows.",
        cfg.line_search.cap,
        capped_total,
        a.transfer.len()
    )?;
    // Pool sizes for context.
    let min_pool = a
        .zoo
        .models
        .iter()
        .map(|m| source_pool(cfg, &a.zoo, &m.id).len())
        .min()
        .unwrap_or(0);
    writeln!(
        md,
        "Family exclusion {} (smallest source pool: {min_pool}).",
        if cfg.evaluation.family_exclusion { "on" } else { "off" }
    )?;

    let path = out.join("report.md");
    fs::write(&path, md)?;
    Ok(path)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
