//! Source selection: per-input transfer-quality estimates computed on
//! surrogate models, the similarity-times-quality product score, and the
//! argmax selection rules for single sources, top-k ensembles, and pooled
//! (attack, source) choices.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{min_distortion_along, Direction, LineSearchParams};
use crate::zoo::{Model, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransQVariant {
    One,
    Two,
}

impl TransQVariant {
    pub fn name(self) -> &'static str {
        match self {
            TransQVariant::One => "transq1",
            TransQVariant::Two => "transq2",
        }
    }
}

/// Inverse mean surrogate distortion: large when the direction crosses the
/// other models' boundaries early.
pub fn transq1_from_distortions(d_surrogates: &[f64]) -> Result<f64> {
    if d_surrogates.is_empty() {
        return Err(Error::Config("transfer quality needs a non-empty surrogate pool".into()));
    }
    let mean = d_surrogates.iter().sum::<f64>() / d_surrogates.len() as f64;
    if mean <= 0.0 {
        return Err(Error::Input("surrogate distortions must be positive".into()));
    }
    Ok(1.0 / mean)
}

/// Reference-anchored surrogate score: 1 when distortions match the
/// white-box references, 0 at the black-box references, computed over the
/// surrogate pool for one input.
pub fn transq2_from_distortions(d_surrogates: &[f64], d_wb: &[f64], d_bb: &[f64]) -> Result<f64> {
    let m = d_surrogates.len();
    if m == 0 || d_wb.len() != m || d_bb.len() != m {
        return Err(Error::Input("surrogate and reference lists must share a positive length".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..m {
        num += d_bb[i] - d_surrogates[i];
        den += d_bb[i] - d_wb[i];
    }
    if den <= 0.0 {
        return Err(Error::ReferenceOrdering(format!(
            "per-surrogate references are not ordered (denominator {den})"
        )));
    }
    Ok(num / den)
}

/// Run the line searches behind the inverse-mean variant directly.
pub fn transq1(
    direction: &Direction,
    sample: &Sample,
    surrogates: &[&Model],
    ls: &LineSearchParams,
) -> Result<f64> {
    transq1_from_distortions(&surrogate_distortions(direction, sample, surrogates, ls)?)
}

/// Run the line searches behind the reference-anchored variant directly.
/// `references` pairs each surrogate with its (white-box, black-box)
/// distortion at this sample, in surrogate order.
pub fn transq2(
    direction: &Direction,
    sample: &Sample,
    surrogates: &[&Model],
    references: &[(f64, f64)],
    ls: &LineSearchParams,
) -> Result<f64> {
    if references.len() != surrogates.len() {
        return Err(Error::Input("one (wb, bb) reference pair per surrogate required".into()));
    }
    let d = surrogate_distortions(direction, sample, surrogates, ls)?;
    let wb: Vec<f64> = references.iter().map(|r| r.0).collect();
    let bb: Vec<f64> = references.iter().map(|r| r.1).collect();
    transq2_from_distortions(&d, &wb, &bb)
}

fn surrogate_distortions(
    direction: &Direction,
    sample: &Sample,
    surrogates: &[&Model],
    ls: &LineSearchParams,
) -> Result<Vec<f64>> {
    if surrogates.is_empty() {
        return Err(Error::Config("transfer quality needs a non-empty surrogate pool".into()));
    }
    let mut out = Vec::with_capacity(surrogates.len());
    for s in surrogates {
        let res = min_distortion_along(*s, sample, direction, ls, None)?;
        out.push(res.d);
    }
    Ok(out)
}

/// The product combining model similarity with per-input transfer quality.
pub fn fit_score(modsim: f64, transq: f64) -> f64 {
    modsim * transq
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FitEntry {
    pub modsim: f64,
    pub transq: f64,
    pub fit: f64,
}

/// Selection scores per (source, target, sample) for one attack and one
/// transfer-quality variant. Persisted as CSV.
#[derive(Debug, Clone)]
pub struct FitTable {
    pub attack: String,
    pub variant: TransQVariant,
    values: BTreeMap<(String, String, u32), FitEntry>,
}

impl FitTable {
    pub fn new(attack: &str, variant: TransQVariant) -> Self {
        Self { attack: attack.to_string(), variant, values: BTreeMap::new() }
    }

    pub fn insert(&mut self, source: &str, target: &str, sample: u32, entry: FitEntry) {
        self.values.insert((source.to_string(), target.to_string(), sample), entry);
    }

    pub fn get(&self, source: &str, target: &str, sample: u32) -> Option<FitEntry> {
        self.values.get(&(source.to_string(), target.to_string(), sample)).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Candidate (source, fit) pairs for one (target, sample).
    fn candidates(&self, target: &str, sample: u32, pool: &[String]) -> Result<Vec<(String, f64)>> {
        let mut out = Vec::with_capacity(pool.len());
        for source in pool {
            let entry = self.get(source, target, sample).ok_or_else(|| {
                Error::Incomplete(format!(
                    "fit table `{}` lacks ({source}, {target}, {sample})",
                    self.attack
                ))
            })?;
            out.push((source.clone(), entry.fit));
        }
        Ok(out)
    }

    /// Highest-scoring source for one input; ties toward the smallest id.
    pub fn select_source(&self, target: &str, sample: u32, pool: &[String]) -> Result<String> {
        if pool.is_empty() {
            return Err(Error::Config("selection pool is empty after exclusion".into()));
        }
        let candidates = self.candidates(target, sample, pool)?;
        Ok(argmax_candidate(&candidates).0)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["source", "target", "sample", "modsim", "transq", "fit"])?;
        for ((source, target, sample), e) in &self.values {
            w.write_record([
                source.as_str(),
                target.as_str(),
                &sample.to_string(),
                &format!("{:?}", e.modsim),
                &format!("{:?}", e.transq),
                &format!("{:?}", e.fit),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, attack: &str, variant: TransQVariant) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut table = Self::new(attack, variant);
        for record in r.records() {
            let rec = record?;
            let parse = |s: &str| -> Result<f64> {
                s.parse().map_err(|e| Error::Input(format!("bad fit value: {e}")))
            };
            table.insert(
                &rec[0],
                &rec[1],
                rec[2].parse().map_err(|e| Error::Input(format!("bad sample id: {e}")))?,
                FitEntry { modsim: parse(&rec[3])?, transq: parse(&rec[4])?, fit: parse(&rec[5])? },
            );
        }
        Ok(table)
    }

    /// The k highest-scoring sources in score order, smallest id on ties.
    pub fn select_topk(&self, target: &str, sample: u32, pool: &[String], k: usize) -> Result<Vec<String>> {
        if pool.len() < k {
            return Err(Error::Config(format!(
                "selection pool of {} cannot provide top-{k}",
                pool.len()
            )));
        }
        let mut candidates = self.candidates(target, sample, pool)?;
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(candidates.into_iter().take(k).map(|(id, _)| id).collect())
    }
}

fn argmax_candidate(candidates: &[(String, f64)]) -> (String, f64) {
    let mut best = candidates[0].clone();
    for c in &candidates[1..] {
        if c.1 > best.1 || (c.1 == best.1 && c.0 < best.0) {
            best = c.clone();
        }
    }
    best
}

/// Joint argmax over (attack, source) across several fit tables; ties go to
/// the smallest model id, then the smallest attack id.
pub fn select_attack_and_source(
    tables: &[&FitTable],
    target: &str,
    sample: u32,
    pool: &[String],
) -> Result<(String, String)> {
    if tables.is_empty() {
        return Err(Error::Config("pooled selection needs at least one fit table".into()));
    }
    if pool.is_empty() {
        return Err(Error::Config("selection pool is empty after exclusion".into()));
    }
    let mut best: Option<(f64, String, String)> = None;
    for table in tables {
        let candidates = table.candidates(target, sample, pool)?;
        for (source, fit) in candidates {
            let better = match &best {
                None => true,
                Some((bf, bsrc, batk)) => {
                    fit > *bf
                        || (fit == *bf && (source < *bsrc || (source == *bsrc && table.attack < *batk)))
                }
            };
            if better {
                best = Some((fit, source, table.attack.clone()));
            }
        }
    }
    let (_, source, attack) = best.expect("non-empty tables and pool");
    Ok((attack, source))
}

/// Fraction of surrogates whose boundary the direction crosses within a
/// fixed distortion budget; the success-rate selection baseline.
pub fn asr_fraction(d_surrogates: &[f64], distortion_budget: f64) -> Result<f64> {
    if d_surrogates.is_empty() {
        return Err(Error::Config("success-rate baseline needs a non-empty surrogate pool".into()));
    }
    let hits = d_surrogates.iter().filter(|&&d| d <= distortion_budget).count();
    Ok(hits as f64 / d_surrogates.len() as f64)
}

/// One selection method's outcome against a target: the chosen source per
/// sample, the distortion it achieved on the true target, and the aggregate
/// transferability of the chosen distortions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionResult {
    pub method: String,
    pub attack: String,
    pub target: String,
    /// (sample, chosen source or ensemble id, achieved distortion).
    pub per_sample: Vec<(u32, String, f64)>,
    pub score: f64,
}

impl SelectionResult {
    pub fn write_csv(results: &[SelectionResult], path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["method", "attack", "target", "sample", "chosen", "d", "score"])?;
        for r in results {
            for (sample, chosen, d) in &r.per_sample {
                w.write_record([
                    r.method.as_str(),
                    r.attack.as_str(),
                    r.target.as_str(),
                    &sample.to_string(),
                    chosen.as_str(),
                    &format!("{d:?}"),
                    &format!("{:?}", r.score),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_surrogate_distortions_invert() {
        assert_eq!(transq1_from_distortions(&[2.0, 2.0, 2.0]).unwrap(), 0.5);
        assert_eq!(transq1_from_distortions(&[4.0]).unwrap(), 0.25);
    }

    #[test]
    fn doubling_distortions_halves_the_score() {
        let d = [0.5, 1.5, 2.5];
        let doubled: Vec<f64> = d.iter().map(|v| v * 2.0).collect();
        let a = transq1_from_distortions(&d).unwrap();
        let b = transq1_from_distortions(&doubled).unwrap();
        assert!((b - a / 2.0).abs() < 1e-15);
    }

    #[test]
    fn empty_pool_is_rejected() {
        assert!(transq1_from_distortions(&[]).is_err());
    }

    #[test]
    fn reference_anchors() {
        let wb = [1.0, 2.0];
        let bb = [5.0, 6.0];
        assert_eq!(transq2_from_distortions(&wb, &wb, &bb).unwrap(), 1.0);
        assert_eq!(transq2_from_distortions(&bb, &wb, &bb).unwrap(), 0.0);
        assert_eq!(transq2_from_distortions(&[3.0, 4.0], &wb, &bb).unwrap(), 0.5);
    }

    #[test]
    fn unordered_references_error() {
        assert!(matches!(
            transq2_from_distortions(&[1.0], &[3.0], &[2.0]),
            Err(Error::ReferenceOrdering(_))
        ));
    }

    #[test]
    fn fit_product_identities() {
        assert_eq!(fit_score(0.8, 0.5), 0.4);
        assert_eq!(fit_score(1.0, 0.37), 0.37);
        assert_eq!(fit_score(0.0, 123.0), 0.0);
    }

    fn table_with(scores: &[(&str, f64)]) -> FitTable {
        let mut t = FitTable::new("di", TransQVariant::One);
        for (src, fit) in scores {
            t.insert(src, "t", 0, FitEntry { modsim: 1.0, transq: *fit, fit: *fit });
        }
        t
    }

    #[test]
    fn argmax_selection_and_ties() {
        let t = table_with(&[("a", 0.1), ("b", 0.9), ("c", 0.3)]);
        let pool = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        assert_eq!(t.select_source("t", 0, &pool).unwrap(), "b");
        let tie = table_with(&[("b", 0.5), ("a", 0.5)]);
        let pool2 = vec!["a".to_string(), "b".to_string()];
        assert_eq!(tie.select_source("t", 0, &pool2).unwrap(), "a");
        assert!(t.select_source("t", 0, &[]).is_err());
    }

    #[test]
    fn positive_scaling_leaves_argmax_unchanged() {
        let pool = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let t = table_with(&[("a", 0.1), ("b", 0.9), ("c", 0.3)]);
        let scaled = table_with(&[("a", 0.1 * 7.0), ("b", 0.9 * 7.0), ("c", 0.3 * 7.0)]);
        assert_eq!(
            t.select_source("t", 0, &pool).unwrap(),
            scaled.select_source("t", 0, &pool).unwrap()
        );
    }

    #[test]
    fn topk_ordering_and_consistency_with_single() {
        let t = table_with(&[("a", 0.9), ("b", 0.8), ("c", 0.7), ("d", 0.1)]);
        let pool: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        assert_eq!(t.select_topk("t", 0, &pool, 3).unwrap(), vec!["a", "b", "c"]);
        assert_eq!(
            t.select_topk("t", 0, &pool, 1).unwrap()[0],
            t.select_source("t", 0, &pool).unwrap()
        );
        let whole = t.select_topk("t", 0, &pool, 4).unwrap();
        assert_eq!(whole, vec!["a", "b", "c", "d"]);
        assert!(t.select_topk("t", 0, &pool, 5).is_err());
    }

    #[test]
    fn pooled_selection_prefers_the_dominating_attack() {
        let weak = table_with(&[("a", 0.2), ("b", 0.1)]);
        let mut strong = FitTable::new("taig", TransQVariant::One);
        strong.insert("a", "t", 0, FitEntry { modsim: 1.0, transq: 0.6, fit: 0.6 });
        strong.insert("b", "t", 0, FitEntry { modsim: 1.0, transq: 0.5, fit: 0.5 });
        let pool = vec!["a".to_string(), "b".to_string()];
        let (attack, source) = select_attack_and_source(&[&weak, &strong], "t", 0, &pool).unwrap();
        assert_eq!(attack, "taig");
        assert_eq!(source, "a");
        // A single table reduces to plain source selection.
        let (_, single) = select_attack_and_source(&[&weak], "t", 0, &pool).unwrap();
        assert_eq!(single, weak.select_source("t", 0, &pool).unwrap());
    }

    #[test]
    fn asr_counts_flips_within_budget() {
        assert_eq!(asr_fraction(&[0.1, 0.5, 2.0, 0.02], 0.5).unwrap(), 0.75);
        assert!(asr_fraction(&[], 0.5).is_err());
    }
}
