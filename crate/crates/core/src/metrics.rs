//! Measurement core: per-pixel distortion, the empirical operating
//! characteristic (attack success rate as a function of distortion), and the
//! signed transferability score that locates a transfer attack between the
//! black-box (0) and white-box (1) reference attacks.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::LineSearchStatus;

/// Attack id under which white-box reference rows are stored.
pub const WB_REF: &str = "wb-ref";
/// Attack id under which black-box reference rows are stored.
pub const BB_REF: &str = "bb-ref";
/// Source column value for reference rows, which have no source model.
pub const NO_SOURCE: &str = "-";

/// Average per-pixel amplitude of a perturbation: ||x_a - x||_2 / sqrt(N).
pub fn distortion(x_a: &[f64], x: &[f64]) -> Result<f64> {
    if x_a.len() != x.len() {
        return Err(Error::Input(format!(
            "distortion over mismatched dims {} vs {}",
            x_a.len(),
            x.len()
        )));
    }
    let ss: f64 = x_a.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(ss.sqrt() / (x.len() as f64).sqrt())
}

/// Empirical operating characteristic: the right-continuous step function
/// P(D) = (number of distortions <= D) / n over the sorted distortion list.
#[derive(Debug, Clone)]
pub struct OperatingCharacteristic {
    sorted: Vec<f64>,
}

impl OperatingCharacteristic {
    pub fn new(distortions: &[f64]) -> Result<Self> {
        if distortions.is_empty() {
            return Err(Error::Input("operating characteristic over an empty list".into()));
        }
        if distortions.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::Input("distortions must be finite and nonnegative".into()));
        }
        let mut sorted = distortions.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    pub fn n(&self) -> usize {
        self.sorted.len()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    /// Success rate at distortion budget `d` (right-continuous in `d`).
    pub fn eval(&self, d: f64) -> f64 {
        let count = self.sorted.partition_point(|&v| v <= d);
        count as f64 / self.sorted.len() as f64
    }

    /// Left limit of the step function at `d`.
    fn eval_left(&self, d: f64) -> f64 {
        let count = self.sorted.partition_point(|&v| v < d);
        count as f64 / self.sorted.len() as f64
    }

    /// Curve data for export.
    pub fn export(&self) -> CurveExport {
        let n = self.sorted.len() as f64;
        CurveExport {
            breakpoints: self.sorted.clone(),
            levels: (1..=self.sorted.len()).map(|j| j as f64 / n).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveExport {
    pub breakpoints: Vec<f64>,
    pub levels: Vec<f64>,
}

/// Signed area between two operating characteristics, integrated by the
/// trapezoid rule over the merged breakpoint grid (jumps contribute
/// zero-width segments, so the result is exact for step functions). Runs
/// from 0 to the largest breakpoint of either curve. Serves as the
/// independent cross-check of the Lebesgue-sum numerator.
pub fn cdf_gap_area(upper: &OperatingCharacteristic, lower: &OperatingCharacteristic) -> f64 {
    let mut grid: Vec<f64> = upper.sorted.iter().chain(&lower.sorted).copied().collect();
    grid.push(0.0);
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    // Piecewise-linear graph of the gap with explicit jump segments.
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(grid.len() * 2);
    for &g in &grid {
        points.push((g, upper.eval_left(g) - lower.eval_left(g)));
        points.push((g, upper.eval(g) - lower.eval(g)));
    }
    let mut area = 0.0;
    for pair in points.windows(2) {
        let (x0, y0) = pair[0];
        let (x1, y1) = pair[1];
        area += 0.5 * (y0 + y1) * (x1 - x0);
    }
    area
}

/// The signed transferability estimate and its raw sums.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferabilityScore {
    pub value: f64,
    pub numerator: f64,
    pub denominator: f64,
    pub n: usize,
}

/// Transferability of a per-sample distortion list against white-box and
/// black-box reference lists over the same sample set. Each list is sorted
/// ascending internally; the score is the ratio of Lebesgue sums oriented so
/// that matching the white box gives exactly 1 and matching the black box
/// gives exactly 0. Negative values mean worse than the black box.
pub fn transferability_score(d_st: &[f64], d_wb: &[f64], d_bb: &[f64]) -> Result<TransferabilityScore> {
    let n = d_st.len();
    if n == 0 || d_wb.len() != n || d_bb.len() != n {
        return Err(Error::Input(format!(
            "distortion lists must share a positive length: {} / {} / {}",
            n,
            d_wb.len(),
            d_bb.len()
        )));
    }
    let sort = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s
    };
    let (st, wb, bb) = (sort(d_st), sort(d_wb), sort(d_bb));
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for j in 0..n {
        numerator += bb[j] - st[j];
        denominator += bb[j] - wb[j];
    }
    if denominator <= 0.0 {
        return Err(Error::ReferenceOrdering(format!(
            "white-box reference does not dominate black-box reference (denominator {denominator})"
        )));
    }
    Ok(TransferabilityScore { value: numerator / denominator, numerator, denominator, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowStatus {
    Found,
    NotFoundWithinCap,
}

impl From<LineSearchStatus> for RowStatus {
    fn from(s: LineSearchStatus) -> Self {
        match s {
            LineSearchStatus::Found => RowStatus::Found,
            LineSearchStatus::NotFoundWithinCap => RowStatus::NotFoundWithinCap,
        }
    }
}

/// One measured minimal distortion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistortionRow {
    pub attack: String,
    pub source: String,
    pub target: String,
    pub sample: u32,
    pub d: f64,
    pub status: RowStatus,
    pub clipped: bool,
    pub queries: u64,
}

/// Minimal boundary distortions indexed by (attack, source, target, sample).
/// At most one row per key; iteration and CSV output are key-ordered, so
/// serialization does not depend on insertion order.
#[derive(Debug, Clone, Default)]
pub struct DistortionTable {
    rows: BTreeMap<(String, String, String, u32), DistortionRow>,
}

impl DistortionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn insert(&mut self, row: DistortionRow) -> Result<()> {
        if row.d < 0.0 {
            return Err(Error::Input(format!("negative distortion in row for sample {}", row.sample)));
        }
        let key = (row.attack.clone(), row.source.clone(), row.target.clone(), row.sample);
        if self.rows.contains_key(&key) {
            return Err(Error::Input(format!(
                "duplicate row ({}, {}, {}, {})",
                key.0, key.1, key.2, key.3
            )));
        }
        self.rows.insert(key, row);
        Ok(())
    }

    pub fn get(&self, attack: &str, source: &str, target: &str, sample: u32) -> Option<&DistortionRow> {
        self.rows
            .get(&(attack.to_string(), source.to_string(), target.to_string(), sample))
    }

    pub fn rows(&self) -> impl Iterator<Item = &DistortionRow> {
        self.rows.values()
    }

    /// Per-sample distortions for one (attack, source, target) triple in the
    /// order of `samples`. Missing rows are an incompleteness error naming
    /// the gaps.
    pub fn sample_list(
        &self,
        attack: &str,
        source: &str,
        target: &str,
        samples: &[u32],
    ) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(samples.len());
        let mut missing = Vec::new();
        for &s in samples {
            match self.get(attack, source, target, s) {
                Some(row) => out.push(row.d),
                None => missing.push(s),
            }
        }
        if !missing.is_empty() {
            return Err(Error::Incomplete(format!(
                "({attack}, {source}, {target}) lacks samples {missing:?}"
            )));
        }
        Ok(out)
    }

    /// Reference distortions (wb-ref or bb-ref) for a target.
    pub fn reference_list(&self, which: &str, target: &str, samples: &[u32]) -> Result<Vec<f64>> {
        self.sample_list(which, NO_SOURCE, target, samples)
    }

    /// Fraction of rows for an attack that never flipped within the cap.
    pub fn capped_fraction(&self, attack: &str) -> f64 {
        let mut total = 0usize;
        let mut capped = 0usize;
        for row in self.rows.values() {
            if row.attack == attack {
                total += 1;
                if row.status == RowStatus::NotFoundWithinCap {
                    capped += 1;
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            capped as f64 / total as f64
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["attack", "source", "target", "sample", "d", "status", "clipped", "queries"])?;
        for row in self.rows.values() {
            w.write_record([
                row.attack.as_str(),
                row.source.as_str(),
                row.target.as_str(),
                &row.sample.to_string(),
                &format!("{:?}", row.d),
                match row.status {
                    RowStatus::Found => "found",
                    RowStatus::NotFoundWithinCap => "not-found-within-cap",
                },
                if row.clipped { "1" } else { "0" },
                &row.queries.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut table = Self::new();
        for record in r.records() {
            let rec = record?;
            let status = match &rec[5] {
                "found" => RowStatus::Found,
                "not-found-within-cap" => RowStatus::NotFoundWithinCap,
                other => return Err(Error::Input(format!("unknown status `{other}`"))),
            };
            table.insert(DistortionRow {
                attack: rec[0].to_string(),
                source: rec[1].to_string(),
                target: rec[2].to_string(),
                sample: rec[3].parse().map_err(|e| Error::Input(format!("bad sample id: {e}")))?,
                d: rec[4].parse().map_err(|e| Error::Input(format!("bad distortion: {e}")))?,
                status,
                clipped: &rec[6] == "1",
                queries: rec[7].parse().map_err(|e| Error::Input(format!("bad query count: {e}")))?,
            })?;
        }
        Ok(table)
    }
}

/// A transferability matrix over all (source, target) pairs of a zoo for one
/// attack. Diagonal and same-family cells are computed but flagged so
/// downstream consumers can exclude them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub attack: String,
    pub model_ids: Vec<String>,
    /// Row-major (source, target) scores.
    pub values: Vec<f64>,
    /// Row-major flags: true when source and target share a family (or are
    /// the same model).
    pub same_family: Vec<bool>,
}

impl TransferMatrix {
    pub fn get(&self, source_idx: usize, target_idx: usize) -> f64 {
        self.values[source_idx * self.model_ids.len() + target_idx]
    }

    pub fn flagged(&self, source_idx: usize, target_idx: usize) -> bool {
        self.same_family[source_idx * self.model_ids.len() + target_idx]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["source".to_string()];
        header.extend(self.model_ids.iter().cloned());
        w.write_record(&header)?;
        for (i, src) in self.model_ids.iter().enumerate() {
            let mut rec = vec![src.clone()];
            for j in 0..self.model_ids.len() {
                rec.push(format!("{:?}", self.get(i, j)));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Build the m x m transferability matrix for one attack from a complete
/// distortion table. `families` pairs each model id with its family tag.
pub fn transfer_matrix(
    table: &DistortionTable,
    attack: &str,
    families: &[(String, String)],
    samples: &[u32],
) -> Result<TransferMatrix> {
    let m = families.len();
    let mut values = Vec::with_capacity(m * m);
    let mut same_family = Vec::with_capacity(m * m);
    for (src, src_fam) in families {
        for (tgt, tgt_fam) in families {
            let d_st = table.sample_list(attack, src, tgt, samples)?;
            let d_wb = table.reference_list(WB_REF, tgt, samples)?;
            let d_bb = table.reference_list(BB_REF, tgt, samples)?;
            values.push(transferability_score(&d_st, &d_wb, &d_bb)?.value);
            same_family.push(src_fam == tgt_fam);
        }
    }
    Ok(TransferMatrix {
        attack: attack.to_string(),
        model_ids: families.iter().map(|(id, _)| id.clone()).collect(),
        values,
        same_family,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distortion_identities() {
        let x = vec![0.2, 0.4, 0.6, 0.8];
        assert_eq!(distortion(&x, &x).unwrap(), 0.0);
        // Constant offset c on every pixel has per-pixel distortion |c|.
        let shifted: Vec<f64> = x.iter().map(|v| v + 0.05).collect();
        assert!((distortion(&shifted, &x).unwrap() - 0.05).abs() < 1e-15);
        assert!(distortion(&x, &[0.0; 3]).is_err());
    }

    #[test]
    fn distortion_matches_naive_recomputation() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = 64;
        let a: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let mut ss = 0.0;
        for i in 0..n {
            ss += (a[i] - b[i]).powi(2);
        }
        let naive = ss.sqrt() / (n as f64).sqrt();
        assert!((distortion(&a, &b).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn step_function_evaluation() {
        let oc = OperatingCharacteristic::new(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(oc.eval(2.5), 2.0 / 3.0);
        assert_eq!(oc.eval(0.5), 0.0);
        assert_eq!(oc.eval(3.0), 1.0);
        assert_eq!(oc.eval(0.0), 0.0);
    }

    #[test]
    fn ties_are_right_continuous() {
        let oc = OperatingCharacteristic::new(&[1.0, 1.0, 2.0]).unwrap();
        // Intervals from the sorted list with d(1)=d(2)=1: value at 1 is 2/3.
        assert_eq!(oc.eval(1.0), 2.0 / 3.0);
        assert_eq!(oc.eval(0.999), 0.0);
        assert_eq!(oc.eval(2.0), 1.0);
    }

    #[test]
    fn single_element_characteristic() {
        let oc = OperatingCharacteristic::new(&[5.0]).unwrap();
        assert_eq!(oc.eval(4.999), 0.0);
        assert_eq!(oc.eval(5.0), 1.0);
        assert!(OperatingCharacteristic::new(&[]).is_err());
    }

    #[test]
    fn score_anchors_are_exact() {
        let wb = vec![0.3, 0.1, 0.2];
        let bb = vec![1.0, 2.0, 1.5];
        let at_wb = transferability_score(&wb, &wb, &bb).unwrap();
        assert_eq!(at_wb.value, 1.0);
        let at_bb = transferability_score(&bb, &wb, &bb).unwrap();
        assert_eq!(at_bb.value, 0.0);
    }

    #[test]
    fn half_way_example() {
        let score = transferability_score(&[3.0, 4.0], &[1.0, 2.0], &[5.0, 6.0]).unwrap();
        assert_eq!(score.value, 0.5);
    }

    #[test]
    fn worse_than_black_box_goes_negative() {
        let score = transferability_score(&[7.0, 8.0], &[1.0, 2.0], &[5.0, 6.0]).unwrap();
        assert_eq!(score.value, -0.5);
        assert!(score.numerator < 0.0);
    }

    #[test]
    fn printed_and_sign_explicit_forms_agree() {
        // The same ratio with numerator and denominator both negated.
        let st = [0.4, 0.9, 0.6];
        let wb = [0.1, 0.2, 0.15];
        let bb = [0.8, 1.4, 1.1];
        let score = transferability_score(&st, &wb, &bb).unwrap();
        let sort = |v: &[f64]| {
            let mut s = v.to_vec();
            s.sort_by(f64::total_cmp);
            s
        };
        let (sst, swb, sbb) = (sort(&st), sort(&wb), sort(&bb));
        let printed_num: f64 = (0..3).map(|j| sst[j] - sbb[j]).sum();
        let printed_den: f64 = (0..3).map(|j| swb[j] - sbb[j]).sum();
        assert!((score.value - printed_num / printed_den).abs() < 1e-15);
    }

    #[test]
    fn degenerate_references_are_an_error() {
        assert!(matches!(
            transferability_score(&[1.0], &[2.0], &[2.0]),
            Err(Error::ReferenceOrdering(_))
        ));
        assert!(transferability_score(&[1.0], &[1.0, 2.0], &[3.0, 4.0]).is_err());
    }

    #[test]
    fn lebesgue_numerator_matches_trapezoid_area() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let n = 40;
            let st: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..3.0)).collect();
            let bb: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..3.0)).collect();
            let wb: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.1)).collect();
            let score = transferability_score(&st, &wb, &bb).unwrap();
            let area = cdf_gap_area(
                &OperatingCharacteristic::new(&st).unwrap(),
                &OperatingCharacteristic::new(&bb).unwrap(),
            );
            let lhs = score.numerator;
            let rhs = n as f64 * area;
            assert!(
                (lhs - rhs).abs() <= 1e-9 * lhs.abs().max(rhs.abs()).max(1e-12),
                "numerator {lhs} vs area {rhs}"
            );
        }
    }

    #[test]
    fn duplicate_rows_are_rejected() {
        let mut t = DistortionTable::new();
        let row = DistortionRow {
            attack: "di".into(),
            source: "a".into(),
            target: "b".into(),
            sample: 1,
            d: 0.5,
            status: RowStatus::Found,
            clipped: false,
            queries: 12,
        };
        t.insert(row.clone()).unwrap();
        assert!(t.insert(row).is_err());
    }

    #[test]
    fn table_round_trips_through_csv() {
        let mut t = DistortionTable::new();
        for (i, d) in [0.25, 0.5, 50.0].iter().enumerate() {
            t.insert(DistortionRow {
                attack: "di".into(),
                source: "s".into(),
                target: "t".into(),
                sample: i as u32,
                d: *d,
                status: if *d >= 50.0 { RowStatus::NotFoundWithinCap } else { RowStatus::Found },
                clipped: i == 1,
                queries: 10 + i as u64,
            })
            .unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.csv");
        t.write_csv(&path).unwrap();
        let back = DistortionTable::read_csv(&path).unwrap();
        assert_eq!(back.len(), 3);
        let row = back.get("di", "s", "t", 1).unwrap();
        assert_eq!(row.d, 0.5);
        assert!(row.clipped);
        assert_eq!(back.get("di", "s", "t", 2).unwrap().status, RowStatus::NotFoundWithinCap);
    }

    #[test]
    fn missing_rows_reported_as_gaps() {
        let t = DistortionTable::new();
        match t.sample_list("di", "s", "t", &[1, 2]) {
            Err(Error::Incomplete(msg)) => assert!(msg.contains('1') && msg.contains('2')),
            other => panic!("expected incompleteness error, got {other:?}"),
        }
    }
}
