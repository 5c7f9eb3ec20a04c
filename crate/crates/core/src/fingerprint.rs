//! Model-similarity criterion from decision agreement on benign queries:
//! normalized mutual information between top-1 decision profiles, computed
//! against a black-box target with a fixed query budget.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DecisionOracle;
use crate::zoo::Sample;

/// Top-1 decisions of one model over an ordered benign query set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionProfile {
    pub model_id: String,
    pub decisions: Vec<usize>,
    pub query_set_id: String,
}

/// Query a model (or the black-box target) over the benign set.
pub fn decision_profile(
    oracle: &dyn DecisionOracle,
    model_id: &str,
    query_set: &[Sample],
    query_set_id: &str,
) -> Result<DecisionProfile> {
    let mut decisions = Vec::with_capacity(query_set.len());
    for q in query_set {
        decisions.push(oracle.decide(&q.x)?);
    }
    Ok(DecisionProfile {
        model_id: model_id.to_string(),
        decisions,
        query_set_id: query_set_id.to_string(),
    })
}

/// Normalized mutual information of two decision profiles over the same
/// query set: I(A;B) / max(H(A), H(B)), with 0/0 mapped to 1 (two constant
/// profiles agree vacuously). Exactly symmetric in its arguments.
pub fn mod_sim(a: &DecisionProfile, b: &DecisionProfile) -> Result<f64> {
    if a.query_set_id != b.query_set_id || a.decisions.len() != b.decisions.len() {
        return Err(Error::Input(format!(
            "profiles `{}` and `{}` use different query sets",
            a.model_id, b.model_id
        )));
    }
    if a.decisions.is_empty() {
        return Err(Error::Input("empty decision profiles".into()));
    }
    // Canonical argument order makes the float result order-independent.
    let (first, second) = if a.model_id <= b.model_id { (a, b) } else { (b, a) };
    Ok(nmi(&first.decisions, &second.decisions))
}

fn nmi(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut pa: BTreeMap<usize, f64> = BTreeMap::new();
    let mut pb: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1.0;
        *pa.entry(x).or_default() += 1.0;
        *pb.entry(y).or_default() += 1.0;
    }
    let term = |c: f64| (c / n) * (c / n).ln();
    let ha = -pa.values().map(|&c| term(c)).sum::<f64>();
    let hb = -pb.values().map(|&c| term(c)).sum::<f64>();
    let hmax = ha.max(hb);
    if hmax == 0.0 {
        return 1.0;
    }
    // I(A;B) = H(A) + H(B) - H(A,B). For identical profiles the joint and
    // marginal sums share every term, so the self-similarity is exactly 1.
    let hab = -joint.values().map(|&c| term(c)).sum::<f64>();
    let mi = ha + hb - hab;
    (mi / hmax).clamp(0.0, 1.0)
}

/// Symmetric ModSim values over a set of profiles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub model_ids: Vec<String>,
    /// Keyed by ordered pair (min id, max id); diagonal included.
    #[serde(with = "pair_map")]
    pub values: BTreeMap<(String, String), f64>,
    pub query_set_id: String,
    pub budget: usize,
}

/// JSON-friendly encoding of the pair-keyed map as an array of triples.
mod pair_map {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<(String, String), f64>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        let flat: Vec<(&String, &String, f64)> =
            map.iter().map(|((a, b), v)| (a, b, *v)).collect();
        flat.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<(String, String), f64>, D::Error> {
        let flat: Vec<(String, String, f64)> = Vec::deserialize(d)?;
        Ok(flat.into_iter().map(|(a, b, v)| ((a, b), v)).collect())
    }
}

impl SimilarityMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let key = if a <= b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        };
        self.values.get(&key).copied()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["model".to_string()];
        header.extend(self.model_ids.iter().cloned());
        w.write_record(&header)?;
        for a in &self.model_ids {
            let mut rec = vec![a.clone()];
            for b in &self.model_ids {
                rec.push(format!("{:?}", self.get(a, b).unwrap_or(f64::NAN)));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, query_set_id: &str, budget: usize) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let model_ids: Vec<String> = r.headers()?.iter().skip(1).map(str::to_string).collect();
        let mut values = BTreeMap::new();
        for record in r.records() {
            let rec = record?;
            let a = rec[0].to_string();
            for (j, b) in model_ids.iter().enumerate() {
                let v: f64 = rec[j + 1]
                    .parse()
                    .map_err(|e| Error::Input(format!("bad similarity value: {e}")))?;
                let key = if a <= *b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
                values.insert(key, v);
            }
        }
        Ok(Self { model_ids, values, query_set_id: query_set_id.to_string(), budget })
    }
}

/// All-pairs similarity over the given profiles. The caller controls how
/// each profile was produced; the target's profile is expected to come from
/// exactly `budget` oracle queries.
pub fn similarity_matrix(profiles: &[DecisionProfile]) -> Result<SimilarityMatrix> {
    if profiles.len() < 2 {
        return Err(Error::Config("similarity matrix needs at least two profiles".into()));
    }
    let budget = profiles[0].decisions.len();
    if budget < 10 {
        return Err(Error::Config(format!("fingerprint budget {budget} below minimum 10")));
    }
    let mut values = BTreeMap::new();
    for (i, a) in profiles.iter().enumerate() {
        for b in profiles.iter().skip(i) {
            let key = if a.model_id <= b.model_id {
                (a.model_id.clone(), b.model_id.clone())
            } else {
                (b.model_id.clone(), a.model_id.clone())
            };
            values.insert(key, mod_sim(a, b)?);
        }
    }
    Ok(SimilarityMatrix {
        model_ids: profiles.iter().map(|p| p.model_id.clone()).collect(),
        values,
        query_set_id: profiles[0].query_set_id.clone(),
        budget,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn profile(id: &str, decisions: Vec<usize>) -> DecisionProfile {
        DecisionProfile { model_id: id.into(), decisions, query_set_id: "q".into() }
    }

    #[test]
    fn identical_non_constant_profiles_score_one() {
        let a = profile("a", vec![0, 1, 2, 1, 0, 2]);
        let b = profile("b", vec![0, 1, 2, 1, 0, 2]);
        assert_eq!(mod_sim(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn independent_uniform_profiles_score_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 10_000;
        let a = profile("a", (0..n).map(|_| rng.gen_range(0..5)).collect());
        let b = profile("b", (0..n).map(|_| rng.gen_range(0..5)).collect());
        let s = mod_sim(&a, &b).unwrap();
        assert!(s <= 0.01, "independent NMI {s}");
    }

    #[test]
    fn symmetry_is_exact() {
        let a = profile("a", vec![0, 0, 1, 2, 1, 0, 2, 2, 1, 0]);
        let b = profile("b", vec![1, 0, 1, 2, 2, 0, 2, 1, 1, 0]);
        assert_eq!(mod_sim(&a, &b).unwrap().to_bits(), mod_sim(&b, &a).unwrap().to_bits());
    }

    #[test]
    fn constant_profiles_agree_vacuously() {
        let a = profile("a", vec![1; 20]);
        let b = profile("b", vec![2; 20]);
        assert_eq!(mod_sim(&a, &b).unwrap(), 1.0);
        // One constant, one varied: no information shared.
        let c = profile("c", vec![0, 1, 0, 1].repeat(5));
        assert_eq!(mod_sim(&a, &c).unwrap(), 0.0);
    }

    #[test]
    fn joint_relabeling_leaves_the_score_unchanged() {
        let a = profile("a", vec![0, 1, 2, 1, 0, 2, 2, 0]);
        let b = profile("b", vec![1, 1, 2, 0, 0, 2, 1, 0]);
        let base = mod_sim(&a, &b).unwrap();
        let relabel = |d: &[usize]| -> Vec<usize> { d.iter().map(|&v| (v + 1) % 3).collect() };
        let a2 = profile("a", relabel(&a.decisions));
        let b2 = profile("b", relabel(&b.decisions));
        assert!((mod_sim(&a2, &b2).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn mismatched_query_sets_are_rejected() {
        let a = profile("a", vec![0, 1]);
        let mut b = profile("b", vec![0, 1]);
        b.query_set_id = "other".into();
        assert!(mod_sim(&a, &b).is_err());
    }

    #[test]
    fn matrix_diagonal_is_one_for_non_constant_profiles() {
        let profiles = vec![
            profile("a", vec![0, 1, 2, 1, 0, 2, 1, 1, 0, 2]),
            profile("b", vec![1, 1, 2, 0, 0, 2, 2, 1, 0, 0]),
        ];
        let m = similarity_matrix(&profiles).unwrap();
        assert_eq!(m.get("a", "a").unwrap(), 1.0);
        assert_eq!(m.get("b", "b").unwrap(), 1.0);
        assert_eq!(m.get("a", "b"), m.get("b", "a"));
    }

    #[test]
    fn tiny_budgets_are_rejected() {
        let profiles = vec![profile("a", vec![0, 1]), profile("b", vec![1, 0])];
        assert!(similarity_matrix(&profiles).is_err());
    }
}
