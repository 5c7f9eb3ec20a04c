//! Synthetic classification task: class-conditional Gaussian mixtures pushed
//! through a fixed random nonlinearity, clipped to the unit box. Small enough
//! to train dozens of models on a CPU while keeping decision boundaries
//! curved enough that different architectures disagree.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One labeled input vector; the unit of attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u32,
    pub x: Vec<f64>,
    pub y: usize,
}

/// Train/eval splits sharing one feature space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub eval: Vec<Sample>,
    pub classes: usize,
    pub features: usize,
    pub seed: u64,
}

impl Dataset {
    pub fn eval_sample(&self, id: u32) -> Option<&Sample> {
        self.eval.iter().find(|s| s.id == id)
    }
}

// Mixture geometry. Two centers per class keeps class regions disconnected,
// the warp bends the boundaries between them. Spread and warp are sized so
// trained models land below perfect accuracy and disagree near boundaries.
const CENTERS_PER_CLASS: usize = 3;
const CENTER_LO: f64 = 0.38;
const CENTER_HI: f64 = 0.62;
const CLUSTER_SIGMA: f64 = 0.14;
const WARP_AMPLITUDE: f64 = 0.15;

/// Deterministically generate the benchmark task. Identical arguments yield
/// bit-identical datasets.
pub fn generate_dataset(
    seed: u64,
    n_train: usize,
    n_eval: usize,
    classes: usize,
    features: usize,
) -> Result<Dataset> {
    generate_with_geometry(
        seed,
        n_train,
        n_eval,
        classes,
        features,
        CENTER_LO,
        CENTER_HI,
        CLUSTER_SIGMA,
        WARP_AMPLITUDE,
    )
}

#[doc(hidden)]
#[allow(clippy::too_many_arguments)]
pub fn generate_with_geometry(
    seed: u64,
    n_train: usize,
    n_eval: usize,
    classes: usize,
    features: usize,
    center_lo: f64,
    center_hi: f64,
    sigma: f64,
    warp_amplitude: f64,
) -> Result<Dataset> {
    if classes < 3 {
        return Err(Error::Config(format!("need at least 3 classes, got {classes}")));
    }
    if features < 2 {
        return Err(Error::Config(format!("need at least 2 features, got {features}")));
    }
    if n_train < classes || n_eval < classes {
        return Err(Error::Config(format!(
            "split sizes ({n_train} train / {n_eval} eval) must be at least the class count {classes}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centers = vec![vec![0.0; features]; classes * CENTERS_PER_CLASS];
    for c in centers.iter_mut() {
        for v in c.iter_mut() {
            *v = rng.gen_range(center_lo..center_hi);
        }
    }

    // Fixed random warp shared by every sample.
    let scale = 1.0 / (features as f64).sqrt();
    let mut warp_w = vec![0.0; features * features];
    for v in warp_w.iter_mut() {
        *v = gauss(&mut rng) * scale;
    }
    let mut warp_b = vec![0.0; features];
    for v in warp_b.iter_mut() {
        *v = gauss(&mut rng);
    }

    let draw = |id: u32, class: usize, rng: &mut ChaCha8Rng| -> Sample {
        let which = rng.gen_range(0..CENTERS_PER_CLASS);
        let center = &centers[class * CENTERS_PER_CLASS + which];
        let z: Vec<f64> = center.iter().map(|&c| c + sigma * gauss(rng)).collect();
        // warp: z + a * tanh(W (z - 0.5) + b), then clip to the unit box
        let mut x = vec![0.0; features];
        for (i, xi) in x.iter_mut().enumerate() {
            let mut acc = warp_b[i];
            for (j, zj) in z.iter().enumerate() {
                acc += warp_w[i * features + j] * (zj - 0.5);
            }
            *xi = (z[i] + warp_amplitude * acc.tanh()).clamp(0.0, 1.0);
        }
        Sample { id, x, y: class }
    };

    let mut train = Vec::with_capacity(n_train);
    for i in 0..n_train {
        train.push(draw(i as u32, i % classes, &mut rng));
    }
    let mut eval = Vec::with_capacity(n_eval);
    for i in 0..n_eval {
        eval.push(draw((n_train + i) as u32, i % classes, &mut rng));
    }

    Ok(Dataset { train, eval, classes, features, seed })
}

/// Standard normal via Box-Muller on two uniform draws.
pub(crate) fn gauss<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_classes_match_request() {
        let d = generate_dataset(7, 600, 100, 5, 64).unwrap();
        assert_eq!(d.train.len(), 600);
        assert_eq!(d.eval.len(), 100);
        assert_eq!(d.classes, 5);
        for split in [&d.train, &d.eval] {
            for class in 0..5 {
                assert!(split.iter().any(|s| s.y == class), "class {class} missing from a split");
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_dataset(7, 120, 30, 4, 16).unwrap();
        let b = generate_dataset(7, 120, 30, 4, 16).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.eval, b.eval);
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate_dataset(7, 120, 30, 4, 16).unwrap();
        let b = generate_dataset(8, 120, 30, 4, 16).unwrap();
        assert!(a.train.iter().zip(&b.train).any(|(s, t)| s.x != t.x));
    }

    #[test]
    fn features_stay_in_unit_box() {
        let d = generate_dataset(3, 200, 50, 5, 24).unwrap();
        for s in d.train.iter().chain(&d.eval) {
            assert!(s.x.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(s.y < 5);
        }
    }

    #[test]
    fn rejects_degenerate_configs() {
        assert!(generate_dataset(1, 10, 10, 2, 8).is_err());
        assert!(generate_dataset(1, 2, 10, 3, 8).is_err());
        assert!(generate_dataset(1, 10, 10, 3, 1).is_err());
    }
}
