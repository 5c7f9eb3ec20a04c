//! Direction normalization and the minimal-distortion oracle: the smallest
//! ray parameter along a direction that flips a target's decision, estimated
//! by exponential bracketing plus bisection, with exact query accounting.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::zoo::{Model, Sample};

/// A normalized adversarial perturbation direction of Euclidean norm sqrt(N),
/// attributed to (attack, source, input).
#[derive(Debug, Clone)]
pub struct Direction {
    pub u: Vec<f64>,
    pub attack_id: String,
    pub source_id: String,
    pub sample_id: u32,
}

impl Direction {
    pub fn norm(&self) -> f64 {
        self.u.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Scale a raw perturbation to norm sqrt(N).
pub fn normalize_direction(
    raw: &[f64],
    attack_id: &str,
    source_id: &str,
    sample_id: u32,
) -> Result<Direction> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateDirection(format!(
            "non-finite raw direction from attack `{attack_id}` on source `{source_id}`"
        )));
    }
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::DegenerateDirection(format!(
            "zero raw direction from attack `{attack_id}` on source `{source_id}`"
        )));
    }
    let scale = (raw.len() as f64).sqrt() / norm;
    Ok(Direction {
        u: raw.iter().map(|v| v * scale).collect(),
        attack_id: attack_id.to_string(),
        source_id: source_id.to_string(),
        sample_id,
    })
}

/// Anything that answers top-1 decision queries.
pub trait DecisionOracle: Sync {
    fn decide(&self, x: &[f64]) -> Result<usize>;
}

impl DecisionOracle for Model {
    fn decide(&self, x: &[f64]) -> Result<usize> {
        Model::decide(self, x)
    }
}

/// Wrapper counting every decision query made through it.
pub struct CountingOracle<'a, O: DecisionOracle + ?Sized> {
    inner: &'a O,
    count: AtomicU64,
}

impl<'a, O: DecisionOracle + ?Sized> CountingOracle<'a, O> {
    pub fn new(inner: &'a O) -> Self {
        Self { inner, count: AtomicU64::new(0) }
    }

    pub fn count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

impl<'a, O: DecisionOracle + ?Sized> DecisionOracle for CountingOracle<'a, O> {
    fn decide(&self, x: &[f64]) -> Result<usize> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.decide(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineSearchStatus {
    Found,
    NotFoundWithinCap,
}

/// Outcome of a minimal-distortion search along one direction.
#[derive(Debug, Clone)]
pub struct LineSearchResult {
    /// Pre-clipping ray parameter; equals the per-pixel distortion of the
    /// (unclipped) adversarial point since directions have norm sqrt(N).
    pub d: f64,
    pub adversarial_label: Option<usize>,
    pub queries: usize,
    pub status: LineSearchStatus,
    /// Whether the box clip was active at the returned point.
    pub clipped: bool,
}

impl LineSearchResult {
    pub fn found(&self) -> bool {
        self.status == LineSearchStatus::Found
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LineSearchParams {
    /// First probe of the exponential bracketing phase.
    pub initial_step: f64,
    /// Final bisection bracket width.
    pub tolerance: f64,
    /// Largest ray parameter considered; beyond it the search reports
    /// not-found-within-cap.
    pub cap: f64,
}

impl Default for LineSearchParams {
    fn default() -> Self {
        Self { initial_step: 1e-3, tolerance: 1e-4, cap: 50.0 }
    }
}

impl LineSearchParams {
    pub fn validate(&self) -> Result<()> {
        if self.initial_step <= 0.0 || self.tolerance <= 0.0 || self.cap <= 0.0 {
            return Err(Error::Config("line-search parameters must be positive".into()));
        }
        Ok(())
    }
}

/// The queried point: x + delta * u clipped to the unit box.
pub fn ray_point(x: &[f64], u: &[f64], delta: f64) -> Vec<f64> {
    x.iter().zip(u).map(|(xi, ui)| (xi + delta * ui).clamp(0.0, 1.0)).collect()
}

fn ray_is_clipped(x: &[f64], u: &[f64], delta: f64) -> bool {
    x.iter().zip(u).any(|(xi, ui)| {
        let v = xi + delta * ui;
        !(0.0..=1.0).contains(&v)
    })
}

/// Minimal distortion along `dir` that flips the oracle's decision away from
/// the sample's label: exponential bracketing from `initial_step`, then
/// bisection to `tolerance`. Points are clipped to the box before querying;
/// the reported `d` is the pre-clipping ray parameter.
///
/// `max_probes` limits search queries for budgeted callers; a truncated
/// search returns the best bracket found so far. The probe count excludes
/// the one precondition query on the unperturbed input.
pub fn min_distortion_along(
    oracle: &dyn DecisionOracle,
    sample: &Sample,
    dir: &Direction,
    params: &LineSearchParams,
    max_probes: Option<usize>,
) -> Result<LineSearchResult> {
    params.validate()?;
    if dir.u.len() != sample.x.len() {
        return Err(Error::Input("direction and sample dimensions differ".into()));
    }
    if oracle.decide(&sample.x)? != sample.y {
        return Err(Error::Precondition(format!(
            "sample {} is not correctly classified by the target",
            sample.id
        )));
    }

    let limit = max_probes.unwrap_or(usize::MAX);
    let mut queries = 0usize;
    let probe = |delta: f64, queries: &mut usize| -> Result<Option<usize>> {
        if *queries >= limit {
            return Ok(None);
        }
        *queries += 1;
        let label = oracle.decide(&ray_point(&sample.x, &dir.u, delta))?;
        Ok(Some(label))
    };

    let not_found = |queries: usize| LineSearchResult {
        d: params.cap,
        adversarial_label: None,
        queries,
        status: LineSearchStatus::NotFoundWithinCap,
        clipped: ray_is_clipped(&sample.x, &dir.u, params.cap),
    };

    // Exponential bracketing.
    let mut lo = 0.0;
    let mut delta = params.initial_step.min(params.cap);
    let bracket = loop {
        match probe(delta, &mut queries)? {
            None => return Ok(not_found(queries)),
            Some(label) if label != sample.y => break (delta, label),
            Some(_) => {
                if delta >= params.cap {
                    return Ok(not_found(queries));
                }
                lo = delta;
                delta = (delta * 2.0).min(params.cap);
            }
        }
    };

    // Bisection down to the tolerance.
    let (mut hi, mut hi_label) = bracket;
    while hi - lo > params.tolerance {
        let mid = 0.5 * (lo + hi);
        match probe(mid, &mut queries)? {
            None => break,
            Some(label) if label != sample.y => {
                hi = mid;
                hi_label = label;
            }
            Some(_) => lo = mid,
        }
    }

    Ok(LineSearchResult {
        d: hi,
        adversarial_label: Some(hi_label),
        queries,
        status: LineSearchStatus::Found,
        clipped: ray_is_clipped(&sample.x, &dir.u, hi),
    })
}
