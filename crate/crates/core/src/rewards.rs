//! Scan-quality rewards computed from a batch of neighbouring scan lines,
//! plus the closed-form synthetic rewards used to validate the optimizer.
//!
//! All rewards are `-ln(max(arg, floor))` with natural logs; larger is better.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::ScanLinePair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardName {
    HeightDifference,
    Distance,
    Phase,
    Similarity,
}

impl RewardName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::HeightDifference => "height_difference",
            Self::Distance => "distance",
            Self::Phase => "phase",
            Self::Similarity => "similarity",
        }
    }

    /// Canonical reward order used in every output.
    pub fn canonical(include_similarity: bool) -> Vec<RewardName> {
        let mut names = vec![Self::HeightDifference, Self::Distance, Self::Phase];
        if include_similarity {
            names.push(Self::Similarity);
        }
        names
    }
}

impl std::fmt::Display for RewardName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RewardName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "height_difference" => Ok(Self::HeightDifference),
            "distance" => Ok(Self::Distance),
            "phase" => Ok(Self::Phase),
            "similarity" => Ok(Self::Similarity),
            other => Err(Error::InvalidInput(format!("unknown reward `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardVector {
    pub values: Vec<f64>,
    pub names: Vec<String>,
}

impl RewardVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Smallest value any log argument is allowed to take.
    pub log_floor: f64,
    /// Separate floor (nm) for the distance reward, whose argument is a
    /// length rather than a fraction. Falls back to `log_floor`.
    #[serde(default)]
    pub distance_log_floor: Option<f64>,
    pub free_phase: f64,
    pub n_lines_avg: usize,
    /// Added to heights after re-basing them to the batch minimum, nm.
    pub denominator_shift: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            log_floor: 1e-8,
            distance_log_floor: None,
            free_phase: 90.0,
            n_lines_avg: 5,
            denominator_shift: 1.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.log_floor > 0.0) || self.distance_log_floor.is_some_and(|f| !(f > 0.0)) {
            return Err(Error::InvalidConfig("log floors must be positive".into()));
        }
        if self.n_lines_avg < 1 {
            return Err(Error::InvalidConfig("n_lines_avg must be at least 1".into()));
        }
        Ok(())
    }
}

fn neg_log(arg: f64, floor: f64) -> f64 {
    -arg.max(floor).ln()
}

fn check_batch(batch: &[ScanLinePair]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty scan batch".into()));
    }
    for line in batch {
        line.check_shape()?;
        if line.is_empty() {
            return Err(Error::InvalidInput("scan line without pixels".into()));
        }
    }
    Ok(())
}

fn batch_min_height(batch: &[ScanLinePair]) -> f64 {
    batch
        .iter()
        .map(ScanLinePair::min_height)
        .fold(f64::INFINITY, f64::min)
}

/// Normalized trace/retrace height disagreement.
pub fn reward_height_difference(batch: &[ScanLinePair], cfg: &RewardConfig) -> Result<f64> {
    check_batch(batch)?;
    let base = batch_min_height(batch) - cfg.denominator_shift;
    let n_total: usize = batch.iter().map(|l| 2 * l.len()).sum();
    let mut sum = 0.0;
    for line in batch {
        for (t, r) in line.height_trace.iter().zip(&line.height_retrace) {
            let (t, r) = (t - base, r - base);
            sum += (t - r).abs() / (t + r);
        }
    }
    Ok(neg_log(sum / n_total as f64, cfg.log_floor))
}

/// Fraction of phase pixels below the free phase (repulsive contact).
pub fn reward_phase(batch: &[ScanLinePair], cfg: &RewardConfig) -> Result<f64> {
    check_batch(batch)?;
    let (mut below, mut total) = (0usize, 0usize);
    for line in batch {
        for &phi in line.phase_trace.iter().chain(&line.phase_retrace) {
            total += 1;
            if phi < cfg.free_phase {
                below += 1;
            }
        }
    }
    Ok(neg_log(below as f64 / total as f64, cfg.log_floor))
}

/// Height of the batch's lowest probe position above the session-wide lowest.
pub fn reward_distance(batch: &[ScanLinePair], global_min: f64, cfg: &RewardConfig) -> Result<f64> {
    check_batch(batch)?;
    let h_min = batch_min_height(batch);
    if global_min > h_min {
        return Err(Error::InvalidInput(format!(
            "global minimum {global_min} lies above the batch minimum {h_min}"
        )));
    }
    let floor = cfg.distance_log_floor.unwrap_or(cfg.log_floor);
    Ok(neg_log(h_min - global_min, floor))
}

/// Pearson correlation; 0 when either series is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Similarity reward from per-line correlations and the total pixel count.
pub fn similarity_from_correlations(correlations: &[f64], n_pixels: usize, cfg: &RewardConfig) -> f64 {
    let sum: f64 = correlations.iter().map(|p| 2.0 - p).sum();
    neg_log(sum / n_pixels as f64, cfg.log_floor)
}

/// Trace/retrace agreement measured by per-line Pearson correlation.
pub fn reward_similarity(batch: &[ScanLinePair], cfg: &RewardConfig) -> Result<f64> {
    check_batch(batch)?;
    if batch.iter().any(|l| l.len() < 2) {
        return Err(Error::InvalidInput("similarity needs at least 2 pixels per line".into()));
    }
    let correlations: Vec<f64> = batch
        .iter()
        .map(|l| pearson(&l.height_trace, &l.height_retrace))
        .collect();
    let n_total = batch.iter().map(|l| 2 * l.len()).sum();
    Ok(similarity_from_correlations(&correlations, n_total, cfg))
}

/// Assembles the reward vector for one batch in canonical order.
pub fn evaluate_rewards(
    batch: &[ScanLinePair],
    session_global_min: f64,
    cfg: &RewardConfig,
    include_similarity: bool,
) -> Result<RewardVector> {
    if batch.len() != cfg.n_lines_avg {
        return Err(Error::InvalidInput(format!(
            "batch has {} lines, expected {}",
            batch.len(),
            cfg.n_lines_avg
        )));
    }
    let names = RewardName::canonical(include_similarity);
    let values = names
        .iter()
        .map(|n| match n {
            RewardName::HeightDifference => reward_height_difference(batch, cfg),
            RewardName::Distance => reward_distance(batch, session_global_min, cfg),
            RewardName::Phase => reward_phase(batch, cfg),
            RewardName::Similarity => reward_similarity(batch, cfg),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RewardVector {
        values,
        names: names.iter().map(|n| n.as_str().to_string()).collect(),
    })
}

fn gauss(x1: f64, x2: f64, c1: f64, c2: f64) -> f64 {
    (-(x1 - c1).powi(2) - (x2 - c2).powi(2)).exp()
}

/// Two-Gaussian validation rewards on the unit square. Reward 1 peaks near
/// (0.35, 0.65), reward 2 near (0.35, 0.35), reward 3 is the negation of
/// reward 1.
pub fn synthetic_reward(k: u8, x1: f64, x2: f64) -> Result<f64> {
    if !((0.0..=1.0).contains(&x1) && (0.0..=1.0).contains(&x2)) {
        return Err(Error::OutOfBounds {
            axis: if (0.0..=1.0).contains(&x1) { "x2" } else { "x1" }.into(),
            value: if (0.0..=1.0).contains(&x1) { x2 } else { x1 },
            min: 0.0,
            max: 1.0,
        });
    }
    let r1 = || gauss(x1, x2, 0.35, 0.65) - gauss(x1, x2, 0.65, 0.35);
    match k {
        1 => Ok(r1()),
        2 => Ok(gauss(x1, x2, 0.35, 0.35) - gauss(x1, x2, 0.65, 0.65)),
        3 => Ok(-r1()),
        _ => Err(Error::InvalidInput(format!("synthetic reward {k} does not exist"))),
    }
}
