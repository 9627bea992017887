//! qNEHI acquisition over grid candidates, reference points and steering.

use nalgebra::DVector;
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{fit, GpFitConfig, GpModel};
use crate::params::ParameterGrid;
use crate::pareto::{hypervolume_any, non_dominated, ReferencePoint};
use crate::rng::{derive_seed, derived_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionConfig {
    pub mc_samples: usize,
    pub q: usize,
    /// Distance below each reward's observed maximum for the reference point.
    pub ref_offset: Vec<f64>,
    pub candidate_subsample: usize,
    pub seed: u64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self::for_objectives(3, 2.0)
    }
}

impl AcquisitionConfig {
    pub fn for_objectives(k: usize, offset: f64) -> Self {
        Self {
            mc_samples: 128,
            q: 1,
            ref_offset: vec![offset; k],
            candidate_subsample: 2048,
            seed: 0,
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.mc_samples < 16 {
            return Err(Error::InvalidConfig("mc_samples must be at least 16".into()));
        }
        if self.q != 1 {
            return Err(Error::InvalidConfig("only q = 1 is supported".into()));
        }
        if self.ref_offset.len() != k {
            return Err(Error::InvalidConfig(format!(
                "ref_offset has {} entries for {k} rewards",
                self.ref_offset.len()
            )));
        }
        if self.ref_offset.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidConfig("ref_offset entries must be positive".into()));
        }
        if self.candidate_subsample == 0 {
            return Err(Error::InvalidConfig("candidate_subsample must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringState {
    pub weights: Vec<f64>,
    #[serde(default)]
    pub ref_override: Option<ReferencePoint>,
}

impl SteeringState {
    pub fn neutral(k: usize) -> Self {
        Self {
            weights: vec![1.0; k],
            ref_override: None,
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.weights.len() != k {
            return Err(Error::InvalidInput(format!("{} weights for {k} rewards", self.weights.len())));
        }
        if self.weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidInput("weights must be positive".into()));
        }
        if let Some(r) = &self.ref_override {
            if r.dim() != k || r.coords.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("reference override must have K finite coordinates".into()));
            }
        }
        Ok(())
    }

    pub fn is_neutral(&self) -> bool {
        self.ref_override.is_none() && self.weights.iter().all(|w| *w == 1.0)
    }
}

/// Componentwise product of each reward vector with `weights`.
pub fn apply_weights(rewards: &[Vec<f64>], weights: &[f64]) -> Result<Vec<Vec<f64>>> {
    if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(Error::InvalidInput("weights must be positive".into()));
    }
    rewards
        .iter()
        .map(|r| {
            if r.len() != weights.len() {
                return Err(Error::InvalidInput(format!("{} weights for {} rewards", weights.len(), r.len())));
            }
            Ok(r.iter().zip(weights).map(|(a, w)| a * w).collect())
        })
        .collect()
}

/// Per-reward observed maximum minus the offset, unless steering overrides it.
pub fn reference_point(scaled: &[Vec<f64>], cfg: &AcquisitionConfig, steering: &SteeringState) -> Result<ReferencePoint> {
    if let Some(r) = &steering.ref_override {
        return Ok(r.clone());
    }
    let first = scaled
        .first()
        .ok_or_else(|| Error::InvalidInput("reference point needs at least one observation".into()))?;
    let k = first.len();
    if cfg.ref_offset.len() != k {
        return Err(Error::InvalidConfig(format!("ref_offset has {} entries for {k} rewards", cfg.ref_offset.len())));
    }
    let coords = (0..k)
        .map(|d| scaled.iter().fold(f64::NEG_INFINITY, |m, r| m.max(r[d])) - cfg.ref_offset[d])
        .collect();
    Ok(ReferencePoint::new(coords))
}

/// A grid point offered to the acquisition function.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub index: usize,
    /// Unit-cube coordinates.
    pub x: Vec<f64>,
}

/// Hypervolume gained by adding `c` to `front`. `front` holds mutually
/// non-dominated points strictly above `r`.
fn improvement(c: &[f64], front: &[Vec<f64>], r: &[f64]) -> f64 {
    if c.iter().zip(r).any(|(a, b)| a <= b) {
        return 0.0;
    }
    if front.iter().any(|p| p.iter().zip(c).all(|(a, b)| a >= b)) {
        return 0.0;
    }
    let own: f64 = c.iter().zip(r).map(|(a, b)| a - b).product();
    let clipped: Vec<Vec<f64>> = front
        .iter()
        .map(|p| p.iter().zip(c).map(|(a, b)| a.min(*b)).collect())
        .collect();
    own - hypervolume_any(&clipped, r)
}

/// Monte Carlo qNEHI score per candidate, with its standard error.
///
/// Baseline normals are drawn once per call and shared by every candidate;
/// each candidate's own normals come from a seed derived from its grid
/// index, so scores do not depend on evaluation order.
pub fn qnehi_with_error(
    models: &[GpModel],
    observed: &[Vec<f64>],
    candidates: &[Candidate],
    reference: &ReferencePoint,
    cfg: &AcquisitionConfig,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let k = models.len();
    if k == 0 {
        return Err(Error::InvalidState {
            op: "qnehi",
            status: "no fitted models".into(),
        });
    }
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no candidates".into()));
    }
    if reference.dim() != k {
        return Err(Error::InvalidInput("reference dimension does not match model count".into()));
    }
    let s_count = cfg.mc_samples;
    let r = &reference.coords;

    let posts = models
        .iter()
        .map(|m| m.baseline_posterior(observed))
        .collect::<Result<Vec<_>>>()?;
    let n = observed.len();
    // z[k][s]
    let z: Vec<Vec<DVector<f64>>> = (0..k)
        .map(|d| {
            let mut rng = derived_rng(seed, "qnehi-baseline", d as u64);
            (0..s_count)
                .map(|_| DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal))))
                .collect()
        })
        .collect();
    let fronts: Vec<Vec<Vec<f64>>> = (0..s_count)
        .map(|s| {
            let draws: Vec<Vec<f64>> = (0..k).map(|d| posts[d].draw(&z[d][s])).collect();
            let pts: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..k).map(|d| draws[d][i]).collect::<Vec<f64>>())
                .filter(|p: &Vec<f64>| p.iter().zip(r).all(|(a, b)| a > b))
                .collect();
            let keep = non_dominated(&pts).unwrap_or_default();
            let mut front: Vec<Vec<f64>> = keep.into_iter().map(|i| pts[i].clone()).collect();
            front.dedup();
            front
        })
        .collect();

    let scores = candidates
        .par_iter()
        .map(|c| {
            let conds: Vec<_> = posts.iter().map(|p| p.candidate(&c.x)).collect();
            let mut rng = derived_rng(seed, "qnehi-candidate", c.index as u64);
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            let mut fc = vec![0.0; k];
            for s in 0..s_count {
                for d in 0..k {
                    let w: f64 = rng.sample(StandardNormal);
                    fc[d] = conds[d].draw(&z[d][s], w);
                }
                let gain = improvement(&fc, &fronts[s], r);
                sum += gain;
                sum_sq += gain * gain;
            }
            let mean = sum / s_count as f64;
            let var = (sum_sq / s_count as f64 - mean * mean).max(0.0);
            (mean, (var / s_count as f64).sqrt())
        })
        .collect();
    Ok(scores)
}

pub fn qnehi(
    models: &[GpModel],
    observed: &[Vec<f64>],
    candidates: &[Candidate],
    reference: &ReferencePoint,
    cfg: &AcquisitionConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    Ok(qnehi_with_error(models, observed, candidates, reference, cfg, seed)?
        .into_iter()
        .map(|(m, _)| m)
        .collect())
}

/// Grid and observation data an acquisition step works from.
#[derive(Debug, Clone, Copy)]
pub struct SearchContext<'a> {
    pub grid: &'a ParameterGrid,
    /// Sorted flat indices of admissible grid points.
    pub safe: &'a [usize],
    /// Unit-cube coordinates of each observation.
    pub observed_x: &'a [Vec<f64>],
    /// Grid index of each observation.
    pub observed_index: &'a [usize],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub index: usize,
    pub point: Vec<f64>,
    pub score: f64,
    pub reference: ReferencePoint,
    pub n_candidates: usize,
}

/// The candidate set for one proposal: a seeded subsample of the safe grid
/// plus the best observed point for each reward, sorted by grid index.
pub fn candidate_indices(ctx: &SearchContext<'_>, scaled: &[Vec<f64>], cfg: &AcquisitionConfig, seed: u64) -> Result<Vec<usize>> {
    if ctx.safe.is_empty() {
        return Err(Error::Infeasible("no admissible grid points".into()));
    }
    let mut out: Vec<usize> = if ctx.safe.len() <= cfg.candidate_subsample {
        ctx.safe.to_vec()
    } else {
        let mut rng = derived_rng(seed, "candidates", 0);
        index::sample(&mut rng, ctx.safe.len(), cfg.candidate_subsample)
            .into_iter()
            .map(|i| ctx.safe[i])
            .collect()
    };
    if let Some(first) = scaled.first() {
        for d in 0..first.len() {
            let best = (0..scaled.len()).fold(0, |b, i| if scaled[i][d] > scaled[b][d] { i } else { b });
            let idx = ctx.observed_index[best];
            if ctx.safe.binary_search(&idx).is_ok() {
                out.push(idx);
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Argmax-qNEHI grid point; ties go to the lowest grid index.
pub fn propose_next(
    ctx: &SearchContext<'_>,
    models: &[GpModel],
    scaled: &[Vec<f64>],
    cfg: &AcquisitionConfig,
    steering: &SteeringState,
    seed: u64,
) -> Result<Proposal> {
    cfg.validate(models.len())?;
    let reference = reference_point(scaled, cfg, steering)?;
    let idx = candidate_indices(ctx, scaled, cfg, seed)?;
    let candidates: Vec<Candidate> = idx
        .iter()
        .map(|&i| Candidate {
            index: i,
            x: ctx.grid.normalize_unchecked(&ctx.grid.point(i)),
        })
        .collect();
    let scores = qnehi(models, ctx.observed_x, &candidates, &reference, cfg, seed)?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(Proposal {
        index: idx[best],
        point: ctx.grid.point(idx[best]),
        score: scores[best],
        reference,
        n_candidates: idx.len(),
    })
}

/// One independent GP per reward column, each with its own derived seed.
pub fn fit_models(x: &[Vec<f64>], scaled: &[Vec<f64>], cfg: &GpFitConfig) -> Result<Vec<GpModel>> {
    let k = scaled.first().map_or(0, |r| r.len());
    (0..k)
        .into_par_iter()
        .map(|d| {
            let y: Vec<f64> = scaled.iter().map(|r| r[d]).collect();
            let c = GpFitConfig {
                seed: derive_seed(cfg.seed, "gp", d as u64),
                ..cfg.clone()
            };
            fit(x, &y, &c)
        })
        .collect()
}

/// Refits on weight-scaled rewards and proposes under the steering state.
pub fn propose_optimum(
    ctx: &SearchContext<'_>,
    rewards: &[Vec<f64>],
    fit_cfg: &GpFitConfig,
    cfg: &AcquisitionConfig,
    steering: &SteeringState,
    seed: u64,
) -> Result<Proposal> {
    let k = rewards.first().map_or(0, |r| r.len());
    steering.validate(k)?;
    let scaled = apply_weights(rewards, &steering.weights)?;
    let models = fit_models(ctx.observed_x, &scaled, fit_cfg)?;
    propose_next(ctx, &models, &scaled, cfg, steering, seed)
}
