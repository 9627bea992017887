//! Non-dominated filtering and hypervolume (all objectives maximized).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub coords: Vec<f64>,
}

impl ReferencePoint {
    pub fn new(coords: Vec<f64>) -> Self {
        Self { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontEntry {
    pub params: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Index of the observation this entry came from.
    pub source: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    pub entries: Vec<FrontEntry>,
}

impl ParetoFront {
    /// Builds the front of `rewards`, keeping the matching `params` rows.
    pub fn from_observations(params: &[Vec<f64>], rewards: &[Vec<f64>]) -> Result<Self> {
        if params.len() != rewards.len() {
            return Err(Error::InvalidInput("params and rewards differ in length".into()));
        }
        let idx = non_dominated(rewards)?;
        Ok(Self {
            entries: idx
                .into_iter()
                .map(|i| FrontEntry {
                    params: params[i].clone(),
                    rewards: rewards[i].clone(),
                    source: i,
                })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn rewards(&self) -> Vec<Vec<f64>> {
        self.entries.iter().map(|e| e.rewards.clone()).collect()
    }

    pub fn sources(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.source).collect()
    }
}

fn check_points(points: &[Vec<f64>], dim: Option<usize>) -> Result<usize> {
    let k = match (dim, points.first()) {
        (Some(k), _) => k,
        (None, Some(p)) => p.len(),
        (None, None) => return Ok(0),
    };
    if k == 0 {
        return Err(Error::InvalidInput("objective vectors must have K >= 1".into()));
    }
    for p in points {
        if p.len() != k {
            return Err(Error::InvalidInput(format!("expected {k} objectives, got {}", p.len())));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite objective value".into()));
        }
    }
    Ok(k)
}

/// `a` weakly dominates `b` and differs from it somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return false;
        }
        if x > y {
            strict = true;
        }
    }
    strict
}

/// Indices of the non-dominated points, in input order. Duplicates are all
/// kept.
pub fn non_dominated(points: &[Vec<f64>]) -> Result<Vec<usize>> {
    check_points(points, None)?;
    Ok((0..points.len())
        .filter(|&i| !points.iter().any(|q| dominates(q, &points[i])))
        .collect())
}

/// Points strictly above `reference` on every axis, the only ones that
/// enclose volume.
fn above(points: &[Vec<f64>], reference: &[f64]) -> Vec<Vec<f64>> {
    points
        .iter()
        .filter(|p| p.iter().zip(reference).all(|(a, r)| a > r))
        .cloned()
        .collect()
}

fn hv2(points: &mut [Vec<f64>], r: &[f64]) -> f64 {
    points.sort_by(|a, b| b[0].total_cmp(&a[0]));
    let mut y_max = r[1];
    let mut area = 0.0;
    for p in points.iter() {
        if p[1] > y_max {
            area += (p[0] - r[0]) * (p[1] - y_max);
            y_max = p[1];
        }
    }
    area
}

/// Slices along the last axis and recurses. Points must already lie above
/// the reference.
fn hv_slice(points: &mut [Vec<f64>], r: &[f64]) -> f64 {
    let k = r.len();
    match k {
        1 => points.iter().fold(0.0f64, |m, p| m.max(p[0] - r[0])),
        2 => hv2(points, r),
        _ => {
            let last = k - 1;
            points.sort_by(|a, b| b[last].total_cmp(&a[last]));
            let mut total = 0.0;
            let mut i = 0;
            while i < points.len() {
                let level = points[i][last];
                while i < points.len() && points[i][last] == level {
                    i += 1;
                }
                let next = if i < points.len() { points[i][last] } else { r[last] };
                let mut slab: Vec<Vec<f64>> = points[..i].iter().map(|p| p[..last].to_vec()).collect();
                total += hv_slice(&mut slab, &r[..last]) * (level - next);
            }
            total
        }
    }
}

/// Exact hypervolume for any K by recursive slicing. Exponential in K; meant
/// for small fronts.
pub(crate) fn hypervolume_any(points: &[Vec<f64>], reference: &[f64]) -> f64 {
    let mut pts = above(points, reference);
    if pts.is_empty() {
        return 0.0;
    }
    if reference.len() > 2 {
        let keep = non_dominated(&pts).unwrap_or_default();
        pts = keep.into_iter().map(|i| pts[i].clone()).collect();
    }
    hv_slice(&mut pts, reference)
}

/// Exact hypervolume dominated by `points` above `reference`, for K <= 3.
pub fn hypervolume(points: &[Vec<f64>], reference: &ReferencePoint) -> Result<f64> {
    let k = reference.dim();
    if !(1..=3).contains(&k) {
        return Err(Error::UnsupportedDimension(k));
    }
    check_points(points, Some(k))?;
    if reference.coords.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite reference point".into()));
    }
    Ok(hypervolume_any(points, &reference.coords))
}

/// Monte Carlo hypervolume estimate and its standard error, sampling the box
/// from the reference to the componentwise maximum.
pub fn hypervolume_mc(points: &[Vec<f64>], reference: &ReferencePoint, n_samples: usize, seed: u64) -> Result<(f64, f64)> {
    let r = &reference.coords;
    check_points(points, Some(r.len()))?;
    let pts = above(points, r);
    if pts.is_empty() || n_samples == 0 {
        return Ok((0.0, 0.0));
    }
    let upper: Vec<f64> = (0..r.len())
        .map(|d| pts.iter().fold(f64::NEG_INFINITY, |m, p| m.max(p[d])))
        .collect();
    let volume: f64 = upper.iter().zip(r).map(|(u, l)| u - l).product();
    if volume <= 0.0 {
        return Ok((0.0, 0.0));
    }
    let mut rng = rng_from(seed);
    let mut u = vec![0.0; r.len()];
    let mut hits = 0usize;
    for _ in 0..n_samples {
        for (d, ud) in u.iter_mut().enumerate() {
            *ud = r[d] + rng.random::<f64>() * (upper[d] - r[d]);
        }
        if pts.iter().any(|p| p.iter().zip(&u).all(|(a, b)| a >= b)) {
            hits += 1;
        }
    }
    let frac = hits as f64 / n_samples as f64;
    Ok((volume * frac, volume * (frac * (1.0 - frac) / n_samples as f64).sqrt()))
}

/// Volume lost by removing point `i`.
pub fn hypervolume_contribution(points: &[Vec<f64>], reference: &ReferencePoint, i: usize) -> Result<f64> {
    if i >= points.len() {
        return Err(Error::InvalidInput(format!("index {i} out of range for {} points", points.len())));
    }
    let all = hypervolume(points, reference)?;
    let rest: Vec<Vec<f64>> = points
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, p)| p.clone())
        .collect();
    Ok((all - hypervolume(&rest, reference)?).max(0.0))
}
