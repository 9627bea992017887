//! Safety boundary from force-distance curves and safe seed sampling.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ControlParams, ParameterGrid};
use crate::rng::derived_rng;
use crate::sim::{force_distance_curve, CantileverModel};

pub const DEFAULT_SAFETY_MARGIN: f64 = 0.02;
pub const DEFAULT_DRIVE_SAMPLES: usize = 21;

/// Threshold setpoint fraction as a piecewise-linear function of drive.
/// Setpoints at or above `threshold_at(drive)` keep the tip attractive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyBoundary {
    pub drive_samples: Vec<f64>,
    pub threshold_setpoints: Vec<f64>,
    pub safety_margin: f64,
}

impl SafetyBoundary {
    pub fn new(drive_samples: Vec<f64>, threshold_setpoints: Vec<f64>, safety_margin: f64) -> Result<Self> {
        let b = Self {
            drive_samples,
            threshold_setpoints,
            safety_margin,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.drive_samples.len() < 2 || self.drive_samples.len() != self.threshold_setpoints.len() {
            return Err(Error::InvalidInput(
                "boundary needs at least 2 drive samples with one threshold each".into(),
            ));
        }
        if self.drive_samples.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput("drive samples must be strictly increasing".into()));
        }
        if self.threshold_setpoints.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::InvalidInput("thresholds must lie in [0, 1]".into()));
        }
        if !(self.safety_margin >= 0.0) {
            return Err(Error::InvalidInput("safety margin must be non-negative".into()));
        }
        Ok(())
    }

    /// Interpolated threshold plus margin, capped at 1.
    pub fn threshold_at(&self, drive: f64) -> f64 {
        let xs = &self.drive_samples;
        let ys = &self.threshold_setpoints;
        let n = xs.len();
        let base = if drive <= xs[0] {
            ys[0]
        } else if drive >= xs[n - 1] {
            ys[n - 1]
        } else {
            let i = xs.partition_point(|&x| x <= drive);
            let t = (drive - xs[i - 1]) / (xs[i] - xs[i - 1]);
            ys[i - 1] + t * (ys[i] - ys[i - 1])
        };
        (base + self.safety_margin).min(1.0)
    }

    pub fn is_safe(&self, p: &ControlParams) -> bool {
        p.setpoint_fraction >= self.threshold_at(p.drive_amplitude)
    }

    /// Sorted flat indices of every safe grid point.
    pub fn safe_indices(&self, grid: &ParameterGrid) -> Vec<usize> {
        let drive = &grid.axes[ParameterGrid::DRIVE];
        let sp = &grid.axes[ParameterGrid::SETPOINT];
        let (n_sp, n_gain) = (sp.resolution, grid.axes[ParameterGrid::GAIN].resolution);
        let mut out = Vec::new();
        for i in 0..drive.resolution {
            let t = self.threshold_at(drive.value(i));
            for j in 0..n_sp {
                if sp.value(j) >= t {
                    let start = (i * n_sp + j) * n_gain;
                    out.extend(start..start + n_gain);
                }
            }
        }
        out
    }
}

/// Evenly spaced drive samples over the grid's drive axis.
pub fn default_drive_samples(grid: &ParameterGrid, n: usize) -> Vec<f64> {
    let axis = &grid.axes[ParameterGrid::DRIVE];
    (0..n)
        .map(|i| axis.min + axis.span() * i as f64 / (n - 1).max(1) as f64)
        .collect()
}

/// Runs an approach curve at each drive and records where the phase first
/// falls below its free value. Drives that never turn repulsive get 1.0.
pub fn measure_thresholds(model: &CantileverModel, drives: &[f64], safety_margin: f64) -> Result<SafetyBoundary> {
    model.validate()?;
    if drives.len() < 2 {
        return Err(Error::InvalidInput("at least 2 drive samples are required".into()));
    }
    if drives.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(Error::InvalidInput("drive samples must be finite and non-negative".into()));
    }
    let mut thresholds = Vec::with_capacity(drives.len());
    for &d in drives {
        let t = if d > 0.0 {
            let curve = force_distance_curve(d, 2.0 * d + 10.0, 400, model)?;
            curve.threshold_setpoint(model).unwrap_or(1.0)
        } else {
            1.0
        };
        thresholds.push(t.clamp(0.0, 1.0));
    }
    SafetyBoundary::new(drives.to_vec(), thresholds, safety_margin)
}

/// `n` distinct entries of `pool`, uniformly without replacement.
pub fn sample_indices(pool: &[usize], n: usize, seed: u64) -> Result<Vec<usize>> {
    if pool.len() < n {
        return Err(Error::Infeasible(format!(
            "{n} seeds requested but only {} safe grid points exist",
            pool.len()
        )));
    }
    let mut rng = derived_rng(seed, "seeds", 0);
    Ok(index::sample(&mut rng, pool.len(), n).into_iter().map(|i| pool[i]).collect())
}

/// `n` distinct safe grid points, drawn uniformly.
pub fn sample_safe_seeds(n: usize, grid: &ParameterGrid, boundary: &SafetyBoundary, seed: u64) -> Result<Vec<ControlParams>> {
    let safe = boundary.safe_indices(grid);
    sample_indices(&safe, n, seed)?
        .into_iter()
        .map(|i| ControlParams::from_slice(&grid.point(i)))
        .collect()
}
