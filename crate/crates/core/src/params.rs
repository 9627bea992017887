//! Bounded control-parameter space and its uniform grid.
//!
//! Points are plain coordinate slices in physical units, one entry per axis in
//! grid order. The microscope uses three axes (drive amplitude, setpoint
//! fraction, integral gain); the synthetic validation problems use two.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub name: String,
    pub min: f64,
    pub max: f64,
    /// Number of uniformly spaced values including both endpoints. An axis
    /// with resolution 1 is pinned at `min`.
    pub resolution: usize,
}

impl GridAxis {
    pub fn new(name: &str, min: f64, max: f64, resolution: usize) -> Self {
        Self {
            name: name.to_string(),
            min,
            max,
            resolution,
        }
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    pub fn value(&self, index: usize) -> f64 {
        if self.resolution == 1 {
            return self.min;
        }
        if index + 1 == self.resolution {
            return self.max;
        }
        self.min + self.span() * index as f64 / (self.resolution - 1) as f64
    }

    /// Grid spacing; zero for a pinned axis.
    pub fn spacing(&self) -> f64 {
        if self.resolution < 2 {
            0.0
        } else {
            self.span() / (self.resolution - 1) as f64
        }
    }

    /// Nearest grid index, ties resolved toward the lower index.
    pub fn nearest(&self, value: f64) -> usize {
        if self.resolution == 1 {
            return 0;
        }
        let t = (value - self.min) / self.span() * (self.resolution - 1) as f64;
        let lower = t.floor().max(0.0) as usize;
        let idx = if t - lower as f64 > 0.5 { lower + 1 } else { lower };
        idx.min(self.resolution - 1)
    }
}

/// One point of the microscope control space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    /// Free-oscillation amplitude, nm.
    pub drive_amplitude: f64,
    /// Amplitude setpoint as a fraction of the free amplitude.
    pub setpoint_fraction: f64,
    pub i_gain: f64,
}

impl ControlParams {
    pub fn new(drive_amplitude: f64, setpoint_fraction: f64, i_gain: f64) -> Self {
        Self {
            drive_amplitude,
            setpoint_fraction,
            i_gain,
        }
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.drive_amplitude, self.setpoint_fraction, self.i_gain]
    }

    pub fn from_slice(p: &[f64]) -> Result<Self> {
        match p {
            [d, s, g] => Ok(Self::new(*d, *s, *g)),
            _ => Err(Error::InvalidInput(format!(
                "control point needs 3 coordinates, got {}",
                p.len()
            ))),
        }
    }

    pub fn setpoint_pct(&self) -> f64 {
        self.setpoint_fraction * 100.0
    }
}

impl std::fmt::Display for ControlParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "drive {:.2} nm, setpoint {:.2} %, I gain {:.2}",
            self.drive_amplitude,
            self.setpoint_pct(),
            self.i_gain
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterGrid {
    pub axes: Vec<GridAxis>,
}

impl Default for ParameterGrid {
    fn default() -> Self {
        Self::spm_default()
    }
}

impl ParameterGrid {
    pub const DRIVE: usize = 0;
    pub const SETPOINT: usize = 1;
    pub const GAIN: usize = 2;

    pub fn new(axes: Vec<GridAxis>) -> Result<Self> {
        let grid = Self { axes };
        grid.validate()?;
        Ok(grid)
    }

    /// 100 x 100 x 50 grid over drive 0-100 nm, setpoint 0.1-90 %, gain 30-200.
    pub fn spm_default() -> Self {
        Self::spm_with_resolution([100, 100, 50])
    }

    pub fn spm_with_resolution(res: [usize; 3]) -> Self {
        Self {
            axes: vec![
                GridAxis::new("drive_amplitude", 0.0, 100.0, res[0]),
                GridAxis::new("setpoint_fraction", 0.001, 0.90, res[1]),
                GridAxis::new("i_gain", 30.0, 200.0, res[2]),
            ],
        }
    }

    /// Square grid over [0, 1]^2 for the synthetic problems.
    pub fn unit_square(resolution: usize) -> Self {
        Self {
            axes: vec![
                GridAxis::new("x1", 0.0, 1.0, resolution),
                GridAxis::new("x2", 0.0, 1.0, resolution),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() {
            return Err(Error::InvalidConfig("grid has no axes".into()));
        }
        for a in &self.axes {
            if !(a.min.is_finite() && a.max.is_finite()) || a.min >= a.max {
                return Err(Error::InvalidAxis {
                    axis: a.name.clone(),
                    reason: format!("bounds [{}, {}] must satisfy min < max", a.min, a.max),
                });
            }
            if a.resolution == 0 {
                return Err(Error::InvalidAxis {
                    axis: a.name.clone(),
                    reason: "resolution must be positive".into(),
                });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.resolution).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check_bounds(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "point has {} coordinates, grid has {} axes",
                p.len(),
                self.dim()
            )));
        }
        for (a, &v) in self.axes.iter().zip(p) {
            if !(v >= a.min && v <= a.max) {
                return Err(Error::OutOfBounds {
                    axis: a.name.clone(),
                    value: v,
                    min: a.min,
                    max: a.max,
                });
            }
        }
        Ok(())
    }

    /// Maps an in-bounds point to the unit cube.
    pub fn normalize(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.check_bounds(p)?;
        Ok(self.normalize_unchecked(p))
    }

    pub(crate) fn normalize_unchecked(&self, p: &[f64]) -> Vec<f64> {
        self.axes
            .iter()
            .zip(p)
            .map(|(a, &v)| (v - a.min) / a.span())
            .collect()
    }

    pub fn denormalize(&self, u: &[f64]) -> Vec<f64> {
        self.axes
            .iter()
            .zip(u)
            .map(|(a, &t)| a.min + t * a.span())
            .collect()
    }

    /// Per-axis indices of a flat (row-major, last axis fastest) index.
    pub fn indices(&self, flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        let mut rem = flat;
        for (k, a) in self.axes.iter().enumerate().rev() {
            idx[k] = rem % a.resolution;
            rem /= a.resolution;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        self.axes
            .iter()
            .zip(idx)
            .fold(0, |acc, (a, &i)| acc * a.resolution + i)
    }

    pub fn point_at(&self, idx: &[usize]) -> Vec<f64> {
        self.axes.iter().zip(idx).map(|(a, &i)| a.value(i)).collect()
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.point_at(&self.indices(flat))
    }

    /// All grid points in flat-index order.
    pub fn enumerate(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    pub fn nearest_indices(&self, p: &[f64]) -> Result<Vec<usize>> {
        self.check_bounds(p)?;
        Ok(self.axes.iter().zip(p).map(|(a, &v)| a.nearest(v)).collect())
    }

    pub fn nearest_flat(&self, p: &[f64]) -> Result<usize> {
        Ok(self.flat_index(&self.nearest_indices(p)?))
    }

    pub fn nearest_point(&self, p: &[f64]) -> Result<Vec<f64>> {
        Ok(self.point_at(&self.nearest_indices(p)?))
    }
}
