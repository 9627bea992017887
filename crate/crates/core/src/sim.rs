//! Virtual tapping-mode microscope.
//!
//! The cantilever is reduced to a piecewise-linear amplitude/phase response
//! of the tip-surface distance, and the height loop is integral-only. This is
//! enough to reproduce the three phase regimes (free, attractive, repulsive),
//! threshold setpoints from force-distance curves, parachuting at low gain and
//! ringing at high gain.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ControlParams;
use crate::rng::{rng_from, SimRng};

pub const DEFAULT_PIXELS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CantileverModel {
    /// Free-air phase, degrees.
    pub free_phase: f64,
    /// Phase rise at the edge of the attractive regime, degrees.
    pub attractive_phase_gain: f64,
    /// Maximum phase drop in the repulsive regime, degrees.
    pub repulsive_phase_gain: f64,
    /// Amplitude deficit (nm) at which the tip enters the repulsive regime.
    pub contact_depth: f64,
    pub height_noise: f64,
    pub phase_noise: f64,
    /// Height-loop scale: nm per unit normalized error per unit gain per pixel.
    pub gain_scale: f64,
}

impl Default for CantileverModel {
    fn default() -> Self {
        Self {
            free_phase: 90.0,
            attractive_phase_gain: 10.0,
            repulsive_phase_gain: 20.0,
            contact_depth: 5.0,
            height_noise: 0.3,
            phase_noise: 0.3,
            gain_scale: 0.015,
        }
    }
}

impl CantileverModel {
    pub fn noiseless() -> Self {
        Self {
            height_noise: 0.0,
            phase_noise: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.contact_depth > 0.0) {
            return Err(Error::InvalidConfig("contact_depth must be positive".into()));
        }
        if !(self.height_noise >= 0.0 && self.phase_noise >= 0.0) {
            return Err(Error::InvalidConfig("noise std must be non-negative".into()));
        }
        if !(self.gain_scale > 0.0) {
            return Err(Error::InvalidConfig("gain_scale must be positive".into()));
        }
        Ok(())
    }

    /// Setpoint fraction at which the steady-state amplitude deficit equals
    /// the contact depth; `None` when the drive never reaches the repulsive
    /// regime.
    pub fn analytic_threshold(&self, drive: f64) -> Option<f64> {
        (drive > self.contact_depth).then(|| (drive - self.contact_depth) / drive)
    }
}

/// Noise-free amplitude (nm) and phase (degrees) at tip-surface distance `d`.
pub fn amplitude_phase_response(d: f64, drive: f64, m: &CantileverModel) -> Result<(f64, f64)> {
    if !(drive >= 0.0) {
        return Err(Error::InvalidInput(format!("drive amplitude {drive} is negative")));
    }
    Ok(response(d, drive, m))
}

fn response(d: f64, drive: f64, m: &CantileverModel) -> (f64, f64) {
    let amplitude = d.clamp(0.0, drive);
    let deficit = drive - amplitude;
    let phase = if deficit <= 0.0 {
        m.free_phase
    } else if deficit <= m.contact_depth {
        m.free_phase + m.attractive_phase_gain * deficit / m.contact_depth
    } else {
        let depth = ((deficit - m.contact_depth) / m.contact_depth).min(1.0);
        m.free_phase - m.repulsive_phase_gain * depth
    };
    (amplitude, phase)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplePreset {
    Grating,
    Droplets,
    Flat,
}

impl std::str::FromStr for SamplePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grating" => Ok(Self::Grating),
            "droplets" => Ok(Self::Droplets),
            "flat" => Ok(Self::Flat),
            other => Err(Error::InvalidConfig(format!("unknown sample preset `{other}`"))),
        }
    }
}

impl SamplePreset {
    pub fn name(self) -> &'static str {
        match self {
            Self::Grating => "grating",
            Self::Droplets => "droplets",
            Self::Flat => "flat",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cap {
    x: f64,
    y: f64,
    height: f64,
    width: f64,
}

/// Surface topography over a rectangular extent (nm).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleProfile {
    pub preset: SamplePreset,
    /// (width, height) of the scan area, nm.
    pub extent: (f64, f64),
    caps: Vec<Cap>,
}

pub const GRATING_DEPTH: f64 = 100.0;
pub const GRATING_PITCH: f64 = 10_000.0;

impl SampleProfile {
    pub fn from_preset(preset: SamplePreset) -> Self {
        match preset {
            SamplePreset::Grating => Self {
                preset,
                extent: (20_000.0, 20_000.0),
                caps: Vec::new(),
            },
            SamplePreset::Flat => Self {
                preset,
                extent: (5_000.0, 5_000.0),
                caps: Vec::new(),
            },
            SamplePreset::Droplets => {
                let mut rng = rng_from(0xD20_97E7);
                let caps = (0..14)
                    .map(|_| Cap {
                        x: rng.random_range(0.0..5_000.0),
                        y: rng.random_range(0.0..5_000.0),
                        height: rng.random_range(5.0..50.0),
                        width: rng.random_range(120.0..400.0),
                    })
                    .collect();
                Self {
                    preset,
                    extent: (5_000.0, 5_000.0),
                    caps,
                }
            }
        }
    }

    /// Surface height at (x, y), nm.
    pub fn height(&self, x: f64, y: f64) -> f64 {
        match self.preset {
            SamplePreset::Flat => 0.0,
            SamplePreset::Grating => {
                let phase = x.rem_euclid(GRATING_PITCH);
                if (GRATING_PITCH / 4.0..3.0 * GRATING_PITCH / 4.0).contains(&phase) {
                    -GRATING_DEPTH
                } else {
                    0.0
                }
            }
            SamplePreset::Droplets => self
                .caps
                .iter()
                .map(|c| {
                    let r2 = (x - c.x).powi(2) + (y - c.y).powi(2);
                    c.height * (-0.5 * r2 / (c.width * c.width)).exp()
                })
                .sum(),
        }
    }

    /// Distance (nm) from `x` to the nearest topographic step, for presets
    /// that have steps.
    pub fn distance_to_edge(&self, x: f64) -> Option<f64> {
        match self.preset {
            SamplePreset::Grating => {
                // Steps sit at odd multiples of a quarter pitch.
                let q = GRATING_PITCH / 4.0;
                let m = (x - q).rem_euclid(2.0 * q);
                Some(m.min(2.0 * q - m))
            }
            _ => None,
        }
    }

    pub fn x_positions(&self, n_px: usize) -> Vec<f64> {
        let w = self.extent.0;
        (0..n_px)
            .map(|i| w * i as f64 / (n_px - 1) as f64)
            .collect()
    }
}

/// Trace and retrace of one scan line. Retrace arrays are stored in trace
/// orientation, so index `i` refers to the same x in every array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanLinePair {
    pub x_positions: Vec<f64>,
    pub height_trace: Vec<f64>,
    pub height_retrace: Vec<f64>,
    pub phase_trace: Vec<f64>,
    pub phase_retrace: Vec<f64>,
}

impl ScanLinePair {
    pub fn len(&self) -> usize {
        self.x_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_positions.is_empty()
    }

    pub fn min_height(&self) -> f64 {
        self.height_trace
            .iter()
            .chain(&self.height_retrace)
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn check_shape(&self) -> Result<()> {
        let n = self.x_positions.len();
        if [
            self.height_trace.len(),
            self.height_retrace.len(),
            self.phase_trace.len(),
            self.phase_retrace.len(),
        ]
        .iter()
        .any(|&l| l != n)
        {
            return Err(Error::InvalidInput("scan line arrays differ in length".into()));
        }
        Ok(())
    }
}

fn check_params(p: &ControlParams) -> Result<()> {
    if !(p.drive_amplitude >= 0.0 && p.drive_amplitude.is_finite()) {
        return Err(Error::OutOfBounds {
            axis: "drive_amplitude".into(),
            value: p.drive_amplitude,
            min: 0.0,
            max: f64::INFINITY,
        });
    }
    if !(p.setpoint_fraction > 0.0 && p.setpoint_fraction <= 1.0) {
        return Err(Error::OutOfBounds {
            axis: "setpoint_fraction".into(),
            value: p.setpoint_fraction,
            min: 0.0,
            max: 1.0,
        });
    }
    if !(p.i_gain > 0.0 && p.i_gain.is_finite()) {
        return Err(Error::OutOfBounds {
            axis: "i_gain".into(),
            value: p.i_gain,
            min: 0.0,
            max: f64::INFINITY,
        });
    }
    Ok(())
}

struct Loop<'a> {
    sample: &'a SampleProfile,
    model: &'a CantileverModel,
    drive: f64,
    target: f64,
    step_gain: f64,
    y: f64,
    z: f64,
}

impl Loop<'_> {
    /// Visits one pixel: returns (probe height, phase) and advances the
    /// integrator.
    fn pixel(&mut self, x: f64) -> (f64, f64) {
        let d = self.z - self.sample.height(x, self.y);
        let (amp, phase) = response(d, self.drive, self.model);
        // A above the setpoint lowers the probe, below raises it.
        self.z -= self.step_gain * (amp - self.target);
        (self.z, phase)
    }
}

fn noisy(value: f64, std: f64, rng: &mut SimRng) -> f64 {
    let n: f64 = rng.sample(StandardNormal);
    value + std * n
}

/// Simulates one trace/retrace pair at height `y`.
pub fn scan_line(
    sample: &SampleProfile,
    p: &ControlParams,
    y: f64,
    model: &CantileverModel,
    n_px: usize,
    seed: u64,
) -> Result<ScanLinePair> {
    check_params(p)?;
    if n_px < 2 {
        return Err(Error::InvalidInput(format!("n_px must be at least 2, got {n_px}")));
    }
    let xs = sample.x_positions(n_px);
    let drive = p.drive_amplitude;
    let target = p.setpoint_fraction * drive;
    let mut fb = Loop {
        sample,
        model,
        drive,
        target,
        step_gain: p.i_gain * model.gain_scale,
        y,
        z: sample.height(xs[0], y) + target,
    };
    let mut rng = rng_from(seed);

    let mut height_trace = Vec::with_capacity(n_px);
    let mut phase_trace = Vec::with_capacity(n_px);
    for &x in &xs {
        let (h, phi) = fb.pixel(x);
        height_trace.push(noisy(h, model.height_noise, &mut rng));
        phase_trace.push(noisy(phi, model.phase_noise, &mut rng));
    }

    let mut height_retrace = Vec::with_capacity(n_px);
    let mut phase_retrace = Vec::with_capacity(n_px);
    for &x in xs.iter().rev() {
        let (h, phi) = fb.pixel(x);
        height_retrace.push(noisy(h, model.height_noise, &mut rng));
        phase_retrace.push(noisy(phi, model.phase_noise, &mut rng));
    }
    height_retrace.reverse();
    phase_retrace.reverse();

    Ok(ScanLinePair {
        x_positions: xs,
        height_trace,
        height_retrace,
        phase_trace,
        phase_retrace,
    })
}

/// Approach curve over a flat surface at height 0, from `z_max` down to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdCurve {
    pub z_values: Vec<f64>,
    pub amplitude: Vec<f64>,
    pub phase: Vec<f64>,
    pub drive_amplitude: f64,
}

pub fn force_distance_curve(
    drive: f64,
    z_max: f64,
    n_steps: usize,
    model: &CantileverModel,
) -> Result<FdCurve> {
    if !(drive > 0.0) {
        return Err(Error::InvalidInput(format!("drive {drive} must be positive")));
    }
    if !(z_max > drive) {
        return Err(Error::InvalidInput(format!(
            "z_max {z_max} must exceed the drive amplitude {drive}"
        )));
    }
    if n_steps < 2 {
        return Err(Error::InvalidInput("n_steps must be at least 2".into()));
    }
    let mut curve = FdCurve {
        z_values: Vec::with_capacity(n_steps),
        amplitude: Vec::with_capacity(n_steps),
        phase: Vec::with_capacity(n_steps),
        drive_amplitude: drive,
    };
    for i in 0..n_steps {
        let z = z_max * (1.0 - i as f64 / (n_steps - 1) as f64);
        let (a, phi) = response(z, drive, model);
        curve.z_values.push(z);
        curve.amplitude.push(a);
        curve.phase.push(phi);
    }
    Ok(curve)
}

impl FdCurve {
    /// Setpoint fraction at which the phase first drops from at-or-above the
    /// free phase to below it. The bracketing samples are refined by
    /// bisection against the model, so the result does not depend on the
    /// sampling step. `None` when the approach never turns repulsive.
    pub fn threshold_setpoint(&self, model: &CantileverModel) -> Option<f64> {
        let free = model.free_phase;
        let i = (1..self.phase.len())
            .find(|&i| self.phase[i - 1] >= free && self.phase[i] < free)?;
        let (mut hi, mut lo) = (self.z_values[i - 1], self.z_values[i]);
        for _ in 0..200 {
            let mid = 0.5 * (hi + lo);
            if mid == hi || mid == lo {
                break;
            }
            if response(mid, self.drive_amplitude, model).1 < free {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let amp = response(hi, self.drive_amplitude, model).0;
        Some(amp / self.drive_amplitude)
    }
}

/// Stacked scan lines; every channel is row-major `n_lines x n_px`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanImage {
    pub n_lines: usize,
    pub n_px: usize,
    pub x_positions: Vec<f64>,
    pub y_positions: Vec<f64>,
    pub height_trace: Vec<f64>,
    pub height_retrace: Vec<f64>,
    pub phase_trace: Vec<f64>,
    pub phase_retrace: Vec<f64>,
}

impl ScanImage {
    pub fn line(&self, j: usize) -> ScanLinePair {
        let r = j * self.n_px..(j + 1) * self.n_px;
        ScanLinePair {
            x_positions: self.x_positions.clone(),
            height_trace: self.height_trace[r.clone()].to_vec(),
            height_retrace: self.height_retrace[r.clone()].to_vec(),
            phase_trace: self.phase_trace[r.clone()].to_vec(),
            phase_retrace: self.phase_retrace[r].to_vec(),
        }
    }

    /// Column means of the trace height channel.
    pub fn mean_trace_profile(&self) -> Vec<f64> {
        (0..self.n_px)
            .map(|i| {
                (0..self.n_lines)
                    .map(|j| self.height_trace[j * self.n_px + i])
                    .sum::<f64>()
                    / self.n_lines as f64
            })
            .collect()
    }

    /// One row per pixel: line, x, h_trace, h_retrace, phi_trace, phi_retrace.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("line,x,h_trace,h_retrace,phi_trace,phi_retrace\n");
        for j in 0..self.n_lines {
            for i in 0..self.n_px {
                let k = j * self.n_px + i;
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    j,
                    self.x_positions[i],
                    self.height_trace[k],
                    self.height_retrace[k],
                    self.phase_trace[k],
                    self.phase_retrace[k]
                ));
            }
        }
        out
    }
}

/// Scans `n_lines` uniformly spaced lines; a single line sits at mid-height.
pub fn full_scan(
    sample: &SampleProfile,
    p: &ControlParams,
    n_lines: usize,
    n_px: usize,
    model: &CantileverModel,
    seed: u64,
) -> Result<ScanImage> {
    if n_lines < 1 {
        return Err(Error::InvalidInput("n_lines must be at least 1".into()));
    }
    let h = sample.extent.1;
    let mut img = ScanImage {
        n_lines,
        n_px,
        x_positions: sample.x_positions(n_px),
        y_positions: Vec::with_capacity(n_lines),
        height_trace: Vec::with_capacity(n_lines * n_px),
        height_retrace: Vec::with_capacity(n_lines * n_px),
        phase_trace: Vec::with_capacity(n_lines * n_px),
        phase_retrace: Vec::with_capacity(n_lines * n_px),
    };
    for j in 0..n_lines {
        let y = (j as f64 + 0.5) * h / n_lines as f64;
        let line_seed = crate::rng::derive_seed(seed, "image-line", j as u64);
        let line = scan_line(sample, p, y, model, n_px, line_seed)?;
        img.y_positions.push(y);
        img.height_trace.extend(line.height_trace);
        img.height_retrace.extend(line.height_retrace);
        img.phase_trace.extend(line.phase_trace);
        img.phase_retrace.extend(line.phase_retrace);
    }
    Ok(img)
}
