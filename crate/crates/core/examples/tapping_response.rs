//! The cantilever model: amplitude/phase against tip height, the
//! attractive-to-repulsive threshold from an approach curve, and a single
//! trace/retrace pair over a grating step.

use tapmobo::params::ControlParams;
use tapmobo::sim::{amplitude_phase_response, force_distance_curve, scan_line, CantileverModel, SampleProfile, SamplePreset};

fn main() -> tapmobo::Result<()> {
    let m = CantileverModel::default();
    println!("drive 50 nm approach:");
    for d in [80.0, 50.0, 48.0, 46.0, 45.0, 43.0, 40.0, 30.0] {
        let (a, phi) = amplitude_phase_response(d, 50.0, &m)?;
        println!("  distance {d:5.1} nm -> amplitude {a:5.1} nm, phase {phi:5.1} deg");
    }

    for drive in [10.0, 25.0, 50.0, 100.0] {
        let fd = force_distance_curve(drive, 2.0 * drive + 10.0, 400, &m)?;
        let t = fd.threshold_setpoint(&m).unwrap_or(1.0);
        println!("threshold setpoint at drive {drive:5.1} nm: {t:.4}");
    }

    let grating = SampleProfile::from_preset(SamplePreset::Grating);
    for p in [ControlParams::new(20.0, 0.85, 30.0), ControlParams::new(20.0, 0.80, 66.0)] {
        let line = scan_line(&grating, &p, 10_000.0, &m, 256, 1)?;
        let mismatch: f64 = line
            .height_trace
            .iter()
            .zip(&line.height_retrace)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / line.len() as f64;
        let repulsive = line.phase_trace.iter().filter(|&&v| v < m.free_phase).count();
        println!("{p}: mean |trace - retrace| {mismatch:.2} nm, {repulsive} trace pixels below free phase");
    }
    Ok(())
}
