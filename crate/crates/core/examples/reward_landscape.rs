//! Rewards over a coarse (drive, setpoint) grid at a fixed gain on the
//! grating, printed as three text maps.

use tapmobo::params::ControlParams;
use tapmobo::rewards::evaluate_rewards;
use tapmobo::session::SessionConfig;
use tapmobo::sim::{scan_line, SampleProfile, SamplePreset};

const SHADES: &[u8] = b" .:-=+*#%@";

fn main() -> tapmobo::Result<()> {
    let gain: f64 = std::env::args().nth(1).map(|s| s.parse().unwrap_or(115.0)).unwrap_or(115.0);
    let cfg = SessionConfig::default();
    let profile = SampleProfile::from_preset(SamplePreset::Grating);
    let n = 20;
    let drives: Vec<f64> = (0..n).map(|i| 100.0 * i as f64 / (n - 1) as f64).collect();
    let sps: Vec<f64> = (0..n).map(|i| 0.001 + 0.899 * i as f64 / (n - 1) as f64).collect();
    let mut batches = Vec::new();
    for &d in &drives {
        for &sp in &sps {
            let p = ControlParams::new(d, sp, gain);
            let b = (0..cfg.rewards.n_lines_avg)
                .map(|j| scan_line(&profile, &p, 5000.0 + 78.0 * j as f64, &cfg.model, 256, j as u64))
                .collect::<tapmobo::Result<Vec<_>>>()?;
            batches.push(b);
        }
    }
    let gmin = batches.iter().flatten().map(|b| b.min_height()).fold(f64::INFINITY, f64::min);
    let rewards = batches
        .iter()
        .map(|b| evaluate_rewards(b, gmin, &cfg.rewards, false).map(|r| r.values))
        .collect::<tapmobo::Result<Vec<_>>>()?;

    for (k, name) in cfg.reward_names().iter().enumerate() {
        let vals: Vec<f64> = rewards.iter().map(|r| r[k]).collect();
        let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        println!("\n{name} at gain {gain} (rows: setpoint high to low, columns: drive 0 to 100 nm)");
        for j in (0..n).rev() {
            let row: String = (0..n)
                .map(|i| {
                    let t = if hi > lo { (vals[i * n + j] - lo) / (hi - lo) } else { 0.0 };
                    SHADES[((t * (SHADES.len() - 1) as f64).round()) as usize] as char
                })
                .collect();
            println!("  {:5.3} |{row}|", sps[j]);
        }
        println!("  range [{lo:.3}, {hi:.3}]");
    }
    Ok(())
}
