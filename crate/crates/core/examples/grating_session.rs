//! Full optimization run on the grating sample, then a final scan.
//!
//! cargo run --release --example grating_session -- [seed] [steps]

use std::time::Instant;

use tapmobo::session::{SessionConfig, SessionState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let steps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(50);
    let cfg = SessionConfig {
        seed,
        max_steps: steps,
        ..SessionConfig::default()
    };
    let started = Instant::now();
    let mut session = SessionState::create(cfg)?;
    session.run_with(&mut |s, rec| {
        if let Some(r) = rec.observation() {
            let o = &r.observation;
            println!(
                "{:>3} {:<4} drive {:6.2} nm  setpoint {:5.1}%  gain {:6.1}  rewards {:?}  hv {:.4}",
                o.iteration,
                rec.name(),
                o.params[0],
                o.params[1] * 100.0,
                o.params[2],
                o.rewards.values.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
                s.hv_history.fixed_ref.last().copied().unwrap_or(0.0),
            );
        }
    })?;
    println!("status {} after {:.1?}", session.status, started.elapsed());
    let fin = session.final_scan()?;
    println!("final parameters {:?}", fin.params);
    if let Some(img) = &fin.image {
        let n = img.height_trace.len() as f64;
        let mismatch: f64 = img
            .height_trace
            .iter()
            .zip(&img.height_retrace)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n;
        println!("mean |trace - retrace| {mismatch:.2} nm");
    }
    println!("total {:.1?}", started.elapsed());
    Ok(())
}
