//! Sessions on the closed-form two-parameter problems, printing the
//! Pareto front each one finds.
//!
//! cargo run --release --example synthetic_pareto -- [two-gaussian|opposed|identical] [seeds]

use tapmobo::problem::SyntheticProblem;
use tapmobo::session::{SessionConfig, SessionState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let problems: Vec<SyntheticProblem> = match args.next() {
        Some(p) => vec![p.parse()?],
        None => vec![SyntheticProblem::TwoGaussian, SyntheticProblem::Opposed, SyntheticProblem::Identical],
    };
    let seeds: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(10);
    for problem in problems {
        let cfg = SessionConfig {
            n_seeds: seeds,
            ..SessionConfig::synthetic(problem)
        };
        let mut s = SessionState::create(cfg)?;
        s.run()?;
        println!("{} ({} observations, {})", problem.name(), s.observations.len(), s.status);
        for e in &s.pareto_front.entries {
            println!(
                "  x = ({:.2}, {:.2})  rewards ({:.3}, {:.3})  from observation {}",
                e.params[0], e.params[1], e.rewards[0], e.rewards[1], e.source
            );
        }
        println!("  final hypervolume {:.4}", s.hv_history.fixed_ref.last().unwrap_or(&0.0));
    }
    Ok(())
}
