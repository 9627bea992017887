//! Re-target a finished synthetic session with reward weights and a
//! lowered reference point, and watch the proposed optimum move.

use tapmobo::acquisition::SteeringState;
use tapmobo::problem::{SyntheticProblem, REWARD_1_PEAK};
use tapmobo::session::{SessionConfig, SessionState};

fn distance(p: &[f64]) -> f64 {
    ((p[0] - REWARD_1_PEAK[0]).powi(2) + (p[1] - REWARD_1_PEAK[1]).powi(2)).sqrt()
}

fn main() -> tapmobo::Result<()> {
    let mut s = SessionState::create(SessionConfig::synthetic(SyntheticProblem::TwoGaussian))?;
    s.run()?;

    println!("weight on reward 1 -> proposed optimum (distance to reward 1 peak)");
    for w in [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0] {
        let out = s.preview_steering(&SteeringState {
            weights: vec![w, 1.0],
            ref_override: None,
        })?;
        let p = &out.proposal.point;
        println!(
            "  {w:4.2} -> ({:.2}, {:.2})  d = {:.3}  predicted {:.3?}",
            p[0],
            p[1],
            distance(p),
            out.predicted_rewards
        );
    }

    let neutral = s.propose_optimum(&SteeringState::neutral(2))?;
    println!("symmetric reference {:?}", neutral.reference.coords);
    for drop in [0.0, 0.25, 0.5, 1.0] {
        let mut r = neutral.reference.clone();
        r.coords[0] -= drop;
        let out = s.set_steering(SteeringState {
            weights: vec![1.0, 1.0],
            ref_override: Some(r),
        })?;
        println!("  reward 1 reference lowered by {drop:4.2}: d = {:.3}", distance(&out.proposal.point));
    }
    println!("{} journal records", s.journal.len());
    Ok(())
}
