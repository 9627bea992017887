//! Multi-objective Bayesian optimization of a simulated tapping-mode scanning
//! probe microscope.

pub mod acquisition;
pub mod error;
pub mod gp;
pub mod params;
pub mod pareto;
pub mod problem;
pub mod rewards;
pub mod rng;
pub mod seeding;
pub mod session;
pub mod sim;

pub use error::{Error, Result};
