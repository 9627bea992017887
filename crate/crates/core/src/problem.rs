//! What a session optimizes: the simulated microscope or a closed-form
//! two-parameter test problem.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rewards::synthetic_reward;
use crate::sim::SamplePreset;

/// Closed-form reward pairs on the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticProblem {
    /// Rewards 1 and 2: maxima in different places, a real trade-off.
    TwoGaussian,
    /// Reward 1 against its negation: every point is a trade-off.
    Opposed,
    /// Reward 1 twice: the front collapses to the shared maximum.
    Identical,
}

impl SyntheticProblem {
    pub fn name(self) -> &'static str {
        match self {
            Self::TwoGaussian => "two-gaussian",
            Self::Opposed => "opposed",
            Self::Identical => "identical",
        }
    }

    pub fn reward_names(self) -> Vec<String> {
        let second = match self {
            Self::TwoGaussian => "reward_2",
            Self::Opposed => "reward_3",
            Self::Identical => "reward_1_copy",
        };
        vec!["reward_1".to_string(), second.to_string()]
    }

    pub fn evaluate(self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != 2 {
            return Err(Error::InvalidInput(format!("synthetic problems take 2 parameters, got {}", x.len())));
        }
        let r1 = synthetic_reward(1, x[0], x[1])?;
        let second = match self {
            Self::TwoGaussian => synthetic_reward(2, x[0], x[1])?,
            Self::Opposed => synthetic_reward(3, x[0], x[1])?,
            Self::Identical => r1,
        };
        Ok(vec![r1, second])
    }
}

impl std::str::FromStr for SyntheticProblem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-gaussian" => Ok(Self::TwoGaussian),
            "opposed" => Ok(Self::Opposed),
            "identical" => Ok(Self::Identical),
            other => Err(Error::InvalidInput(format!("unknown synthetic problem `{other}`"))),
        }
    }
}

/// Centre of reward 1's positive lobe.
pub const REWARD_1_PEAK: [f64; 2] = [0.35, 0.65];
/// Centre of reward 2's positive lobe.
pub const REWARD_2_PEAK: [f64; 2] = [0.35, 0.35];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Problem {
    Microscope { sample: SamplePreset },
    Synthetic { problem: SyntheticProblem },
}

impl Default for Problem {
    fn default() -> Self {
        Self::Microscope {
            sample: SamplePreset::Grating,
        }
    }
}
