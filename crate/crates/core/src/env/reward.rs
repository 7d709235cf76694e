use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::mountain_car::GOAL_POSITION;
use super::{EnvError, EnvId, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RewardScheme {
    /// Mountain car: -1 per step plus a potential-based shaping term.
    Shaped,
    /// -1 on every step, 0 on the step that reaches the goal.
    NegUntilGoal,
    /// 1 on the step that reaches the goal, 0 otherwise.
    BinarySuccess,
    /// Cart-pole: 0 on the failing step, 1 otherwise.
    BinaryNonPenalizing,
}

impl RewardScheme {
    pub fn supports(self, env: EnvId) -> bool {
        matches!(
            (self, env),
            (RewardScheme::Shaped, EnvId::MountainCar)
                | (RewardScheme::NegUntilGoal, EnvId::MountainCar | EnvId::Acrobot)
                | (RewardScheme::BinarySuccess, EnvId::MountainCar | EnvId::Acrobot)
                | (RewardScheme::BinaryNonPenalizing, EnvId::CartPole)
        )
    }

    pub fn check(self, env: EnvId) -> Result<(), EnvError> {
        if self.supports(env) {
            Ok(())
        } else {
            Err(EnvError::Config(format!(
                "reward scheme {self:?} is not defined for {env}"
            )))
        }
    }
}

impl FromStr for RewardScheme {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "shaped" => Ok(RewardScheme::Shaped),
            "neguntilgoal" => Ok(RewardScheme::NegUntilGoal),
            "binarysuccess" | "binary" => Ok(RewardScheme::BinarySuccess),
            "binarynonpenalizing" => Ok(RewardScheme::BinaryNonPenalizing),
            other => Err(EnvError::Config(format!("unknown reward scheme `{other}`"))),
        }
    }
}

/// What happened on a step, independent of how it is rewarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepOutcome {
    pub goal_reached: bool,
    pub failed: bool,
}

impl StepOutcome {
    pub fn new(goal_reached: bool, failed: bool) -> Self {
        Self {
            goal_reached,
            failed,
        }
    }
}

/// Shaping potential for the mountain-car source reward.
pub fn shaping_potential(obs: &Observation) -> f64 {
    let position = obs.state[0];
    let velocity = obs.state[1];
    10.0 * velocity.abs() + 100.0 * (0.5 - (position - GOAL_POSITION).abs())
}

pub fn map_reward(
    scheme: RewardScheme,
    env: EnvId,
    outcome: &StepOutcome,
    state: &Observation,
    next_state: &Observation,
) -> Result<f64, EnvError> {
    scheme.check(env)?;
    Ok(match scheme {
        RewardScheme::BinarySuccess => f64::from(u8::from(outcome.goal_reached)),
        RewardScheme::NegUntilGoal => {
            if outcome.goal_reached {
                0.0
            } else {
                -1.0
            }
        }
        RewardScheme::BinaryNonPenalizing => {
            if outcome.failed {
                0.0
            } else {
                1.0
            }
        }
        RewardScheme::Shaped => -1.0 + shaping_potential(next_state) - shaping_potential(state),
    })
}
