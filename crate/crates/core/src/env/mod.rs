//! Classic-control environments with task-parameterized dynamics.
//!
//! Three environments are provided: mountain car (velocity noise), acrobot
//! (link lengths) and cart-pole (pole length). A [`TaskSpec`] fixes the
//! physics parameters and the reward scheme of one task drawn from a
//! [`TaskDistribution`]; an [`Env`] steps that task.

mod acrobot;
mod cartpole;
mod mountain_car;
mod reward;
mod task;

pub use acrobot::AcrobotState;
pub use cartpole::CartPoleState;
pub use mountain_car::MountainCarState;
pub use reward::{map_reward, RewardScheme, StepOutcome};
pub use task::{sample_task, PhysicsParams, TaskDistribution, TaskSpec};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::stream_rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical divergence in {env} state component {component} ({value})")]
    Diverged {
        env: EnvId,
        component: usize,
        value: f64,
    },
    #[error("invalid action {action} for {env} ({num_actions} actions)")]
    InvalidAction {
        env: EnvId,
        action: usize,
        num_actions: usize,
    },
    #[error("step called on a finished episode")]
    EpisodeOver,
}

/// Environment family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvId {
    MountainCar,
    Acrobot,
    CartPole,
}

impl EnvId {
    pub const ALL: [EnvId; 3] = [EnvId::MountainCar, EnvId::Acrobot, EnvId::CartPole];

    pub fn num_actions(self) -> usize {
        match self {
            EnvId::MountainCar | EnvId::Acrobot => 3,
            EnvId::CartPole => 2,
        }
    }

    /// Length of the observation vector fed to the Q-network.
    pub fn obs_dim(self) -> usize {
        match self {
            EnvId::MountainCar => 2,
            EnvId::Acrobot => 6,
            EnvId::CartPole => 4,
        }
    }

    pub fn default_max_steps(self) -> u32 {
        match self {
            EnvId::MountainCar => 300,
            EnvId::Acrobot => 500,
            EnvId::CartPole => 200,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            EnvId::MountainCar => 0,
            EnvId::Acrobot => 1,
            EnvId::CartPole => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(EnvId::MountainCar),
            1 => Some(EnvId::Acrobot),
            2 => Some(EnvId::CartPole),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvId::MountainCar => "mountaincar",
            EnvId::Acrobot => "acrobot",
            EnvId::CartPole => "cartpole",
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvId {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "mountaincar" => Ok(EnvId::MountainCar),
            "acrobot" => Ok(EnvId::Acrobot),
            "cartpole" => Ok(EnvId::CartPole),
            other => Err(EnvError::Config(format!("unknown environment id `{other}`"))),
        }
    }
}

/// Observation as seen by the Q-network.
///
/// Mountain car: (position, velocity). Acrobot: (cos θ1, sin θ1, cos θ2,
/// sin θ2, θ̇1, θ̇2). Cart-pole: (x, ẋ, θ, θ̇).
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub state: Vec<f64>,
}

impl Observation {
    pub fn new(state: Vec<f64>) -> Self {
        Self { state }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.state
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Observation,
    pub action: usize,
    /// Reward under the task's own reward scheme.
    pub reward: f64,
    pub next_state: Observation,
    /// Terminal state reached (goal or failure).
    pub done: bool,
    /// Step horizon reached without a terminal state.
    pub truncated: bool,
    /// Scheme-independent facts about the step, for re-mapping rewards.
    pub outcome: StepOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PhysState {
    MountainCar(MountainCarState),
    Acrobot(AcrobotState),
    CartPole(CartPoleState),
}

impl PhysState {
    fn observation(&self) -> Observation {
        match self {
            PhysState::MountainCar(s) => Observation::new(s.observation().to_vec()),
            PhysState::Acrobot(s) => Observation::new(s.observation().to_vec()),
            PhysState::CartPole(s) => Observation::new(s.observation().to_vec()),
        }
    }
}

/// One running episode of a task.
///
/// The physics noise stream is derived from the task seed, so a task
/// replays identically for a given sequence of resets and actions.
#[derive(Debug, Clone)]
pub struct Env {
    task: TaskSpec,
    state: PhysState,
    steps: u32,
    finished: bool,
    noise_rng: ChaCha8Rng,
}

impl Env {
    pub fn new(task: TaskSpec) -> Result<Self, EnvError> {
        task.validate()?;
        let state = match task.env_id {
            EnvId::MountainCar => PhysState::MountainCar(MountainCarState::default()),
            EnvId::Acrobot => PhysState::Acrobot(AcrobotState::default()),
            EnvId::CartPole => PhysState::CartPole(CartPoleState::default()),
        };
        let noise_rng = stream_rng(task.seed, 0x5048_5953);
        Ok(Self {
            task,
            state,
            steps: 0,
            finished: true,
            noise_rng,
        })
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn num_actions(&self) -> usize {
        self.task.env_id.num_actions()
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Observation {
        self.state = match self.task.env_id {
            EnvId::MountainCar => PhysState::MountainCar(MountainCarState::sample_initial(rng)),
            EnvId::Acrobot => PhysState::Acrobot(AcrobotState::sample_initial(rng)),
            EnvId::CartPole => PhysState::CartPole(CartPoleState::sample_initial(rng)),
        };
        self.steps = 0;
        self.finished = false;
        self.state.observation()
    }

    pub fn step(&mut self, action: usize) -> Result<Transition, EnvError> {
        if self.finished {
            return Err(EnvError::EpisodeOver);
        }
        let env = self.task.env_id;
        if action >= env.num_actions() {
            return Err(EnvError::InvalidAction {
                env,
                action,
                num_actions: env.num_actions(),
            });
        }
        let before = self.state.observation();
        let (next, outcome) = match (&self.state, self.task.params) {
            (PhysState::MountainCar(s), PhysicsParams::MountainCar { .. }) => {
                let noise = self.task.velocity_noise(&mut self.noise_rng);
                let n = s.step(action, noise);
                let goal = n.at_goal();
                (PhysState::MountainCar(n), StepOutcome::new(goal, false))
            }
            (PhysState::Acrobot(s), PhysicsParams::Acrobot { link_len_1, link_len_2 }) => {
                let n = s.step(action, link_len_1, link_len_2);
                let goal = n.at_goal();
                (PhysState::Acrobot(n), StepOutcome::new(goal, false))
            }
            (PhysState::CartPole(s), PhysicsParams::CartPole { pole_length }) => {
                let n = s.step(action, pole_length);
                let failed = n.failed();
                (PhysState::CartPole(n), StepOutcome::new(false, failed))
            }
            _ => unreachable!("task params validated against env id"),
        };
        let after = next.observation();
        if let Some((component, &value)) =
            after.state.iter().enumerate().find(|(_, v)| !v.is_finite())
        {
            self.finished = true;
            return Err(EnvError::Diverged {
                env,
                component,
                value,
            });
        }
        self.state = next;
        self.steps += 1;
        let done = outcome.goal_reached || outcome.failed;
        let truncated = !done && self.steps >= self.task.max_steps;
        self.finished = done || truncated;
        let reward = map_reward(self.task.reward_scheme, env, &outcome, &before, &after)?;
        Ok(Transition {
            state: before,
            action,
            reward,
            next_state: after,
            done,
            truncated,
            outcome,
        })
    }
}
