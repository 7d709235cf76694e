use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{EnvError, EnvId, RewardScheme};

/// Physics parameters of one task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PhysicsParams {
    MountainCar { velocity_noise_std: f64 },
    /// Link lengths in meters.
    Acrobot { link_len_1: f64, link_len_2: f64 },
    /// Pole half-length in meters.
    CartPole { pole_length: f64 },
}

impl PhysicsParams {
    pub fn env_id(&self) -> EnvId {
        match self {
            PhysicsParams::MountainCar { .. } => EnvId::MountainCar,
            PhysicsParams::Acrobot { .. } => EnvId::Acrobot,
            PhysicsParams::CartPole { .. } => EnvId::CartPole,
        }
    }

    /// Values as a flat list, for CSV output.
    pub fn values(&self) -> Vec<f64> {
        match *self {
            PhysicsParams::MountainCar { velocity_noise_std } => vec![velocity_noise_std],
            PhysicsParams::Acrobot {
                link_len_1,
                link_len_2,
            } => vec![link_len_1, link_len_2],
            PhysicsParams::CartPole { pole_length } => vec![pole_length],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub env_id: EnvId,
    pub params: PhysicsParams,
    pub reward_scheme: RewardScheme,
    pub max_steps: u32,
    pub seed: u64,
}

impl TaskSpec {
    /// The unperturbed task of an environment family.
    pub fn standard(env_id: EnvId, reward_scheme: RewardScheme, seed: u64) -> Self {
        let params = match env_id {
            EnvId::MountainCar => PhysicsParams::MountainCar {
                velocity_noise_std: 0.0,
            },
            EnvId::Acrobot => PhysicsParams::Acrobot {
                link_len_1: 1.0,
                link_len_2: 1.0,
            },
            EnvId::CartPole => PhysicsParams::CartPole { pole_length: 0.5 },
        };
        Self {
            env_id,
            params,
            reward_scheme,
            max_steps: env_id.default_max_steps(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.params.env_id() != self.env_id {
            return Err(EnvError::Config(format!(
                "physics parameters for {} given to a {} task",
                self.params.env_id(),
                self.env_id
            )));
        }
        if self.max_steps == 0 {
            return Err(EnvError::Config("max_steps must be positive".into()));
        }
        self.reward_scheme.check(self.env_id)?;
        let finite = self.params.values().iter().all(|v| v.is_finite());
        let positive = match self.params {
            PhysicsParams::MountainCar { velocity_noise_std } => velocity_noise_std >= 0.0,
            PhysicsParams::Acrobot {
                link_len_1,
                link_len_2,
            } => link_len_1 > 0.0 && link_len_2 > 0.0,
            PhysicsParams::CartPole { pole_length } => pole_length > 0.0,
        };
        if !finite || !positive {
            return Err(EnvError::Config(format!(
                "invalid physics parameters {:?}",
                self.params
            )));
        }
        Ok(())
    }

    /// Draws one velocity perturbation η ~ N(0, velocity_noise_std). Zero
    /// for environments without velocity noise.
    pub fn velocity_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.params {
            PhysicsParams::MountainCar { velocity_noise_std } if velocity_noise_std > 0.0 => {
                let z: f64 = rng.sample(StandardNormal);
                z * velocity_noise_std
            }
            _ => 0.0,
        }
    }
}

/// Gaussian task distribution over one environment family.
///
/// For mountain car `mean`/`std` describe the per-step velocity noise η
/// (every task uses noise of standard deviation `std`); for acrobot both
/// link lengths, and for cart-pole the pole length, are drawn from
/// N(mean, std) and clipped to `clip`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskDistribution {
    pub env_id: EnvId,
    pub mean: f64,
    pub std: f64,
    pub clip: (f64, f64),
    pub reward_scheme: RewardScheme,
    pub max_steps: u32,
}

impl TaskDistribution {
    pub fn standard(env_id: EnvId, reward_scheme: RewardScheme) -> Self {
        let (mean, std, clip) = match env_id {
            EnvId::MountainCar => (0.0, 0.02, (0.0, f64::INFINITY)),
            EnvId::Acrobot => (0.95, 0.1, (0.7, 1.2)),
            EnvId::CartPole => (0.5, 0.2, (0.2, 1.2)),
        };
        Self {
            env_id,
            mean,
            std,
            clip,
            reward_scheme,
            max_steps: env_id.default_max_steps(),
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if !self.mean.is_finite() || !self.std.is_finite() || self.std < 0.0 {
            return Err(EnvError::Config(format!(
                "task distribution N({}, {}) is not valid",
                self.mean, self.std
            )));
        }
        if self.clip.0.is_nan() || self.clip.1.is_nan() || self.clip.0 > self.clip.1 {
            return Err(EnvError::Config(format!("invalid clip bounds {:?}", self.clip)));
        }
        if self.max_steps == 0 {
            return Err(EnvError::Config("max_steps must be positive".into()));
        }
        self.reward_scheme.check(self.env_id)
    }
}

/// Draws one task from `dist`. Deterministic given the generator state.
pub fn sample_task<R: Rng + ?Sized>(dist: &TaskDistribution, rng: &mut R) -> Result<TaskSpec, EnvError> {
    dist.validate()?;
    let normal = Normal::new(dist.mean, dist.std)
        .map_err(|e| EnvError::Config(format!("task distribution: {e}")))?;
    let (lo, hi) = dist.clip;
    let mut draw = || normal.sample(rng).clamp(lo, hi);
    let params = match dist.env_id {
        EnvId::MountainCar => PhysicsParams::MountainCar {
            velocity_noise_std: dist.std,
        },
        EnvId::Acrobot => {
            let link_len_1 = draw();
            let link_len_2 = draw();
            PhysicsParams::Acrobot {
                link_len_1,
                link_len_2,
            }
        }
        EnvId::CartPole => PhysicsParams::CartPole {
            pole_length: draw(),
        },
    };
    let seed = rng.gen::<u64>();
    let task = TaskSpec {
        env_id: dist.env_id,
        params,
        reward_scheme: dist.reward_scheme,
        max_steps: dist.max_steps,
        seed,
    };
    task.validate()?;
    Ok(task)
}
