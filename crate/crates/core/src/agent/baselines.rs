use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, epsilon_greedy, AgentError};
use crate::grid::GridCodec;
use crate::net::QNetwork;

/// When the JSRL expert probability decays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum JsrlDecay {
    #[default]
    PerEpisode,
    PerStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum BaselineSpec {
    #[default]
    None,
    /// Jump-start RL: act from an expert with probability
    /// `expert_prob_start · decay^t`.
    Jsrl {
        expert_prob_start: f64,
        decay: f64,
        #[serde(default)]
        schedule: JsrlDecay,
    },
    /// Policy distillation towards the averaged outputs of archived source
    /// networks.
    Distill { lambda_kl: f64, temperature: f64 },
}

impl BaselineSpec {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            BaselineSpec::None => Ok(()),
            BaselineSpec::Jsrl {
                expert_prob_start,
                decay,
                ..
            } => {
                if (0.0..=1.0).contains(&expert_prob_start) && (0.0..=1.0).contains(&decay) {
                    Ok(())
                } else {
                    Err(format!("JSRL probabilities must lie in [0, 1], got start {expert_prob_start}, decay {decay}"))
                }
            }
            BaselineSpec::Distill { lambda_kl, temperature } => {
                if lambda_kl >= 0.0 && temperature > 0.0 {
                    Ok(())
                } else {
                    Err(format!("distillation needs λ_KL ≥ 0 and τ > 0, got {lambda_kl}, {temperature}"))
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BaselineSpec::None => "none",
            BaselineSpec::Jsrl { .. } => "jsrl",
            BaselineSpec::Distill { .. } => "distill",
        }
    }
}

/// Greedy expert for the JSRL roll-in.
#[derive(Debug, Clone)]
pub enum Expert {
    /// Per-cell values over the grid (by default the knowledge base's
    /// MaxQInit table).
    Table(Arc<Vec<f64>>),
    Network(Arc<QNetwork>),
}

impl Expert {
    pub fn action(&self, codec: &GridCodec, obs: &[f64]) -> Result<usize, AgentError> {
        match self {
            Expert::Table(values) => {
                let cells = codec.encode_all(obs)?;
                let v: Vec<f64> = cells.iter().map(|&c| values[c]).collect();
                Ok(argmax(&v))
            }
            Expert::Network(net) => Ok(argmax(&net.forward(obs)?)),
        }
    }
}

/// q(t) = start · decay^t.
pub fn jsrl_probability(start: f64, decay: f64, t: u64) -> f64 {
    let t = i32::try_from(t).unwrap_or(i32::MAX);
    start * decay.powi(t)
}

/// Expert argmax with probability `q`, otherwise ε-greedy over the
/// learner's values. No draw is spent when `q` is 0 or 1.
pub fn jsrl_select<R: Rng + ?Sized>(
    obs: &[f64],
    expert: &Expert,
    codec: &GridCodec,
    learner_values: &[f64],
    epsilon: f64,
    q: f64,
    rng: &mut R,
) -> Result<usize, AgentError> {
    if q >= 1.0 {
        return expert.action(codec, obs);
    }
    if q > 0.0 && rng.gen::<f64>() < q {
        return expert.action(codec, obs);
    }
    Ok(epsilon_greedy(learner_values, epsilon, rng))
}
