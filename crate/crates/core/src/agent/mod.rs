//! DQN with knownness-weighted value initialization, plus the JSRL and
//! policy-distillation baselines and the plain DQN control.

mod baselines;
mod policy;

pub use baselines::{jsrl_probability, jsrl_select, BaselineSpec, Expert, JsrlDecay};
pub use policy::{adaptive_q, argmax, blend, epsilon_greedy, ExplorationSchedule};

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Env, EnvError, Observation, Transition};
use crate::grid::{GridCodec, GridError, KnownnessParams, VisitCounts};
use crate::kb::{InitStrategy, KbError, KnowledgeBase, ModelArchive};
use crate::net::{
    kl_output_grad, taken_action_mse, td_targets, Adam, Batch, LossBreakdown, NetError, QNetwork, ReplayBuffer,
};
use crate::rng::{label, stream_rng};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("agent configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Which parts of the adaptive function are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ModeFlags {
    /// Act greedily on Q̃ instead of Q^θ.
    pub use_pi_tilde: bool,
    /// Add the value-initialization loss MSE(Q^θ, Q̃).
    pub use_init_loss: bool,
    /// Add KL(π^θ ‖ π∅).
    pub use_kl: bool,
}

impl ModeFlags {
    pub const VANILLA: ModeFlags = ModeFlags {
        use_pi_tilde: false,
        use_init_loss: false,
        use_kl: false,
    };
    pub const ALL: ModeFlags = ModeFlags {
        use_pi_tilde: true,
        use_init_loss: true,
        use_kl: true,
    };

    pub fn any(&self) -> bool {
        self.use_pi_tilde || self.use_init_loss || self.use_kl
    }

    /// Short label such as `pi+L+KL`, or `vanilla`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.use_pi_tilde {
            parts.push("pi");
        }
        if self.use_init_loss {
            parts.push("L");
        }
        if self.use_kl {
            parts.push("KL");
        }
        if parts.is_empty() {
            "vanilla".into()
        } else {
            parts.join("+")
        }
    }
}

/// Hyperparameters of one learning agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Hard target update every this many environment steps.
    pub target_sync_every: u64,
    pub lambda_init: f64,
    pub lambda_kl: f64,
    pub temperature: f64,
    pub flags: ModeFlags,
    pub knownness: KnownnessParams,
    pub exploration: ExplorationSchedule,
    pub baseline: BaselineSpec,
}

impl AgentConfig {
    pub fn for_env(env_id: crate::env::EnvId) -> Self {
        use crate::env::EnvId;
        let (batch_size, buffer_capacity, learning_rate) = match env_id {
            EnvId::MountainCar => (64, 300_000, 1e-3),
            EnvId::Acrobot => (128, 10_000, 1e-4),
            EnvId::CartPole => (64, 10_000, 1e-3),
        };
        Self {
            gamma: 0.99,
            learning_rate,
            batch_size,
            buffer_capacity,
            target_sync_every: 200,
            lambda_init: 1.0,
            lambda_kl: 0.1,
            temperature: 1.0,
            flags: ModeFlags::VANILLA,
            knownness: KnownnessParams::for_env(env_id),
            exploration: ExplorationSchedule::default(),
            baseline: BaselineSpec::None,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: String| Err(AgentError::Config(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1)", self.gamma));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("batch size must be positive and no larger than the buffer".into());
        }
        if self.target_sync_every == 0 {
            return bad("target sync period must be positive".into());
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature {}", self.temperature));
        }
        if self.lambda_init < 0.0 || self.lambda_kl < 0.0 {
            return bad("loss weights must be non-negative".into());
        }
        self.knownness.validate()?;
        self.exploration.validate().map_err(AgentError::Config)?;
        self.baseline.validate().map_err(AgentError::Config)?;
        Ok(())
    }
}

/// Source of the initialization function Q∅.
#[derive(Debug, Clone)]
pub enum InitSource {
    None,
    /// Knowledge-base statistics reduced by a strategy, precomputed per cell.
    Table {
        kb: Arc<KnowledgeBase>,
        strategy: InitStrategy,
        values: Arc<Vec<f64>>,
    },
    /// Aggregated outputs of archived source networks.
    Models {
        archive: Arc<ModelArchive>,
        strategy: InitStrategy,
    },
}

impl InitSource {
    pub fn from_kb(kb: Arc<KnowledgeBase>, strategy: InitStrategy) -> Result<Self, KbError> {
        strategy.validate()?;
        let values = Arc::new(kb.init_table(&strategy)?);
        Ok(InitSource::Table { kb, strategy, values })
    }

    pub fn from_models(archive: Arc<ModelArchive>, strategy: InitStrategy) -> Result<Self, KbError> {
        strategy.validate()?;
        if archive.is_empty() {
            return Err(KbError::Archive("empty model archive".into()));
        }
        Ok(InitSource::Models { archive, strategy })
    }

    pub fn is_none(&self) -> bool {
        matches!(self, InitSource::None)
    }

    /// Q∅(s, ·) for one observation.
    pub fn vector(&self, codec: &GridCodec, obs: &[f64]) -> Result<Option<Vec<f64>>, AgentError> {
        Ok(match self {
            InitSource::None => None,
            InitSource::Table { values, .. } => {
                let cells = codec.encode_all(obs)?;
                Some(cells.iter().map(|&c| values[c]).collect())
            }
            InitSource::Models { archive, strategy } => {
                Some(crate::kb::q_init_from_models(archive, strategy, obs)?)
            }
        })
    }

    /// Q∅ for every row of a batch of states.
    pub fn batch(&self, codec: &GridCodec, states: &Array2<f64>) -> Result<Option<Array2<f64>>, AgentError> {
        Ok(match self {
            InitSource::None => None,
            InitSource::Table { values, .. } => {
                let a = codec.num_actions();
                let mut out = Array2::zeros((states.nrows(), a));
                for (i, row) in states.outer_iter().enumerate() {
                    let base = codec.encode(row.as_slice().expect("contiguous rows"), 0)?;
                    for j in 0..a {
                        out[[i, j]] = values[base + j];
                    }
                }
                Some(out)
            }
            InitSource::Models { archive, strategy } => Some(archive.aggregate_batch(states, strategy)?),
        })
    }
}

/// Result of one gradient update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateReport {
    pub losses: LossBreakdown,
    /// The gradient was non-finite and the update was skipped.
    pub skipped: bool,
}

/// Per-episode record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub episode_return: f64,
    pub steps: u32,
    /// Σ K(s, a) over the episode's visited pairs, each evaluated when the
    /// action was chosen.
    pub knownness_sum: f64,
    pub done: bool,
    pub truncated: bool,
    /// Mean losses over the episode's updates (zero when none ran).
    pub losses: LossBreakdown,
    pub updates: u32,
    pub skipped_updates: u32,
}

impl EpisodeRecord {
    /// Episodic average knownness in [0, 1].
    pub fn knownness_ratio(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.knownness_sum / f64::from(self.steps)
        }
    }
}

/// Learning agent for one task.
#[derive(Debug, Clone)]
pub struct Agent {
    config: AgentConfig,
    codec: GridCodec,
    net: QNetwork,
    target: QNetwork,
    optimizer: Adam,
    buffer: ReplayBuffer,
    counts: VisitCounts,
    init: InitSource,
    teacher: Option<Arc<ModelArchive>>,
    expert: Option<Expert>,
    epsilon: f64,
    env_steps: u64,
    episodes: u64,
    rng: ChaCha8Rng,
}

impl Agent {
    /// Builds an agent; the network initialization and the acting/sampling
    /// generator are separate streams of `seed`.
    pub fn new(config: AgentConfig, codec: GridCodec, init: InitSource, seed: u64) -> Result<Self, AgentError> {
        config.validate()?;
        codec.validate()?;
        if config.flags.any() && init.is_none() {
            return Err(AgentError::Config("DQInit modes require an initialization source".into()));
        }
        if matches!(config.baseline, BaselineSpec::Jsrl { .. }) && config.flags.any() {
            return Err(AgentError::Config("JSRL baseline runs without DQInit modes".into()));
        }
        let obs_dim = codec.env_id.obs_dim();
        let actions = codec.num_actions();
        let net = QNetwork::standard(obs_dim, actions, &mut stream_rng(seed, label::INIT));
        let target = net.clone();
        let optimizer = Adam::new(net.param_count(), config.learning_rate);
        let buffer = ReplayBuffer::new(config.buffer_capacity, obs_dim);
        let counts = VisitCounts::for_codec(&codec);
        Ok(Self {
            epsilon: config.exploration.start,
            config,
            codec,
            net,
            target,
            optimizer,
            buffer,
            counts,
            init,
            teacher: None,
            expert: None,
            env_steps: 0,
            episodes: 0,
            rng: stream_rng(seed, label::AGENT),
        })
    }

    /// Teacher networks for the distillation baseline.
    pub fn with_teacher(mut self, teacher: Arc<ModelArchive>) -> Result<Self, AgentError> {
        if teacher.is_empty() {
            return Err(AgentError::Kb(KbError::Archive("empty teacher archive".into())));
        }
        if teacher.nets()[0].dims() != self.net.dims() {
            return Err(AgentError::Net(NetError::Architecture(format!(
                "teacher dims {:?} differ from learner dims {:?}",
                teacher.nets()[0].dims(),
                self.net.dims()
            ))));
        }
        self.teacher = Some(teacher);
        Ok(self)
    }

    /// Expert policy for the JSRL baseline.
    pub fn with_expert(mut self, expert: Expert) -> Self {
        self.expert = Some(expert);
        self
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn codec(&self) -> &GridCodec {
        &self.codec
    }

    pub fn net(&self) -> &QNetwork {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut QNetwork {
        &mut self.net
    }

    pub fn target_net(&self) -> &QNetwork {
        &self.target
    }

    pub fn counts(&self) -> &VisitCounts {
        &self.counts
    }

    pub fn counts_mut(&mut self) -> &mut VisitCounts {
        &mut self.counts
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn init_source(&self) -> &InitSource {
        &self.init
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn set_epsilon(&mut self, epsilon: f64) {
        self.epsilon = epsilon;
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn q_theta(&self, obs: &[f64]) -> Result<Vec<f64>, AgentError> {
        Ok(self.net.forward(obs)?)
    }

    pub fn q_init(&self, obs: &[f64]) -> Result<Option<Vec<f64>>, AgentError> {
        self.init.vector(&self.codec, obs)
    }

    /// K(s, a) for every action under the current counts.
    pub fn knownness_vector(&self, obs: &[f64]) -> Result<Vec<f64>, AgentError> {
        let cells = self.codec.encode_all(obs)?;
        Ok(cells.iter().map(|&c| self.config.knownness.of_count(self.counts.get(c))).collect())
    }

    pub fn knownness(&self, obs: &[f64], action: usize) -> Result<f64, AgentError> {
        let cell = self.codec.encode(obs, action)?;
        Ok(self.config.knownness.of_count(self.counts.get(cell)))
    }

    /// Values the greedy policy acts on: Q̃ under soft policy guidance,
    /// otherwise Q^θ.
    pub fn acting_values(&self, obs: &[f64]) -> Result<Vec<f64>, AgentError> {
        let q_theta = self.q_theta(obs)?;
        if !self.config.flags.use_pi_tilde {
            return Ok(q_theta);
        }
        let q_init = self.q_init(obs)?.expect("validated init source");
        let k = self.knownness_vector(obs)?;
        Ok(adaptive_q(&q_theta, &q_init, &k))
    }

    /// ε-greedy over the acting values.
    pub fn select_action(&mut self, obs: &[f64]) -> Result<usize, AgentError> {
        let values = self.acting_values(obs)?;
        Ok(epsilon_greedy(&values, self.epsilon, &mut self.rng))
    }

    /// Action for the current step, including the JSRL expert roll-in when
    /// that baseline is configured.
    pub fn act(&mut self, obs: &[f64]) -> Result<usize, AgentError> {
        if let BaselineSpec::Jsrl {
            expert_prob_start,
            decay,
            schedule,
        } = self.config.baseline
        {
            let t = match schedule {
                JsrlDecay::PerEpisode => self.episodes,
                JsrlDecay::PerStep => self.env_steps,
            };
            let q = jsrl_probability(expert_prob_start, decay, t);
            let expert = self
                .expert
                .as_ref()
                .ok_or_else(|| AgentError::Config("JSRL baseline needs an expert".into()))?;
            let learner_values = self.q_theta(obs)?;
            return jsrl_select(obs, expert, &self.codec, &learner_values, self.epsilon, q, &mut self.rng);
        }
        self.select_action(obs)
    }

    /// Records the visit, stores the transition, decays ε, trains once
    /// the buffer holds a full batch and syncs the target on cadence.
    pub fn observe(&mut self, t: &Transition) -> Result<Option<UpdateReport>, AgentError> {
        let cell = self.codec.encode(t.state.as_slice(), t.action)?;
        self.counts.record_visit(cell);
        self.buffer.push(t);
        self.epsilon = self.config.exploration.next(self.epsilon);
        self.env_steps += 1;
        let report = match self.buffer.sample(self.config.batch_size, &mut self.rng) {
            Some(batch) => Some(self.train_step(&batch)?),
            None => None,
        };
        if self.env_steps % self.config.target_sync_every == 0 {
            self.target.copy_from(&self.net);
        }
        Ok(report)
    }

    pub fn end_episode(&mut self) {
        self.episodes += 1;
    }

    /// Blended targets Q̃(s_i, a_i) for the batch, from live counts.
    pub fn blended_targets(&self, batch: &Batch, q: &Array2<f64>, q_init: &Array2<f64>) -> Result<Vec<f64>, AgentError> {
        (0..batch.len())
            .map(|i| {
                let a = batch.actions[i];
                let row = batch.states.row(i);
                let cell = self.codec.encode(row.as_slice().expect("contiguous rows"), a)?;
                let k = self.config.knownness.of_count(self.counts.get(cell));
                Ok(blend(q[[i, a]], q_init[[i, a]], k))
            })
            .collect()
    }

    /// One gradient step on L_TD + λ̃·L̃ + λ_KL·L_KL (terms enabled by the
    /// mode flags, or the teacher KL for the distillation baseline).
    pub fn train_step(&mut self, batch: &Batch) -> Result<UpdateReport, AgentError> {
        let cache = self.net.forward_cached(&batch.states)?;
        let q = cache.output();
        let next_q = self.target.forward_batch(&batch.next_states)?;
        let targets = td_targets(&next_q, batch, self.config.gamma);
        let (l_td, mut out_grad) = taken_action_mse(q, &batch.actions, &targets);

        let flags = self.config.flags;
        let q_init = if flags.use_init_loss || flags.use_kl {
            self.init.batch(&self.codec, &batch.states)?
        } else {
            None
        };

        let mut l_init = 0.0;
        if flags.use_init_loss {
            let q_init = q_init.as_ref().expect("validated init source");
            let blended = self.blended_targets(batch, q, q_init)?;
            let (loss, grad) = taken_action_mse(q, &batch.actions, &blended);
            l_init = loss;
            out_grad.scaled_add(self.config.lambda_init, &grad);
        }

        let mut l_kl = 0.0;
        let mut lambda_kl = self.config.lambda_kl;
        if flags.use_kl {
            let q_init = q_init.as_ref().expect("validated init source");
            let (loss, grad) = kl_output_grad(q, q_init, self.config.temperature);
            l_kl = loss;
            out_grad.scaled_add(lambda_kl, &grad);
        } else if let BaselineSpec::Distill {
            lambda_kl: lambda,
            temperature,
        } = self.config.baseline
        {
            let teacher = self
                .teacher
                .as_ref()
                .ok_or_else(|| AgentError::Config("distillation baseline needs teacher networks".into()))?;
            let logits = teacher.mean_output(&batch.states)?;
            lambda_kl = lambda;
            if lambda > 0.0 {
                let (loss, grad) = kl_output_grad(q, &logits, temperature);
                l_kl = loss;
                out_grad.scaled_add(lambda, &grad);
            }
        }

        let lambda_init = if flags.use_init_loss { self.config.lambda_init } else { 0.0 };
        let losses = LossBreakdown::new(l_td, l_init, l_kl, lambda_init, if l_kl != 0.0 || flags.use_kl { lambda_kl } else { 0.0 });
        let grad = self.net.backward(&cache, &out_grad);
        let skipped = match self.optimizer.apply(self.net.params_mut(), &grad) {
            Ok(()) => false,
            Err(NetError::NonFiniteGradient { .. }) => true,
            Err(e) => return Err(e.into()),
        };
        if !skipped && !self.net.all_finite() {
            return Err(NetError::Architecture("parameters became non-finite".into()).into());
        }
        Ok(UpdateReport { losses, skipped })
    }
}

/// Runs one episode, calling `on_transition` after every environment step
/// (used to drive the parallel tabular learner on source tasks).
pub fn run_episode_with<R, F>(
    env: &mut Env,
    agent: &mut Agent,
    reset_rng: &mut R,
    mut on_transition: F,
) -> Result<EpisodeRecord, AgentError>
where
    R: Rng + ?Sized,
    F: FnMut(&Transition) -> Result<(), AgentError>,
{
    let mut obs: Observation = env.reset(reset_rng);
    let mut record = EpisodeRecord {
        episode: agent.episodes() as usize,
        episode_return: 0.0,
        steps: 0,
        knownness_sum: 0.0,
        done: false,
        truncated: false,
        losses: LossBreakdown::default(),
        updates: 0,
        skipped_updates: 0,
    };
    let mut sums = [0.0f64; 4];
    loop {
        let action = agent.act(obs.as_slice())?;
        record.knownness_sum += agent.knownness(obs.as_slice(), action)?;
        let t = env.step(action)?;
        on_transition(&t)?;
        if let Some(report) = agent.observe(&t)? {
            record.updates += 1;
            if report.skipped {
                record.skipped_updates += 1;
            }
            let l = report.losses;
            sums[0] += l.l_td;
            sums[1] += l.l_init;
            sums[2] += l.l_kl;
            sums[3] += l.total;
            record.losses.lambda_init = l.lambda_init;
            record.losses.lambda_kl = l.lambda_kl;
        }
        record.episode_return += t.reward;
        record.steps += 1;
        if t.done || t.truncated {
            record.done = t.done;
            record.truncated = t.truncated;
            break;
        }
        obs = t.next_state;
    }
    if record.updates > 0 {
        let n = f64::from(record.updates);
        record.losses.l_td = sums[0] / n;
        record.losses.l_init = sums[1] / n;
        record.losses.l_kl = sums[2] / n;
        record.losses.total = sums[3] / n;
    }
    agent.end_episode();
    Ok(record)
}

pub fn run_episode<R: Rng + ?Sized>(env: &mut Env, agent: &mut Agent, reset_rng: &mut R) -> Result<EpisodeRecord, AgentError> {
    run_episode_with(env, agent, reset_rng, |_| Ok(()))
}
