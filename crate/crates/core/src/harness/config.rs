use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::agent::{AgentConfig, BaselineSpec};
use crate::env::{EnvId, RewardScheme, TaskDistribution};
use crate::kb::InitStrategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    BuildKb,
    Transfer,
}

/// Where Q∅ comes from during transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SourceKind {
    #[default]
    Table,
    Models,
}

/// Full description of one experiment phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: EnvId,
    pub phase: Phase,
    pub n_tasks: usize,
    pub episodes: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Name used in output file names; derived from the run when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Reward the DQN learner sees.
    pub reward_scheme: RewardScheme,
    /// Reward of the parallel tabular learner (build phase).
    pub table_reward_scheme: RewardScheme,
    pub max_steps: u32,
    /// Standard deviation of the task distribution (velocity noise for
    /// mountain car, lengths otherwise).
    pub task_std: f64,
    pub tabular_alpha: f64,
    /// Keep trained source networks in a model archive.
    pub archive_models: bool,
    pub kb_path: PathBuf,
    pub archive_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<InitStrategy>,
    pub source: SourceKind,
    /// Moving-average window of the smoothed return column.
    pub smoothing_window: usize,
    /// Trailing window of the "[-N]" summary metrics.
    pub last_n: usize,
    pub agent: AgentConfig,
}

impl ExperimentConfig {
    /// Defaults for an environment and phase: desk-scale task counts, the
    /// per-environment hyperparameters and reward schemes.
    pub fn defaults(env: EnvId, phase: Phase) -> Self {
        let (build_episodes, transfer_episodes) = match env {
            EnvId::MountainCar => (2000, 1000),
            EnvId::Acrobot => (2000, 600),
            EnvId::CartPole => (1000, 100),
        };
        let source_reward = match env {
            EnvId::MountainCar => RewardScheme::Shaped,
            EnvId::Acrobot => RewardScheme::NegUntilGoal,
            EnvId::CartPole => RewardScheme::BinaryNonPenalizing,
        };
        let binary = match env {
            EnvId::CartPole => RewardScheme::BinaryNonPenalizing,
            _ => RewardScheme::BinarySuccess,
        };
        let (episodes, reward_scheme, strategy) = match phase {
            Phase::BuildKb => (build_episodes, source_reward, None),
            Phase::Transfer => {
                let s = match env {
                    EnvId::CartPole => InitStrategy::ucoi(),
                    _ => InitStrategy::log_q_init(),
                };
                (transfer_episodes, binary, Some(s))
            }
        };
        let dist = TaskDistribution::standard(env, binary);
        Self {
            env,
            phase,
            n_tasks: 30,
            episodes,
            master_seed: 0,
            output_dir: PathBuf::from("out"),
            label: None,
            reward_scheme,
            table_reward_scheme: binary,
            max_steps: env.default_max_steps(),
            task_std: dist.std,
            tabular_alpha: 0.1,
            archive_models: false,
            kb_path: PathBuf::from(format!("out/{}.dqkb", env.name())),
            archive_path: PathBuf::from(format!("out/{}.dqma", env.name())),
            strategy,
            source: SourceKind::Table,
            smoothing_window: 20,
            last_n: 100,
            agent: AgentConfig::for_env(env),
        }
    }

    /// Reads a TOML file over the defaults selected by its `env` and `phase`
    /// keys, then applies `key=value` overrides (dotted keys, TOML values).
    pub fn load(path: Option<&Path>, overrides: &[String], phase: Phase) -> Result<Self, HarnessError> {
        let mut user = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| HarnessError::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                text.parse::<toml::Table>()
                    .map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut user, o)?;
        }
        user.insert("phase".into(), toml::Value::String(format!("{phase:?}")));
        Self::from_table(user)
    }

    pub fn from_table(user: toml::Table) -> Result<Self, HarnessError> {
        let env: EnvId = match user.get("env") {
            Some(toml::Value::String(s)) => s.parse().map_err(|e| HarnessError::Config(format!("{e}")))?,
            Some(other) => return Err(HarnessError::Config(format!("`env` must be a string, got {other}"))),
            None => return Err(HarnessError::Config("missing `env`".into())),
        };
        let phase = match user.get("phase").and_then(toml::Value::as_str) {
            Some("BuildKb") | None => Phase::BuildKb,
            Some("Transfer") => Phase::Transfer,
            Some(other) => return Err(HarnessError::Config(format!("unknown phase `{other}`"))),
        };
        let mut merged = toml::Table::try_from(Self::defaults(env, phase))
            .map_err(|e| HarnessError::Config(format!("serializing defaults: {e}")))?;
        let mut user = user;
        user.insert("env".into(), toml::Value::String(format!("{env:?}")));
        merge(&mut merged, user);
        let config: ExperimentConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.n_tasks == 0 || self.episodes == 0 || self.max_steps == 0 {
            return bad("n_tasks, episodes and max_steps must be positive".into());
        }
        if self.smoothing_window == 0 || self.last_n == 0 {
            return bad("smoothing_window and last_n must be positive".into());
        }
        if !(self.tabular_alpha > 0.0 && self.tabular_alpha <= 1.0) {
            return bad(format!("tabular_alpha {} outside (0, 1]", self.tabular_alpha));
        }
        self.reward_scheme.check(self.env).map_err(|e| HarnessError::Config(e.to_string()))?;
        self.table_reward_scheme
            .check(self.env)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.task_distribution()
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.agent.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        let dqinit = self.agent.flags.any();
        match (self.phase, dqinit, self.strategy) {
            (Phase::Transfer, true, None) => return bad("DQInit transfer needs a `strategy`".into()),
            (Phase::BuildKb, true, _) => return bad("DQInit modes apply to the transfer phase only".into()),
            _ => {}
        }
        if let Some(s) = self.strategy {
            s.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        if self.phase == Phase::BuildKb && self.agent.baseline != BaselineSpec::None {
            return bad("baselines apply to the transfer phase only".into());
        }
        Ok(())
    }

    pub fn task_distribution(&self) -> TaskDistribution {
        let mut dist = TaskDistribution::standard(self.env, self.reward_scheme);
        dist.std = self.task_std;
        dist.max_steps = self.max_steps;
        dist
    }

    /// Output label: explicit, or env + strategy + modes / baseline.
    pub fn run_label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        let env = self.env.name();
        match self.phase {
            Phase::BuildKb => format!("{env}_build"),
            Phase::Transfer => {
                let mode = if self.agent.baseline != BaselineSpec::None {
                    self.agent.baseline.name().to_string()
                } else if self.agent.flags.any() {
                    let strategy = self.strategy.map(|s| s.name()).unwrap_or("none");
                    let source = match self.source {
                        SourceKind::Table => "",
                        SourceKind::Models => "_models",
                    };
                    format!("{strategy}{source}_{}", self.agent.flags.label().replace('+', "-"))
                } else {
                    "vanilla".into()
                };
                format!("{env}_{mode}_s{}", self.master_seed)
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Recursively overlays `src` onto `dst`.
fn merge(dst: &mut toml::Table, src: toml::Table) {
    for (k, v) in src {
        match (dst.get_mut(&k), v) {
            (Some(toml::Value::Table(d)), toml::Value::Table(s)) => merge(d, s),
            (_, v) => {
                dst.insert(k, v);
            }
        }
    }
}

/// Applies `a.b.c=value`; the value is parsed as TOML, falling back to a
/// bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), HarnessError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| HarnessError::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(HarnessError::Config(format!("bad override key `{key}`")));
    }
    let mut cursor = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(HarnessError::Config(format!("override `{key}`: `{part}` is not a table"))),
        };
    }
    cursor.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
