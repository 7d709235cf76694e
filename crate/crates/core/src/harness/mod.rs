//! Experiment orchestration: knowledge-base construction on source tasks,
//! transfer runs, the knownness sweep, metrics and CSV output.

mod config;
mod metrics;
mod run;

pub use config::{apply_override, ExperimentConfig, Phase, SourceKind};
pub use metrics::{mean, mean_curve, moving_average, theta_reward, MetricsTable, RunRecord};
pub use run::{
    build_kb, build_kb_to_disk, run_transfer, run_transfer_task, sample_tasks, sweep_mp, train_source_task,
    write_sweep, write_transfer_outputs, BuildOutput, OutputPaths, TransferOutput, TransferSources, CURVE_COLUMNS,
};

use std::path::PathBuf;

use thiserror::Error;

use crate::agent::AgentError;
use crate::env::EnvError;
use crate::kb::KbError;
use crate::net::NetError;

pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_NUMERIC: i32 = 5;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error on {path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

impl HarnessError {
    /// Process exit code: 3 configuration, 4 I/O or file format, 5 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => EXIT_CONFIG,
            HarnessError::Io { .. } | HarnessError::Csv { .. } => EXIT_IO,
            HarnessError::Numeric(_) => EXIT_NUMERIC,
            HarnessError::Kb(e) => kb_code(e),
            HarnessError::Agent(e) => match e {
                AgentError::Config(_) | AgentError::Grid(_) => EXIT_CONFIG,
                AgentError::Env(EnvError::Diverged { .. }) => EXIT_NUMERIC,
                AgentError::Env(_) => EXIT_CONFIG,
                AgentError::Kb(e) => kb_code(e),
                AgentError::Net(NetError::NonFiniteGradient { .. } | NetError::Architecture(_)) => EXIT_NUMERIC,
                AgentError::Net(_) => EXIT_CONFIG,
            },
        }
    }
}

fn kb_code(e: &KbError) -> i32 {
    match e {
        KbError::Io { .. } | KbError::Corrupt { .. } | KbError::UnsupportedVersion { .. } => EXIT_IO,
        KbError::NonFinite(_) => EXIT_NUMERIC,
        _ => EXIT_CONFIG,
    }
}
