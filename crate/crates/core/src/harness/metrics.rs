use serde::{Deserialize, Serialize};

use crate::agent::EpisodeRecord;
use crate::env::TaskSpec;

/// Return scaled by the episode's average knownness; 0 for an empty episode.
pub fn theta_reward(record: &EpisodeRecord) -> f64 {
    if record.steps == 0 {
        return 0.0;
    }
    record.knownness_ratio() * record.episode_return
}

/// One task's transfer run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task_id: usize,
    pub task: TaskSpec,
    pub seed: u64,
    pub episodes: Vec<EpisodeRecord>,
    /// Updates skipped for non-finite gradients.
    pub skipped_updates: u64,
}

impl RunRecord {
    pub fn returns(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.episode_return).collect()
    }

    pub fn theta_rewards(&self) -> Vec<f64> {
        self.episodes.iter().map(theta_reward).collect()
    }

    pub fn knownness_ratios(&self) -> Vec<f64> {
        self.episodes.iter().map(EpisodeRecord::knownness_ratio).collect()
    }
}

/// Trailing moving average: entry i averages the last `window` values up to
/// and including i.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    assert!(window > 0, "window must be positive");
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, &v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Elementwise mean of equal-length curves.
pub fn mean_curve(curves: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = curves.first() else {
        return Vec::new();
    };
    let n = curves.len() as f64;
    (0..first.len())
        .map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / n)
        .collect()
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn tail(values: &[f64], n: usize) -> &[f64] {
    &values[values.len().saturating_sub(n)..]
}

/// Summary metrics of one configuration, averaged over tasks and episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub label: String,
    pub r_avg: f64,
    pub r_avg_last: f64,
    pub r_avg_theta: f64,
    pub r_avg_theta_last: f64,
    /// Mean episodic knownness ratio in percent.
    pub knownness_pct: f64,
    pub last_n: usize,
    pub n_tasks: usize,
    pub episodes: usize,
}

impl MetricsTable {
    pub fn from_runs(label: &str, runs: &[RunRecord], last_n: usize) -> Self {
        let returns = mean_curve(&runs.iter().map(RunRecord::returns).collect::<Vec<_>>());
        let theta = mean_curve(&runs.iter().map(RunRecord::theta_rewards).collect::<Vec<_>>());
        let ratio = mean_curve(&runs.iter().map(RunRecord::knownness_ratios).collect::<Vec<_>>());
        Self {
            label: label.to_string(),
            r_avg: mean(&returns),
            r_avg_last: mean(tail(&returns, last_n)),
            r_avg_theta: mean(&theta),
            r_avg_theta_last: mean(tail(&theta, last_n)),
            knownness_pct: 100.0 * mean(&ratio),
            last_n,
            n_tasks: runs.len(),
            episodes: returns.len(),
        }
    }
}
