use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use super::config::{ExperimentConfig, Phase, SourceKind};
use super::metrics::{mean_curve, moving_average, theta_reward, MetricsTable, RunRecord};
use super::HarnessError;
use crate::agent::{run_episode_with, Agent, AgentError, BaselineSpec, Expert, InitSource};
use crate::env::{map_reward, sample_task, Env, RewardScheme, TaskSpec};
use crate::grid::{GridCodec, KnownnessParams};
use crate::kb::{archive_save, kb_save, InitStrategy, KbError, KnowledgeBase, ModelArchive, QTable};
use crate::net::QNetwork;
use crate::rng::{label, stream_rng};

pub const CURVE_COLUMNS: [&str; 9] = [
    "task_id",
    "episode",
    "return",
    "smoothed_return",
    "knownness_ratio",
    "theta_reward",
    "l_td",
    "l_init",
    "l_kl",
];

/// Tasks of a phase, drawn in order from the master seed's task stream.
pub fn sample_tasks(config: &ExperimentConfig, stream: u64) -> Result<Vec<TaskSpec>, HarnessError> {
    let dist = config.task_distribution();
    let mut rng = stream_rng(config.master_seed, stream);
    (0..config.n_tasks)
        .map(|_| sample_task(&dist, &mut rng).map_err(|e| HarnessError::Config(e.to_string())))
        .collect()
}

/// Trains a DQN on one source task with a tabular learner fed the same
/// transitions under the table reward scheme.
pub fn train_source_task(config: &ExperimentConfig, task: &TaskSpec) -> Result<(QTable, QNetwork), AgentError> {
    let codec = GridCodec::for_env(config.env);
    let mut agent = Agent::new(config.agent.clone(), codec.clone(), InitSource::None, task.seed)?;
    let mut table = QTable::new(&codec, config.tabular_alpha, config.agent.gamma);
    let mut env = Env::new(*task)?;
    let mut reset_rng = stream_rng(task.seed, label::RESET);
    let scheme = config.table_reward_scheme;
    for _ in 0..config.episodes {
        run_episode_with(&mut env, &mut agent, &mut reset_rng, |t| {
            let cell = codec.encode(t.state.as_slice(), t.action)?;
            let r = map_reward(scheme, config.env, &t.outcome, &t.state, &t.next_state)?;
            if t.done {
                table.update(cell, r, None)?;
            } else {
                let next = codec.encode_all(t.next_state.as_slice())?;
                table.update(cell, r, Some(&next))?;
            }
            Ok(())
        })?;
    }
    if scheme == RewardScheme::BinarySuccess {
        debug_assert!(
            table.values().iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)),
            "binary-reward table values must lie in [0, 1]"
        );
    }
    Ok((table, agent.net().clone()))
}

/// Knowledge base (and optional model archive) built from the source phase.
#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub kb: KnowledgeBase,
    pub archive: Option<ModelArchive>,
    pub tasks: Vec<TaskSpec>,
    /// Indices of tasks dropped after a numeric failure.
    pub excluded: Vec<usize>,
}

pub fn build_kb(config: &ExperimentConfig) -> Result<BuildOutput, HarnessError> {
    if config.phase != Phase::BuildKb {
        return Err(HarnessError::Config("build_kb needs phase = BuildKb".into()));
    }
    config.validate()?;
    let tasks = sample_tasks(config, label::TASKS_BUILD)?;
    let results: Vec<_> = tasks
        .par_iter()
        .map(|task| train_source_task(config, task))
        .collect();
    let codec = GridCodec::for_env(config.env);
    let mut kb = KnowledgeBase::new(codec);
    let mut archive = config.archive_models.then(ModelArchive::new);
    let mut excluded = Vec::new();
    for (i, result) in results.into_iter().enumerate() {
        match result {
            Ok((table, net)) => {
                kb.absorb(&table)?;
                if let Some(a) = archive.as_mut() {
                    a.push(net)?;
                }
            }
            Err(e) if is_numeric(&e) => {
                log::warn!("source task {i} excluded: {e}");
                excluded.push(i);
            }
            Err(e) => return Err(e.into()),
        }
    }
    if kb.n_tasks() == 0 {
        return Err(HarnessError::Numeric("every source task failed numerically".into()));
    }
    Ok(BuildOutput {
        kb,
        archive,
        tasks,
        excluded,
    })
}

fn is_numeric(e: &AgentError) -> bool {
    use crate::env::EnvError;
    use crate::net::NetError;
    matches!(
        e,
        AgentError::Env(EnvError::Diverged { .. })
            | AgentError::Net(NetError::NonFiniteGradient { .. })
            | AgentError::Net(NetError::Architecture(_))
            | AgentError::Kb(KbError::NonFinite(_))
    )
}

/// Builds and persists the knowledge base (and archive when enabled).
pub fn build_kb_to_disk(config: &ExperimentConfig) -> Result<BuildOutput, HarnessError> {
    let out = build_kb(config)?;
    create_parent(&config.kb_path)?;
    kb_save(&out.kb, &config.kb_path)?;
    if let Some(a) = &out.archive {
        create_parent(&config.archive_path)?;
        archive_save(a, &config.archive_path)?;
    }
    Ok(out)
}

fn create_parent(path: &Path) -> Result<(), HarnessError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|source| HarnessError::Io {
            path: p.to_path_buf(),
            source,
        }),
        _ => Ok(()),
    }
}

/// Inputs shared by every transfer task.
#[derive(Debug, Clone, Default)]
pub struct TransferSources {
    pub kb: Option<Arc<KnowledgeBase>>,
    pub archive: Option<Arc<ModelArchive>>,
}

fn init_source(config: &ExperimentConfig, sources: &TransferSources) -> Result<InitSource, HarnessError> {
    if !config.agent.flags.any() {
        return Ok(InitSource::None);
    }
    let strategy = config
        .strategy
        .ok_or_else(|| HarnessError::Config("DQInit transfer needs a `strategy`".into()))?;
    Ok(match config.source {
        SourceKind::Table => {
            let kb = sources
                .kb
                .clone()
                .ok_or_else(|| HarnessError::Config("DQInit transfer needs a knowledge base".into()))?;
            InitSource::from_kb(kb, strategy)?
        }
        SourceKind::Models => {
            let archive = sources
                .archive
                .clone()
                .ok_or_else(|| HarnessError::Config("model-source transfer needs a model archive".into()))?;
            InitSource::from_models(archive, strategy)?
        }
    })
}

fn check_sources(config: &ExperimentConfig, sources: &TransferSources) -> Result<(), HarnessError> {
    let codec = GridCodec::for_env(config.env);
    if let Some(kb) = &sources.kb {
        if kb.codec().fingerprint() != codec.fingerprint() {
            return Err(KbError::FingerprintMismatch {
                expected: codec.to_string(),
                found: kb.codec().to_string(),
            }
            .into());
        }
    }
    match config.agent.baseline {
        BaselineSpec::Distill { .. } if sources.archive.is_none() => {
            Err(HarnessError::Config("distillation baseline needs a model archive".into()))
        }
        BaselineSpec::Jsrl { .. } if sources.kb.is_none() => {
            Err(HarnessError::Config("JSRL baseline needs a knowledge base for its expert".into()))
        }
        _ => Ok(()),
    }
}

/// Runs one transfer task from a fresh agent.
pub fn run_transfer_task(
    config: &ExperimentConfig,
    task_id: usize,
    task: &TaskSpec,
    init: &InitSource,
    sources: &TransferSources,
) -> Result<RunRecord, HarnessError> {
    let codec = GridCodec::for_env(config.env);
    let mut agent = Agent::new(config.agent.clone(), codec, init.clone(), task.seed)?;
    match config.agent.baseline {
        BaselineSpec::Jsrl { .. } => {
            let kb = sources.kb.as_ref().expect("checked sources");
            let values = kb.init_table(&InitStrategy::MaxQInit)?;
            agent = agent.with_expert(Expert::Table(Arc::new(values)));
        }
        BaselineSpec::Distill { .. } => {
            let archive = sources.archive.clone().expect("checked sources");
            agent = agent.with_teacher(archive)?;
        }
        BaselineSpec::None => {}
    }
    let mut env = Env::new(*task).map_err(AgentError::from)?;
    let mut reset_rng = stream_rng(task.seed, label::RESET);
    let mut episodes = Vec::with_capacity(config.episodes);
    let mut skipped = 0u64;
    for _ in 0..config.episodes {
        let rec = run_episode_with(&mut env, &mut agent, &mut reset_rng, |_| Ok(()))?;
        skipped += u64::from(rec.skipped_updates);
        episodes.push(rec);
    }
    if skipped > 0 {
        log::warn!("task {task_id}: {skipped} updates skipped for non-finite gradients");
    }
    Ok(RunRecord {
        task_id,
        task: *task,
        seed: task.seed,
        episodes,
        skipped_updates: skipped,
    })
}

#[derive(Debug, Clone)]
pub struct TransferOutput {
    pub label: String,
    pub runs: Vec<RunRecord>,
    pub metrics: MetricsTable,
}

pub fn run_transfer(config: &ExperimentConfig, sources: &TransferSources) -> Result<TransferOutput, HarnessError> {
    if config.phase != Phase::Transfer {
        return Err(HarnessError::Config("run_transfer needs phase = Transfer".into()));
    }
    config.validate()?;
    check_sources(config, sources)?;
    let init = init_source(config, sources)?;
    let tasks = sample_tasks(config, label::TASKS_TRANSFER)?;
    let runs = tasks
        .par_iter()
        .enumerate()
        .map(|(i, task)| run_transfer_task(config, i, task, &init, sources))
        .collect::<Result<Vec<_>, _>>()?;
    let label = config.run_label();
    let metrics = MetricsTable::from_runs(&label, &runs, config.last_n);
    Ok(TransferOutput { label, runs, metrics })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn open_with_comments(path: &Path, comments: &[String]) -> Result<csv::Writer<fs::File>, HarnessError> {
    create_parent(path)?;
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    for c in comments {
        writeln!(file, "# {c}").map_err(io_err(path))?;
    }
    Ok(csv::Writer::from_writer(file))
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Paths written by [`write_transfer_outputs`].
#[derive(Debug, Clone)]
pub struct OutputPaths {
    pub curves: PathBuf,
    pub mean: PathBuf,
    pub summary: PathBuf,
}

/// Writes `curves_<label>.csv` (one row per task and episode),
/// `mean_<label>.csv` (curves averaged over tasks) and `summary_<label>.csv`.
pub fn write_transfer_outputs(
    config: &ExperimentConfig,
    out: &TransferOutput,
    dir: &Path,
) -> Result<OutputPaths, HarnessError> {
    let window = config.smoothing_window;
    let comments = [format!("smoothing_window={window}")];
    let curves = dir.join(format!("curves_{}.csv", out.label));
    let mut w = open_with_comments(&curves, &comments)?;
    w.write_record(CURVE_COLUMNS).map_err(csv_err(&curves))?;
    for run in &out.runs {
        let smoothed = moving_average(&run.returns(), window);
        for (e, rec) in run.episodes.iter().enumerate() {
            w.write_record([
                run.task_id.to_string(),
                e.to_string(),
                num(rec.episode_return),
                num(smoothed[e]),
                num(rec.knownness_ratio()),
                num(theta_reward(rec)),
                num(rec.losses.l_td),
                num(rec.losses.l_init),
                num(rec.losses.l_kl),
            ])
            .map_err(csv_err(&curves))?;
        }
    }
    w.flush().map_err(io_err(&curves))?;

    let mean = dir.join(format!("mean_{}.csv", out.label));
    let mut w = open_with_comments(&mean, &[comments[0].clone(), format!("tasks={}", out.runs.len())])?;
    w.write_record(&CURVE_COLUMNS[1..]).map_err(csv_err(&mean))?;
    let per = |f: &dyn Fn(&RunRecord) -> Vec<f64>| mean_curve(&out.runs.iter().map(f).collect::<Vec<_>>());
    let ret = per(&RunRecord::returns);
    let smoothed = moving_average(&ret, window);
    let ratio = per(&RunRecord::knownness_ratios);
    let theta = per(&RunRecord::theta_rewards);
    let l_td = per(&|r| r.episodes.iter().map(|e| e.losses.l_td).collect());
    let l_init = per(&|r| r.episodes.iter().map(|e| e.losses.l_init).collect());
    let l_kl = per(&|r| r.episodes.iter().map(|e| e.losses.l_kl).collect());
    for e in 0..ret.len() {
        w.write_record([
            e.to_string(),
            num(ret[e]),
            num(smoothed[e]),
            num(ratio[e]),
            num(theta[e]),
            num(l_td[e]),
            num(l_init[e]),
            num(l_kl[e]),
        ])
        .map_err(csv_err(&mean))?;
    }
    w.flush().map_err(io_err(&mean))?;

    let summary = dir.join(format!("summary_{}.csv", out.label));
    write_summary(&summary, config, &[(config.agent.knownness, out.metrics.clone())])?;
    Ok(OutputPaths { curves, mean, summary })
}

fn write_summary(
    path: &Path,
    config: &ExperimentConfig,
    rows: &[(KnownnessParams, MetricsTable)],
) -> Result<(), HarnessError> {
    let mut w = open_with_comments(path, &[])?;
    w.write_record([
        "label",
        "env",
        "strategy",
        "modes",
        "baseline",
        "m",
        "p",
        "n_tasks",
        "episodes",
        "r_avg",
        "r_avg_last",
        "r_avg_theta",
        "r_avg_theta_last",
        "knownness_pct",
        "last_n",
    ])
    .map_err(csv_err(path))?;
    for (k, m) in rows {
        w.write_record([
            m.label.clone(),
            config.env.name().to_string(),
            config.strategy.map(|s| s.name().to_string()).unwrap_or_default(),
            config.agent.flags.label(),
            config.agent.baseline.name().to_string(),
            k.m.to_string(),
            num(k.p),
            m.n_tasks.to_string(),
            m.episodes.to_string(),
            num(m.r_avg),
            num(m.r_avg_last),
            num(m.r_avg_theta),
            num(m.r_avg_theta_last),
            num(m.knownness_pct),
            m.last_n.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Transfer runs over the (m, p) cross product; one metrics row each, in
/// `m`-major order.
pub fn sweep_mp(
    config: &ExperimentConfig,
    sources: &TransferSources,
    m_list: &[u32],
    p_list: &[f64],
) -> Result<Vec<(KnownnessParams, MetricsTable)>, HarnessError> {
    let base = config.run_label();
    let mut rows = Vec::with_capacity(m_list.len() * p_list.len());
    for &m in m_list {
        for &p in p_list {
            let knownness = KnownnessParams::new(m, p).map_err(|e| HarnessError::Config(e.to_string()))?;
            let mut c = config.clone();
            c.agent.knownness = knownness;
            c.label = Some(format!("{base}_m{m}_p{p}"));
            let out = run_transfer(&c, sources)?;
            rows.push((knownness, out.metrics));
        }
    }
    Ok(rows)
}

pub fn write_sweep(
    config: &ExperimentConfig,
    rows: &[(KnownnessParams, MetricsTable)],
    dir: &Path,
) -> Result<PathBuf, HarnessError> {
    let path = dir.join(format!("sweep_{}.csv", config.run_label()));
    write_summary(&path, config, rows)?;
    Ok(path)
}
