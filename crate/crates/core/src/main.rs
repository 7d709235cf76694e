use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use dqinit::grid::GridCodec;
use dqinit::harness::{
    build_kb_to_disk, run_transfer, sweep_mp, write_sweep, write_transfer_outputs, ExperimentConfig,
    HarnessError, Phase, SourceKind, TransferSources,
};
use dqinit::kb::{archive_load, kb_load, InitStrategy};

#[derive(Parser)]
#[command(name = "dqinit", version, about = "Knowledge-base value initialization for deep Q-learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set agent.knownness.m=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Environment (shorthand for `--set env=...`).
    #[arg(long)]
    env: Option<String>,
    /// Master seed (shorthand for `--set master_seed=...`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (shorthand for `--set output_dir=...`).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self, phase: Phase, extra: Vec<String>) -> Result<ExperimentConfig, HarnessError> {
        let mut overrides = Vec::new();
        if let Some(env) = &self.env {
            overrides.push(format!("env=\"{env}\""));
        }
        if let Some(seed) = self.seed {
            overrides.push(format!("master_seed={seed}"));
        }
        if let Some(out) = &self.out {
            overrides.push(format!("output_dir={}", toml_str(out)));
        }
        overrides.extend(extra);
        overrides.extend(self.overrides.iter().cloned());
        ExperimentConfig::load(self.config.as_deref(), &overrides, phase)
    }
}

fn toml_str(p: &Path) -> String {
    toml::Value::String(p.display().to_string()).to_string()
}

#[derive(Args)]
struct TransferArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Knowledge-base file (required for DQInit and JSRL).
    #[arg(long)]
    kb: Option<PathBuf>,
    /// Model archive (required for distillation and the model source).
    #[arg(long)]
    archive: Option<PathBuf>,
    /// Initialization strategy: maxqinit, ucoi[:delta], logqinit[:floor].
    #[arg(long)]
    strategy: Option<String>,
    /// Modes: any of pi, L, KL joined by '+', or `vanilla`.
    #[arg(long)]
    modes: Option<String>,
}

impl TransferArgs {
    fn load(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut extra = Vec::new();
        if let Some(m) = &self.modes {
            let set: Vec<String> = m.split('+').map(|s| s.trim().to_ascii_lowercase()).collect();
            let known = ["pi", "l", "kl", "vanilla"];
            if let Some(bad) = set.iter().find(|s| !known.contains(&s.as_str())) {
                return Err(HarnessError::Config(format!("unknown mode `{bad}`")));
            }
            for (flag, name) in [("use_pi_tilde", "pi"), ("use_init_loss", "l"), ("use_kl", "kl")] {
                extra.push(format!("agent.flags.{flag}={}", set.iter().any(|s| s == name)));
            }
        }
        let mut config = self.config.load(Phase::Transfer, extra)?;
        if let Some(s) = &self.strategy {
            config.strategy = Some(InitStrategy::parse(s)?);
        }
        if let Some(p) = &self.kb {
            config.kb_path = p.clone();
        }
        if let Some(p) = &self.archive {
            config.archive_path = p.clone();
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train source tasks and write the knowledge base.
    BuildKb {
        #[command(flatten)]
        config: ConfigArgs,
        /// Also keep the trained networks in a model archive.
        #[arg(long)]
        archive_models: bool,
    },
    /// Run transfer tasks and write curve and summary CSVs.
    Transfer(TransferArgs),
    /// Transfer runs over a grid of knownness parameters.
    Sweep {
        #[command(flatten)]
        transfer: TransferArgs,
        #[arg(long, value_delimiter = ',', default_values_t = vec![20u32, 50, 100])]
        m: Vec<u32>,
        #[arg(long, value_delimiter = ',')]
        p: Vec<f64>,
    },
    /// Print a knowledge-base header and its coverage.
    InspectKb { path: PathBuf },
    /// Run the built-in invariant checks.
    Verify,
}

/// Loads the sources the transfer configuration needs.
fn load_sources(config: &ExperimentConfig) -> Result<TransferSources, HarnessError> {
    let codec = GridCodec::for_env(config.env);
    let needs_kb = (config.agent.flags.any() && config.source == SourceKind::Table)
        || matches!(config.agent.baseline, dqinit::agent::BaselineSpec::Jsrl { .. });
    let needs_archive = (config.agent.flags.any() && config.source == SourceKind::Models)
        || matches!(config.agent.baseline, dqinit::agent::BaselineSpec::Distill { .. });
    let mut sources = TransferSources::default();
    if needs_kb {
        if !config.kb_path.exists() {
            return Err(HarnessError::Config(format!(
                "knowledge base {} not found (run build-kb or pass --kb)",
                config.kb_path.display()
            )));
        }
        sources.kb = Some(Arc::new(kb_load(&config.kb_path, Some(&codec))?));
    }
    if needs_archive {
        if !config.archive_path.exists() {
            return Err(HarnessError::Config(format!(
                "model archive {} not found (run build-kb --archive-models or pass --archive)",
                config.archive_path.display()
            )));
        }
        sources.archive = Some(Arc::new(archive_load(&config.archive_path)?));
    }
    Ok(sources)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::BuildKb { config, archive_models } => {
            let mut extra = Vec::new();
            if archive_models {
                extra.push("archive_models=true".to_string());
            }
            let config = config.load(Phase::BuildKb, extra)?;
            let out = build_kb_to_disk(&config)?;
            println!(
                "knowledge base: {} ({} tasks, {} excluded, coverage {:.2}%)",
                config.kb_path.display(),
                out.kb.n_tasks(),
                out.excluded.len(),
                100.0 * out.kb.coverage()
            );
            if out.archive.is_some() {
                println!("model archive: {}", config.archive_path.display());
            }
        }
        Command::Transfer(args) => {
            let config = args.load()?;
            let sources = load_sources(&config)?;
            let out = run_transfer(&config, &sources)?;
            let paths = write_transfer_outputs(&config, &out, &config.output_dir)?;
            let m = &out.metrics;
            println!(
                "{}: R_avg {:.4}  R_avg[-{n}] {:.4}  R_avg(θ) {:.4}  R_avg(θ)[-{n}] {:.4}  K% {:.2}",
                m.label,
                m.r_avg,
                m.r_avg_last,
                m.r_avg_theta,
                m.r_avg_theta_last,
                m.knownness_pct,
                n = m.last_n
            );
            println!("wrote {}, {}, {}", paths.curves.display(), paths.mean.display(), paths.summary.display());
        }
        Command::Sweep { transfer, m, p } => {
            let config = transfer.load()?;
            let p = if p.is_empty() {
                match config.env {
                    dqinit::env::EnvId::CartPole => vec![4.0, 10.0, 1.0],
                    _ => vec![4.0, 10.0, 20.0],
                }
            } else {
                p
            };
            let sources = load_sources(&config)?;
            let rows = sweep_mp(&config, &sources, &m, &p)?;
            for (k, t) in &rows {
                println!(
                    "m={:<4} p={:<4} R_avg {:.4}  R_avg[-{n}] {:.4}  R_avg(θ) {:.4}  R_avg(θ)[-{n}] {:.4}  K% {:.2}",
                    k.m,
                    k.p,
                    t.r_avg,
                    t.r_avg_last,
                    t.r_avg_theta,
                    t.r_avg_theta_last,
                    t.knownness_pct,
                    n = t.last_n
                );
            }
            let path = write_sweep(&config, &rows, &config.output_dir)?;
            println!("wrote {}", path.display());
        }
        Command::InspectKb { path } => {
            let kb = kb_load(&path, None)?;
            let codec = kb.codec();
            println!("file: {}", path.display());
            println!("format version: {}", dqinit::kb::FORMAT_VERSION);
            println!("environment: {}", codec.env_id.name());
            println!("grid: {codec}");
            println!(
                "cells: {} states x {} actions = {}",
                codec.num_states(),
                codec.num_actions(),
                codec.total_cells()
            );
            println!("log floor: {:e}", kb.log_floor());
            println!("n_tasks: {}", kb.n_tasks());
            println!("coverage: {:.2}%", 100.0 * kb.coverage());
        }
        Command::Verify => {
            let report = dqinit::verify::run_all();
            for check in &report {
                println!("{} {}: {}", if check.passed { "PASS" } else { "FAIL" }, check.name, check.detail);
            }
            if report.iter().any(|c| !c.passed) {
                return Err(HarnessError::Numeric("invariant suite failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
