//! Acceptance criteria 1 to 9. Each test prints one PASS/FAIL line.
//!
//! The MountainCar study (one knowledge base, three master seeds of
//! DQInit and vanilla transfer, one model-source run) is computed once
//! and shared by criteria 4, 5, 7 and 8.

mod common;

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::{Arc, OnceLock};

use common::{check, init_reference, instance, kink_margin, kl_reference, reference_dqn, td_reference};
use dqinit::agent::{adaptive_q, blend, run_episode, Agent, AgentConfig, InitSource, ModeFlags};
use dqinit::env::{Env, EnvId, RewardScheme, TaskSpec};
use dqinit::grid::GridCodec;
use dqinit::harness::{build_kb, run_transfer, ExperimentConfig, Phase, SourceKind, TransferOutput, TransferSources};
use dqinit::kb::{kb_load, kb_save, InitStrategy, KnowledgeBase, QTable};
use dqinit::net::{init_loss, kl_loss, td_loss};
use dqinit::rng::{label, seeded_rng, stream_rng};
use rand::Rng;

fn report(n: u32, name: &str, passed: bool, detail: &str) {
    let line = format!(
        "acceptance {n} {} {name}: {detail}\n",
        if passed { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(passed, "criterion {n} ({name}) failed: {detail}");
}

// ---------------------------------------------------------------------------
// Shared MountainCar study.

const MC_SEEDS: [u64; 3] = [0, 1, 2];

struct Study {
    kb: Arc<KnowledgeBase>,
    sources: TransferSources,
    dqinit: Vec<TransferOutput>,
    vanilla: Vec<TransferOutput>,
}

fn mc_transfer_config(seed: u64, flags: ModeFlags) -> ExperimentConfig {
    let mut c = ExperimentConfig::defaults(EnvId::MountainCar, Phase::Transfer);
    c.n_tasks = 10;
    c.episodes = 300;
    c.master_seed = seed;
    c.strategy = Some(InitStrategy::log_q_init());
    c.agent.flags = flags;
    c
}

fn study() -> &'static Study {
    static STUDY: OnceLock<Study> = OnceLock::new();
    STUDY.get_or_init(|| {
        let mut build = ExperimentConfig::defaults(EnvId::MountainCar, Phase::BuildKb);
        build.n_tasks = 10;
        build.episodes = 500;
        build.master_seed = 0;
        build.archive_models = true;
        let out = build_kb(&build).unwrap();
        let kb = Arc::new(out.kb);
        let sources = TransferSources {
            kb: Some(kb.clone()),
            archive: out.archive.map(Arc::new),
        };
        let mut dqinit = Vec::new();
        let mut vanilla = Vec::new();
        for seed in MC_SEEDS {
            dqinit.push(run_transfer(&mc_transfer_config(seed, ModeFlags::ALL), &sources).unwrap());
            vanilla.push(run_transfer(&mc_transfer_config(seed, ModeFlags::VANILLA), &sources).unwrap());
        }
        Study {
            kb,
            sources,
            dqinit,
            vanilla,
        }
    })
}

fn cartpole_kb_and_run() -> &'static (Arc<KnowledgeBase>, TransferOutput) {
    static CP: OnceLock<(Arc<KnowledgeBase>, TransferOutput)> = OnceLock::new();
    CP.get_or_init(|| {
        let mut build = ExperimentConfig::defaults(EnvId::CartPole, Phase::BuildKb);
        build.n_tasks = 10;
        build.episodes = 100;
        let kb = Arc::new(build_kb(&build).unwrap().kb);
        let mut c = ExperimentConfig::defaults(EnvId::CartPole, Phase::Transfer);
        c.n_tasks = 10;
        c.episodes = 100;
        c.strategy = Some(InitStrategy::ucoi());
        c.agent.flags = ModeFlags::ALL;
        assert_eq!((c.agent.knownness.m, c.agent.knownness.p), (20, 1.0));
        let sources = TransferSources {
            kb: Some(kb.clone()),
            archive: None,
        };
        let out = run_transfer(&c, &sources).unwrap();
        (kb, out)
    })
}

/// Mean over tasks and over episodes `range` of a per-episode quantity.
fn window_mean(out: &TransferOutput, range: std::ops::Range<usize>, f: impl Fn(&dqinit::harness::RunRecord) -> Vec<f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for run in &out.runs {
        let v = f(run);
        for x in &v[range.clone()] {
            sum += x;
            n += 1;
        }
    }
    sum / n as f64
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_1_gradient_correctness() {
    let mut rng = seeded_rng(0xACC1);
    let mut worst = [0.0f64; 3];
    let mut accepted = 0;
    let mut skipped = 0;
    while accepted < 50 {
        let x = instance(rng.gen());
        if kink_margin(&x) <= 1e-4 {
            skipped += 1;
            continue;
        }
        accepted += 1;
        let td = td_loss(&x.net, &x.target, &x.batch, x.gamma).unwrap();
        worst[0] = worst[0].max(check(&td.grad, &x.net, |n| td_reference(&x, n)));
        let il = init_loss(&x.net, &x.batch, &x.blended).unwrap();
        worst[1] = worst[1].max(check(&il.grad, &x.net, |n| init_reference(&x, n)));
        let kl = kl_loss(&x.net, &x.batch, &x.init, x.tau).unwrap();
        worst[2] = worst[2].max(check(&kl.grad, &x.net, |n| kl_reference(&x, n)));
    }
    report(
        1,
        "gradient correctness",
        worst.iter().all(|&e| e < 1e-4),
        &format!(
            "50 instances per loss ({skipped} near-kink draws skipped), max relative error td {:.1e} init {:.1e} kl {:.1e}",
            worst[0], worst[1], worst[2]
        ),
    );
}

#[test]
fn criterion_2_tabular_oracle() {
    const N: usize = 5;
    let gamma = 0.9;
    let goal = N * N - 1;
    let step = |s: usize, a: usize| -> usize {
        let (r, c) = (s / N, s % N);
        let (r, c) = match a {
            0 => (r.saturating_sub(1), c),
            1 => ((r + 1).min(N - 1), c),
            2 => (r, c.saturating_sub(1)),
            _ => (r, (c + 1).min(N - 1)),
        };
        r * N + c
    };
    // Value iteration on Q.
    let mut q_star = vec![0.0f64; N * N * 4];
    loop {
        let mut next = q_star.clone();
        for s in (0..N * N).filter(|&s| s != goal) {
            for a in 0..4 {
                let s2 = step(s, a);
                next[s * 4 + a] = if s2 == goal {
                    1.0
                } else {
                    gamma * (0..4).map(|b| q_star[s2 * 4 + b]).fold(f64::MIN, f64::max)
                };
            }
        }
        let delta = next.iter().zip(&q_star).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        q_star = next;
        if delta < 1e-12 {
            break;
        }
    }
    // Tabular updates on uniformly random transitions.
    let mut table = QTable::with_shape(N * N * 4, 4, 0, 0.5, gamma);
    let mut rng = seeded_rng(0xACC2);
    for _ in 0..200_000 {
        let s = rng.gen_range(0..N * N - 1);
        let a = rng.gen_range(0..4);
        let s2 = step(s, a);
        if s2 == goal {
            table.update(s * 4 + a, 1.0, None).unwrap();
        } else {
            let next: Vec<usize> = (0..4).map(|b| s2 * 4 + b).collect();
            table.update(s * 4 + a, 0.0, Some(&next)).unwrap();
        }
    }
    let gap = (0..N * N * 4)
        .filter(|c| c / 4 != goal)
        .map(|c| (table.value(c) - q_star[c]).abs())
        .fold(0.0, f64::max);
    report(2, "tabular oracle", gap < 1e-2, &format!("max-norm gap to value iteration {gap:.2e}"));
}

#[test]
fn criterion_3_endpoint_identities() {
    let mut rng = seeded_rng(0xACC3);
    let mut exact = true;
    for _ in 0..10_000 {
        let qt: Vec<f64> = (0..3).map(|_| rng.gen_range(-1e4..1e4)).collect();
        let q0: Vec<f64> = (0..3).map(|_| rng.gen_range(-1e4..1e4)).collect();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        exact &= bits(&adaptive_q(&qt, &q0, &[0.0; 3])) == bits(&q0);
        exact &= bits(&adaptive_q(&qt, &q0, &[1.0; 3])) == bits(&qt);
        exact &= blend(qt[0], q0[0], 0.0).to_bits() == q0[0].to_bits();
        exact &= blend(qt[0], q0[0], 1.0).to_bits() == qt[0].to_bits();
    }

    // All-false flags, with an initialization source attached, against a
    // plain DQN loop driven by the same streams.
    let task = TaskSpec::standard(EnvId::CartPole, RewardScheme::BinaryNonPenalizing, 23);
    let mut config = AgentConfig::for_env(EnvId::CartPole);
    config.batch_size = 32;
    let (ref_returns, ref_params) = reference_dqn(&config, task, 20);
    let codec = GridCodec::for_env(EnvId::CartPole);
    let mut kb = KnowledgeBase::new(codec.clone());
    let mut t = QTable::new(&codec, 1.0, 0.99);
    for cell in 0..1000 {
        t.update(cell, rng.gen_range(0.0..5.0), None).unwrap();
    }
    kb.absorb(&t).unwrap();
    let init = InitSource::from_kb(Arc::new(kb), InitStrategy::MaxQInit).unwrap();
    let mut agent = Agent::new(config, codec, init, task.seed).unwrap();
    let mut env = Env::new(task).unwrap();
    let mut reset = stream_rng(task.seed, label::RESET);
    let returns: Vec<f64> = (0..20)
        .map(|_| run_episode(&mut env, &mut agent, &mut reset).unwrap().episode_return)
        .collect();
    let same_params = agent
        .net()
        .params()
        .iter()
        .zip(&ref_params)
        .all(|(a, b)| a.to_bits() == b.to_bits());
    let identical = returns == ref_returns && same_params;
    report(
        3,
        "endpoint identities",
        exact && identical,
        &format!(
            "K=0/K=1 bit-exact on 10000 vectors: {exact}; all-false run identical to plain DQN over 20 episodes: {identical}"
        ),
    );
}

fn ordering_violations(kb: &KnowledgeBase) -> (usize, usize) {
    let log = kb.init_table(&InitStrategy::log_q_init()).unwrap();
    let ucoi = kb.init_table(&InitStrategy::ucoi()).unwrap();
    let max = kb.init_table(&InitStrategy::MaxQInit).unwrap();
    let mean = kb.mean();
    let mut checked = 0;
    let mut bad = 0;
    for c in 0..kb.total_cells() {
        if kb.n_with_value()[c] == 0 {
            continue;
        }
        checked += 1;
        let tol = 1e-12 * max[c].abs().max(1.0);
        if !(log[c] <= mean[c] + tol && mean[c] <= ucoi[c] + tol && ucoi[c] <= max[c] + tol) {
            bad += 1;
        }
    }
    (checked, bad)
}

#[test]
fn criterion_4_initialization_ordering() {
    let kbs: Vec<(&str, &KnowledgeBase)> =
        vec![("mountaincar", &*study().kb), ("cartpole", &*cartpole_kb_and_run().0)];
    let mut detail = Vec::new();
    let mut ok = true;
    for (name, kb) in kbs {
        let (checked, bad) = ordering_violations(kb);
        ok &= bad == 0 && checked > 0;
        detail.push(format!("{name}: {bad} violations over {checked} cells"));
    }
    report(4, "initialization ordering", ok, &detail.join("; "));
}

#[test]
fn criterion_5_jumpstart() {
    let s = study();
    let first = |outs: &[TransferOutput]| {
        outs.iter().map(|o| window_mean(o, 0..50, |r| r.returns())).sum::<f64>() / outs.len() as f64
    };
    let (d, v) = (first(&s.dqinit), first(&s.vanilla));
    report(
        5,
        "jumpstart",
        d - v >= 0.1,
        &format!("first-50 mean return over seeds {MC_SEEDS:?}: DQInit {d:.3}, vanilla {v:.3}, margin {:.3} (need >= 0.1)", d - v),
    );
}

#[test]
fn criterion_6_cartpole_band() {
    let (_, out) = cartpole_kb_and_run();
    let last = out.metrics.r_avg_last;
    report(
        6,
        "cartpole band",
        last >= 150.0,
        &format!("final-100 mean return {last:.2} (need >= 150)"),
    );
}

#[test]
fn criterion_7_theta_dependence() {
    let s = study();
    let ratio = |range: std::ops::Range<usize>| {
        let theta: f64 = s.dqinit.iter().map(|o| window_mean(o, range.clone(), |r| r.theta_rewards())).sum();
        let ret: f64 = s.dqinit.iter().map(|o| window_mean(o, range.clone(), |r| r.returns())).sum();
        theta / ret
    };
    let (first, last) = (ratio(0..50), ratio(250..300));
    report(
        7,
        "theta dependence",
        last >= 0.7 && last > first,
        &format!("R_avg(theta)/R_avg first 50 {first:.3}, last 50 {last:.3} (need last >= 0.7 and > first)"),
    );
}

#[test]
fn criterion_8_source_ablation() {
    let s = study();
    let mut c = mc_transfer_config(MC_SEEDS[0], ModeFlags::ALL);
    c.source = SourceKind::Models;
    let models = run_transfer(&c, &s.sources).unwrap();
    let table = s.dqinit[0].metrics.r_avg_last;
    let net = models.metrics.r_avg_last;
    report(
        8,
        "source ablation",
        table >= 0.9 * net,
        &format!("final-100 mean return: tabular kb {table:.3}, model archive {net:.3} (need tabular >= 0.9 x archive)"),
    );
}

fn run_cli(dir: &Path, args: &[&str]) {
    let o = Command::new(env!("CARGO_BIN_EXE_dqinit"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn pipeline(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let small = [
        "--seed", "7", "--set", "n_tasks=3", "--set", "episodes=5", "--set", "agent.batch_size=16",
    ];
    let mut build = vec!["build-kb", "--env", "cartpole", "--out", "out"];
    build.extend(small);
    run_cli(dir, &build);
    let mut transfer = vec!["transfer", "--env", "cartpole", "--out", "out", "--modes", "pi+L+KL"];
    transfer.extend(small);
    run_cli(dir, &transfer);
    let mut vanilla = vec!["transfer", "--env", "cartpole", "--out", "out", "--modes", "vanilla"];
    vanilla.extend(small);
    run_cli(dir, &vanilla);
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.join("out"))
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_9_determinism_and_persistence() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let fa = pipeline(a.path());
    let fb = pipeline(b.path());
    let identical = fa == fb;
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();

    let mut build = ExperimentConfig::defaults(EnvId::MountainCar, Phase::BuildKb);
    build.n_tasks = 2;
    build.episodes = 3;
    let kb = build_kb(&build).unwrap().kb;
    let path = a.path().join("rt.dqkb");
    kb_save(&kb, &path).unwrap();
    let codec = GridCodec::for_env(EnvId::MountainCar);
    let lossless = kb_load(&path, Some(&codec)).unwrap() == kb;

    let bytes = std::fs::read(&path).unwrap();
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x40;
    std::fs::write(&path, &flipped).unwrap();
    let rejects_flip = kb_load(&path, Some(&codec)).is_err();
    std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
    let rejects_truncated = kb_load(&path, Some(&codec)).is_err();

    report(
        9,
        "determinism and persistence",
        identical && lossless && rejects_flip && rejects_truncated && names.len() >= 7,
        &format!(
            "repeat run byte-identical over {} files: {identical}; round trip lossless: {lossless}; corrupted rejected: {}",
            names.len(),
            rejects_flip && rejects_truncated
        ),
    );
}
