//! Self-contained invariant checks run by the `verify` subcommand.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{adaptive_q, Agent, AgentConfig, InitSource, ModeFlags};
use crate::env::{Env, EnvId, MountainCarState, RewardScheme, TaskSpec};
use crate::grid::GridCodec;
use crate::kb::{kb_load, kb_save, InitStrategy, KnowledgeBase, QTable};
use crate::net::{init_loss, kl_loss, td_loss, Batch, QNetwork};
use crate::rng::seeded_rng;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, result: Result<String, String>) -> Check {
    match result {
        Ok(detail) => Check {
            name,
            passed: true,
            detail,
        },
        Err(detail) => Check {
            name,
            passed: false,
            detail,
        },
    }
}

pub fn run_all() -> Vec<Check> {
    vec![
        check("gradient/td", gradient_check(Loss::Td, 10)),
        check("gradient/init", gradient_check(Loss::Init, 10)),
        check("gradient/kl", gradient_check(Loss::Kl, 10)),
        check("tabular/gridworld", gridworld_check()),
        check("adaptive/endpoints", endpoint_check()),
        check("kb/ordering", ordering_check()),
        check("env/mountain-car-step", mountain_car_check()),
        check("kb/round-trip", round_trip_check()),
        check("agent/determinism", determinism_check()),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    Td,
    Init,
    Kl,
}

/// A random network and batch for gradient checks.
pub fn random_instance(rng: &mut ChaCha8Rng, batch: usize) -> (QNetwork, QNetwork, Batch, Vec<f64>, Array2<f64>) {
    let inputs = rng.gen_range(1..5);
    let actions = rng.gen_range(2..5);
    let hidden = rng.gen_range(2..7);
    let dims = [inputs, hidden, hidden, actions];
    let net = QNetwork::random(&dims, rng);
    let target = QNetwork::random(&dims, rng);
    let states = Array2::from_shape_fn((batch, inputs), |_| rng.gen_range(-1.0..1.0));
    let next_states = Array2::from_shape_fn((batch, inputs), |_| rng.gen_range(-1.0..1.0));
    let b = Batch {
        states,
        actions: (0..batch).map(|_| rng.gen_range(0..actions)).collect(),
        rewards: (0..batch).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        next_states,
        terminals: (0..batch).map(|_| rng.gen_bool(0.3)).collect(),
    };
    let blended = (0..batch).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let init = Array2::from_shape_fn((batch, actions), |_| rng.gen_range(-2.0..2.0));
    (net, target, b, blended, init)
}

/// Largest relative error between analytic and central-difference
/// gradients (step 1e-5, denominators floored at 1e-6).
pub fn gradient_error(loss: Loss, seed: u64) -> f64 {
    let mut rng = seeded_rng(seed);
    let (net, target, batch, blended, init) = random_instance(&mut rng, 4);
    let eval = |n: &QNetwork| -> (f64, Vec<f64>) {
        let lg = match loss {
            Loss::Td => td_loss(n, &target, &batch, 0.9),
            Loss::Init => init_loss(n, &batch, &blended),
            Loss::Kl => kl_loss(n, &batch, &init, 1.0),
        }
        .expect("valid instance");
        (lg.loss, lg.grad)
    };
    let (_, analytic) = eval(&net);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for i in 0..net.param_count() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + h;
        let plus = eval(&probe).0;
        probe.params_mut()[i] = orig - h;
        let minus = eval(&probe).0;
        probe.params_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

fn gradient_check(loss: Loss, instances: u64) -> Result<String, String> {
    let worst = (0..instances)
        .map(|s| gradient_error(loss, 1000 + s))
        .fold(0.0, f64::max);
    if worst < 1e-4 {
        Ok(format!("{instances} instances, max relative error {worst:.2e}"))
    } else {
        Err(format!("max relative error {worst:.2e}"))
    }
}

const GRID: usize = 5;

fn grid_step(s: usize, a: usize) -> usize {
    let (r, c) = (s / GRID, s % GRID);
    let (r, c) = match a {
        0 => (r.saturating_sub(1), c),
        1 => ((r + 1).min(GRID - 1), c),
        2 => (r, c.saturating_sub(1)),
        _ => (r, (c + 1).min(GRID - 1)),
    };
    r * GRID + c
}

fn gridworld_check() -> Result<String, String> {
    let goal = GRID * GRID - 1;
    let gamma = 0.9;
    let mut table = QTable::with_shape(GRID * GRID * 4, 4, 0, 0.5, gamma);
    for _ in 0..400 {
        for s in 0..GRID * GRID {
            if s == goal {
                continue;
            }
            for a in 0..4 {
                let n = grid_step(s, a);
                let cell = s * 4 + a;
                let res = if n == goal {
                    table.update(cell, 1.0, None)
                } else {
                    let next: Vec<usize> = (0..4).map(|b| n * 4 + b).collect();
                    table.update(cell, 0.0, Some(&next))
                };
                res.map_err(|e| e.to_string())?;
            }
        }
    }
    let mut worst: f64 = 0.0;
    for s in 0..GRID * GRID {
        if s == goal {
            continue;
        }
        let (r, c) = (s / GRID, s % GRID);
        let dist = (GRID - 1 - r) + (GRID - 1 - c);
        let v_star = gamma.powi(dist as i32 - 1);
        let v = (0..4).map(|a| table.value(s * 4 + a)).fold(f64::MIN, f64::max);
        worst = worst.max((v - v_star).abs());
    }
    if worst < 1e-2 {
        Ok(format!("max-norm gap {worst:.2e}"))
    } else {
        Err(format!("max-norm gap {worst:.2e}"))
    }
}

fn endpoint_check() -> Result<String, String> {
    let mut rng = seeded_rng(7);
    for _ in 0..1000 {
        let qt: Vec<f64> = (0..3).map(|_| rng.gen_range(-1e3..1e3)).collect();
        let q0: Vec<f64> = (0..3).map(|_| rng.gen_range(-1e3..1e3)).collect();
        if adaptive_q(&qt, &q0, &[0.0; 3]) != q0 || adaptive_q(&qt, &q0, &[1.0; 3]) != qt {
            return Err(format!("endpoint mismatch for {qt:?} / {q0:?}"));
        }
    }
    Ok("1000 random vectors bit-exact".into())
}

fn synthetic_kb(seed: u64, tasks: usize) -> KnowledgeBase {
    let codec = GridCodec::for_env(EnvId::MountainCar);
    let mut rng = seeded_rng(seed);
    let mut kb = KnowledgeBase::new(codec.clone());
    for _ in 0..tasks {
        let mut t = QTable::new(&codec, 1.0, 0.99);
        for cell in 0..codec.total_cells() {
            if rng.gen_bool(0.7) {
                t.update(cell, rng.gen_range(0.0..1.0), None).expect("finite");
            }
        }
        kb.absorb(&t).expect("same grid");
    }
    kb
}

fn ordering_check() -> Result<String, String> {
    let kb = synthetic_kb(11, 6);
    let strategies = [InitStrategy::log_q_init(), InitStrategy::ucoi(), InitStrategy::MaxQInit];
    let tables: Vec<Vec<f64>> = strategies
        .iter()
        .map(|s| kb.init_table(s).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let mut checked = 0;
    for cell in 0..kb.total_cells() {
        if kb.n_with_value()[cell] == 0 {
            continue;
        }
        let (log, mean, ucoi, max) = (tables[0][cell], kb.mean()[cell], tables[1][cell], tables[2][cell]);
        let tol = 1e-12 * max.abs().max(1.0);
        if !(log <= mean + tol && mean <= ucoi + tol && ucoi <= max + tol) {
            return Err(format!("cell {cell}: {log} {mean} {ucoi} {max}"));
        }
        checked += 1;
    }
    Ok(format!("{checked} cells ordered"))
}

fn mountain_car_check() -> Result<String, String> {
    let s = MountainCarState {
        position: -0.5,
        velocity: 0.0,
    };
    let n = s.step(2, 0.0);
    let v = 0.001 - 0.0025 * (3.0f64 * -0.5).cos();
    let p = -0.5 + v;
    if (n.velocity - v).abs() < 1e-12 && (n.position - p).abs() < 1e-12 {
        Ok(format!("({p:.6}, {v:.6})"))
    } else {
        Err(format!("got ({}, {}), expected ({p}, {v})", n.position, n.velocity))
    }
}

fn round_trip_check() -> Result<String, String> {
    let kb = synthetic_kb(5, 3);
    let path = std::env::temp_dir().join(format!("dqinit-verify-{}.dqkb", std::process::id()));
    kb_save(&kb, &path).map_err(|e| e.to_string())?;
    let back = kb_load(&path, Some(kb.codec())).map_err(|e| e.to_string());
    let mut bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    std::fs::write(&path, &bytes).map_err(|e| e.to_string())?;
    let corrupt = kb_load(&path, None);
    let _ = std::fs::remove_file(&path);
    if back? != kb {
        return Err("reloaded knowledge base differs".into());
    }
    if corrupt.is_ok() {
        return Err("corrupted file accepted".into());
    }
    Ok("lossless; corruption rejected".into())
}

fn short_run(flags: ModeFlags, kb: &Arc<KnowledgeBase>) -> Result<Vec<f64>, String> {
    let task = TaskSpec::standard(EnvId::CartPole, RewardScheme::BinaryNonPenalizing, 3);
    let codec = GridCodec::for_env(EnvId::CartPole);
    let mut config = AgentConfig::for_env(EnvId::CartPole);
    config.flags = flags;
    config.batch_size = 8;
    let init = if flags.any() {
        InitSource::from_kb(kb.clone(), InitStrategy::ucoi()).map_err(|e| e.to_string())?
    } else {
        InitSource::None
    };
    let mut agent = Agent::new(config, codec, init, 3).map_err(|e| e.to_string())?;
    let mut env = Env::new(task).map_err(|e| e.to_string())?;
    let mut reset = seeded_rng(4);
    let mut out = Vec::new();
    for _ in 0..3 {
        let r = crate::agent::run_episode(&mut env, &mut agent, &mut reset).map_err(|e| e.to_string())?;
        out.push(r.episode_return);
    }
    out.extend_from_slice(&agent.net().params()[..8]);
    Ok(out)
}

fn determinism_check() -> Result<String, String> {
    let codec = GridCodec::for_env(EnvId::CartPole);
    let mut kb = KnowledgeBase::new(codec.clone());
    let mut t = QTable::new(&codec, 1.0, 0.99);
    for cell in (0..codec.total_cells()).step_by(3) {
        t.update(cell, 5.0, None).map_err(|e| e.to_string())?;
    }
    kb.absorb(&t).map_err(|e| e.to_string())?;
    let kb = Arc::new(kb);
    for flags in [ModeFlags::VANILLA, ModeFlags::ALL] {
        let a = short_run(flags, &kb)?;
        let b = short_run(flags, &kb)?;
        if a.iter().zip(&b).any(|(x, y)| x.to_bits() != y.to_bits()) {
            return Err(format!("{} runs differ", flags.label()));
        }
    }
    Ok("repeated runs bit-identical".into())
}
