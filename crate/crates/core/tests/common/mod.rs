//! Independent references shared by the integration tests.
#![allow(dead_code)]

use dqinit::agent::{epsilon_greedy, AgentConfig};
use dqinit::env::{Env, TaskSpec};
use dqinit::net::{td_loss, Adam, Batch, QNetwork, ReplayBuffer};
use dqinit::rng::{label, seeded_rng, stream_rng};
use ndarray::Array2;
use rand::Rng;

pub struct Instance {
    pub net: QNetwork,
    pub target: QNetwork,
    pub batch: Batch,
    pub blended: Vec<f64>,
    pub init: Array2<f64>,
    pub gamma: f64,
    pub tau: f64,
}

pub fn instance(seed: u64) -> Instance {
    let mut rng = seeded_rng(seed);
    let inputs = rng.gen_range(1..5);
    let actions = rng.gen_range(2..5);
    let hidden = rng.gen_range(2..8);
    let n = rng.gen_range(1..7);
    let dims = [inputs, hidden, hidden, hidden, actions];
    let mut net = QNetwork::random(&dims, &mut rng);
    // Zero biases behind a dead layer sit exactly on a ReLU kink.
    for w in net.params_mut() {
        *w += rng.gen_range(-0.1..0.1);
    }
    let target = QNetwork::random(&dims, &mut rng);
    let batch = Batch {
        states: Array2::from_shape_fn((n, inputs), |_| rng.gen_range(-1.5..1.5)),
        actions: (0..n).map(|_| rng.gen_range(0..actions)).collect(),
        rewards: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        next_states: Array2::from_shape_fn((n, inputs), |_| rng.gen_range(-1.5..1.5)),
        terminals: (0..n).map(|_| rng.gen_bool(0.3)).collect(),
    };
    Instance {
        net,
        target,
        blended: (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        init: Array2::from_shape_fn((n, actions), |_| rng.gen_range(-3.0..3.0)),
        gamma: rng.gen_range(0.5..0.999),
        tau: rng.gen_range(0.5..2.0),
        batch,
    }
}

pub fn row(a: &Array2<f64>, i: usize) -> Vec<f64> {
    a.row(i).to_vec()
}

pub fn td_reference(x: &Instance, net: &QNetwork) -> f64 {
    let b = &x.batch;
    let mut sum = 0.0;
    for i in 0..b.len() {
        let q = net.forward(&row(&b.states, i)).unwrap()[b.actions[i]];
        let next = x.target.forward(&row(&b.next_states, i)).unwrap();
        let boot = if b.terminals[i] {
            0.0
        } else {
            next.iter().cloned().fold(f64::MIN, f64::max)
        };
        let y = b.rewards[i] + x.gamma * boot;
        sum += (y - q).powi(2);
    }
    sum / b.len() as f64
}

pub fn init_reference(x: &Instance, net: &QNetwork) -> f64 {
    let b = &x.batch;
    (0..b.len())
        .map(|i| (net.forward(&row(&b.states, i)).unwrap()[b.actions[i]] - x.blended[i]).powi(2))
        .sum::<f64>()
        / b.len() as f64
}

pub fn policy(z: &[f64], tau: f64) -> Vec<f64> {
    let e: Vec<f64> = z.iter().map(|v| (v / tau).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn kl_reference(x: &Instance, net: &QNetwork) -> f64 {
    let b = &x.batch;
    (0..b.len())
        .map(|i| {
            let p = policy(&net.forward(&row(&b.states, i)).unwrap(), x.tau);
            let q = policy(&row(&x.init, i), x.tau);
            p.iter().zip(&q).map(|(a, c)| a * (a / c).ln()).sum::<f64>()
        })
        .sum::<f64>()
        / b.len() as f64
}

/// Smallest |pre-activation| of any hidden unit over the batch states.
/// Central differences straddle the ReLU kink when this is below ~h.
pub fn kink_margin(x: &Instance) -> f64 {
    let mut margin = f64::INFINITY;
    for r in 0..x.batch.len() {
        let mut a = row(&x.batch.states, r);
        for l in 0..x.net.num_layers() - 1 {
            let (w, b) = x.net.layer(l);
            let z: Vec<f64> = (0..w.nrows())
                .map(|o| b[o] + w.row(o).iter().zip(&a).map(|(p, q)| p * q).sum::<f64>())
                .collect();
            margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
            a = z.iter().map(|v| v.max(0.0)).collect();
        }
    }
    margin
}

/// Max relative error, denominators floored at 1e-6.
pub fn check(analytic: &[f64], net: &QNetwork, f: impl Fn(&QNetwork) -> f64) -> f64 {
    let h = 1e-5;
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for i in 0..net.param_count() {
        let p0 = probe.params()[i];
        probe.params_mut()[i] = p0 + h;
        let up = f(&probe);
        probe.params_mut()[i] = p0 - h;
        let down = f(&probe);
        probe.params_mut()[i] = p0;
        let numeric = (up - down) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

/// Plain DQN written directly against the network, buffer and optimizer,
/// using the same seeded streams as the agent.
pub fn reference_dqn(config: &AgentConfig, task: TaskSpec, episodes: usize) -> (Vec<f64>, Vec<f64>) {
    let obs_dim = task.env_id.obs_dim();
    let actions = task.env_id.num_actions();
    let mut net = QNetwork::standard(obs_dim, actions, &mut stream_rng(task.seed, label::INIT));
    let mut target = net.clone();
    let mut adam = Adam::new(net.param_count(), config.learning_rate);
    let mut buffer = ReplayBuffer::new(config.buffer_capacity, obs_dim);
    let mut rng = stream_rng(task.seed, label::AGENT);
    let mut reset = stream_rng(task.seed, label::RESET);
    let mut env = Env::new(task).unwrap();
    let mut eps = config.exploration.start;
    let mut steps = 0u64;
    let mut returns = Vec::new();
    for _ in 0..episodes {
        let mut obs = env.reset(&mut reset);
        let mut ret = 0.0;
        loop {
            let q = net.forward(obs.as_slice()).unwrap();
            let a = epsilon_greedy(&q, eps, &mut rng);
            let t = env.step(a).unwrap();
            buffer.push(&t);
            eps = (eps * config.exploration.decay).max(config.exploration.floor);
            steps += 1;
            if let Some(batch) = buffer.sample(config.batch_size, &mut rng) {
                let lg = td_loss(&net, &target, &batch, config.gamma).unwrap();
                adam.apply(net.params_mut(), &lg.grad).unwrap();
            }
            if steps % config.target_sync_every == 0 {
                target.copy_from(&net);
            }
            ret += t.reward;
            if t.done || t.truncated {
                break;
            }
            obs = t.next_state;
        }
        returns.push(ret);
    }
    (returns, net.params().to_vec())
}

