//! Loss functions on Q-network outputs.
//!
//! Each loss is available in two forms: an output-level function returning
//! the loss and its gradient with respect to the network outputs (so the
//! training step can combine losses and backpropagate once), and a
//! parameter-level wrapper returning the gradient with respect to all
//! network parameters.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Batch, NetError, QNetwork};

/// Loss value with its gradient with respect to the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Loss components of one update and their weighting.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_td: f64,
    pub l_init: f64,
    pub l_kl: f64,
    pub total: f64,
    pub lambda_init: f64,
    pub lambda_kl: f64,
}

impl LossBreakdown {
    pub fn new(l_td: f64, l_init: f64, l_kl: f64, lambda_init: f64, lambda_kl: f64) -> Self {
        Self {
            l_td,
            l_init,
            l_kl,
            total: l_td + lambda_init * l_init + lambda_kl * l_kl,
            lambda_init,
            lambda_kl,
        }
    }
}

/// Bootstrapped targets r + γ·max_a' Q⁻(s', a'), with the bootstrap term
/// dropped on terminal transitions.
pub fn td_targets(next_q: &Array2<f64>, batch: &Batch, gamma: f64) -> Vec<f64> {
    (0..batch.len())
        .map(|i| {
            let bootstrap = if batch.terminals[i] {
                0.0
            } else {
                next_q.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max)
            };
            batch.rewards[i] + gamma * bootstrap
        })
        .collect()
}

/// Mean squared error between `targets` and Q(s_i, a_i); the gradient
/// only touches the taken actions.
pub fn taken_action_mse(q: &Array2<f64>, actions: &[usize], targets: &[f64]) -> (f64, Array2<f64>) {
    let n = actions.len() as f64;
    let mut grad = Array2::zeros(q.raw_dim());
    let mut loss = 0.0;
    for (i, (&a, &y)) in actions.iter().zip(targets).enumerate() {
        let err = q[[i, a]] - y;
        loss += err * err;
        grad[[i, a]] = 2.0 * err / n;
    }
    (loss / n, grad)
}

fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|z| (z - max) / temperature).collect();
    let log_norm = shifted.iter().map(|z| z.exp()).sum::<f64>().ln();
    shifted.iter().map(|z| z - log_norm).collect()
}

/// Softmax of `logits / temperature`, computed with max subtraction.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    log_softmax(logits, temperature).into_iter().map(f64::exp).collect()
}

/// KL(p ‖ q) between the Boltzmann policies of two logit vectors.
pub fn kl_divergence(logits_p: &[f64], logits_q: &[f64], temperature: f64) -> f64 {
    let lp = log_softmax(logits_p, temperature);
    let lq = log_softmax(logits_q, temperature);
    lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum()
}

/// Mean over rows of KL(softmax(q/τ) ‖ softmax(target/τ)) with its
/// gradient with respect to `q`; `target` is held fixed.
pub fn kl_output_grad(q: &Array2<f64>, target: &Array2<f64>, temperature: f64) -> (f64, Array2<f64>) {
    let n = q.nrows() as f64;
    let mut grad = Array2::zeros(q.raw_dim());
    let mut loss = 0.0;
    for i in 0..q.nrows() {
        let row_q: Vec<f64> = q.row(i).to_vec();
        let row_t: Vec<f64> = target.row(i).to_vec();
        let lp = log_softmax(&row_q, temperature);
        let lq = log_softmax(&row_t, temperature);
        let kl: f64 = lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum();
        loss += kl;
        for j in 0..row_q.len() {
            let p = lp[j].exp();
            grad[[i, j]] = p * (lp[j] - lq[j] - kl) / (temperature * n);
        }
    }
    (loss / n, grad)
}

/// Temporal-difference loss of `net` against `target_net`.
pub fn td_loss(net: &QNetwork, target_net: &QNetwork, batch: &Batch, gamma: f64) -> Result<LossGrad, NetError> {
    check_batch(batch)?;
    let cache = net.forward_cached(&batch.states)?;
    let next_q = target_net.forward_batch(&batch.next_states)?;
    let targets = td_targets(&next_q, batch, gamma);
    let (loss, out_grad) = taken_action_mse(cache.output(), &batch.actions, &targets);
    Ok(LossGrad {
        loss,
        grad: net.backward(&cache, &out_grad),
    })
}

/// Squared error between Q^θ(s, a) and fixed blended targets on the
/// batch's taken actions.
pub fn init_loss(net: &QNetwork, batch: &Batch, blended_targets: &[f64]) -> Result<LossGrad, NetError> {
    check_batch(batch)?;
    if blended_targets.len() != batch.len() {
        return Err(NetError::Dimension {
            expected: batch.len(),
            got: blended_targets.len(),
        });
    }
    let cache = net.forward_cached(&batch.states)?;
    let (loss, out_grad) = taken_action_mse(cache.output(), &batch.actions, blended_targets);
    Ok(LossGrad {
        loss,
        grad: net.backward(&cache, &out_grad),
    })
}

/// Distillation loss toward the Boltzmann policy of fixed value vectors
/// (one row per batch state).
pub fn kl_loss(
    net: &QNetwork,
    batch: &Batch,
    init_value_vectors: &Array2<f64>,
    temperature: f64,
) -> Result<LossGrad, NetError> {
    check_batch(batch)?;
    if init_value_vectors.dim() != (batch.len(), net.output_dim()) {
        return Err(NetError::Dimension {
            expected: batch.len() * net.output_dim(),
            got: init_value_vectors.len(),
        });
    }
    let cache = net.forward_cached(&batch.states)?;
    let (loss, out_grad) = kl_output_grad(cache.output(), init_value_vectors, temperature);
    Ok(LossGrad {
        loss,
        grad: net.backward(&cache, &out_grad),
    })
}

fn check_batch(batch: &Batch) -> Result<(), NetError> {
    if batch.is_empty() {
        Err(NetError::EmptyBatch)
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn one_transition(state: Vec<f64>, action: usize, reward: f64, terminal: bool) -> Batch {
        let dim = state.len();
        Batch {
            states: Array2::from_shape_vec((1, dim), state.clone()).unwrap(),
            actions: vec![action],
            rewards: vec![reward],
            next_states: Array2::from_shape_vec((1, dim), state).unwrap(),
            terminals: vec![terminal],
        }
    }

    #[test]
    fn terminal_unit_reward_gives_unit_loss() {
        let net = QNetwork::zeros(&[2, 4, 2]);
        let batch = one_transition(vec![0.3, 0.1], 1, 1.0, true);
        let lg = td_loss(&net, &net, &batch, 0.99).unwrap();
        assert_eq!(lg.loss, 1.0);
    }

    #[test]
    fn bellman_fixed_point_has_zero_loss() {
        // Q ≡ c with r = (1-γ)c satisfies the Bellman equation.
        let mut net = QNetwork::zeros(&[2, 3]);
        net.layer_mut(0).1.fill(5.0);
        let gamma = 0.9;
        let batch = one_transition(vec![0.3, -0.4], 2, (1.0 - gamma) * 5.0, false);
        let lg = td_loss(&net, &net, &batch, gamma).unwrap();
        assert!(lg.loss < 1e-24);
        assert!(lg.grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn init_loss_endpoints() {
        let net = QNetwork::zeros(&[2, 2]);
        let batch = one_transition(vec![1.0, 2.0], 0, 0.0, false);
        assert_eq!(init_loss(&net, &batch, &[0.0]).unwrap().loss, 0.0);
        assert_eq!(init_loss(&net, &batch, &[1.0]).unwrap().loss, 1.0);
    }

    #[test]
    fn kl_zero_for_identical_policies() {
        let q = array![[1.0, 2.0, 0.5]];
        let (loss, grad) = kl_output_grad(&q, &q.clone(), 1.0);
        assert!(loss.abs() < 1e-15);
        assert!(grad.iter().all(|g| g.abs() < 1e-15));
        // Shift invariance: logits differing by a constant give the same policy.
        let shifted = q.mapv(|v| v + 3.0);
        assert!(kl_output_grad(&q, &shifted, 1.0).0.abs() < 1e-14);
    }

    #[test]
    fn binary_kl_closed_form() {
        // p = softmax(0, c), q uniform: KL = p0 ln 2p0 + p1 ln 2p1 → ln 2.
        for c in [0.5f64, 3.0, 20.0] {
            let p1 = 1.0 / (1.0 + (-c).exp());
            let p0 = 1.0 - p1;
            let expected = p0 * (2.0 * p0).ln() + p1 * (2.0 * p1).ln();
            let got = kl_divergence(&[0.0, c], &[0.0, 0.0], 1.0);
            assert!((got - expected).abs() < 1e-12, "c={c}: {got} vs {expected}");
        }
        let got = kl_divergence(&[0.0, 60.0], &[0.0, 0.0], 1.0);
        assert!((got - std::f64::consts::LN_2).abs() < 1e-12);
        // The reverse direction diverges: KL(uniform ‖ softmax(0, c)) ≈ c/2 - ln 2.
        let c = 40.0;
        let got = kl_divergence(&[0.0, 0.0], &[0.0, c], 1.0);
        assert!((got - (c / 2.0 - std::f64::consts::LN_2)).abs() < 1e-9);
    }

    #[test]
    fn breakdown_total_is_weighted_sum() {
        let b = LossBreakdown::new(0.5, 0.25, 2.0, 1.0, 0.1);
        assert_eq!(b.total, 0.5 + 1.0 * 0.25 + 0.1 * 2.0);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let net = QNetwork::zeros(&[2, 2]);
        let batch = Batch {
            states: Array2::zeros((0, 2)),
            actions: vec![],
            rewards: vec![],
            next_states: Array2::zeros((0, 2)),
            terminals: vec![],
        };
        assert!(matches!(td_loss(&net, &net, &batch, 0.9), Err(NetError::EmptyBatch)));
    }
}
