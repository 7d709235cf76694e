//! Analytic loss gradients against central finite differences of
//! independently evaluated losses.

mod common;

use common::{check, init_reference, instance, kink_margin, kl_reference, td_reference};
use dqinit::net::{init_loss, kl_loss, td_loss, Batch, QNetwork};
use ndarray::Array2;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn td_gradient(seed in any::<u64>()) {
        let x = instance(seed);
        prop_assume!(kink_margin(&x) > 1e-4);
        let lg = td_loss(&x.net, &x.target, &x.batch, x.gamma).unwrap();
        prop_assert!((lg.loss - td_reference(&x, &x.net)).abs() < 1e-10);
        let err = check(&lg.grad, &x.net, |n| td_reference(&x, n));
        prop_assert!(err < 1e-4, "relative error {}", err);
    }

    #[test]
    fn init_gradient(seed in any::<u64>()) {
        let x = instance(seed);
        prop_assume!(kink_margin(&x) > 1e-4);
        let lg = init_loss(&x.net, &x.batch, &x.blended).unwrap();
        prop_assert!((lg.loss - init_reference(&x, &x.net)).abs() < 1e-10);
        let err = check(&lg.grad, &x.net, |n| init_reference(&x, n));
        prop_assert!(err < 1e-4, "relative error {}", err);
    }

    #[test]
    fn kl_gradient(seed in any::<u64>()) {
        let x = instance(seed);
        prop_assume!(kink_margin(&x) > 1e-4);
        let lg = kl_loss(&x.net, &x.batch, &x.init, x.tau).unwrap();
        prop_assert!((lg.loss - kl_reference(&x, &x.net)).abs() < 1e-10);
        let err = check(&lg.grad, &x.net, |n| kl_reference(&x, n));
        prop_assert!(err < 1e-4, "relative error {}", err);
    }
}

#[test]
fn binary_kl_limit() {
    // KL(softmax(0, c) ‖ uniform) = ln 2 − H(σ(c)) → ln 2 as c grows.
    let net = QNetwork::zeros(&[1, 2]);
    for c in [2.0, 8.0, 30.0] {
        let mut saturated = net.clone();
        saturated.layer_mut(0).1[1] = c;
        let batch = Batch {
            states: Array2::zeros((1, 1)),
            actions: vec![0],
            rewards: vec![0.0],
            next_states: Array2::zeros((1, 1)),
            terminals: vec![false],
        };
        let kl = kl_loss(&saturated, &batch, &Array2::zeros((1, 2)), 1.0).unwrap().loss;
        let s = 1.0 / (1.0 + (-c as f64).exp());
        let closed = 2f64.ln() + s * s.ln() + (1.0 - s) * (1.0 - s).ln();
        assert!((kl - closed).abs() < 1e-12, "c={c}: {kl} vs {closed}");
    }
}


