//! Q-network, optimizer, replay memory and losses.

mod adam;
pub mod blob;
mod loss;
mod mlp;
mod replay;

pub use adam::Adam;
pub use loss::{
    init_loss, kl_divergence, kl_loss, kl_output_grad, softmax, taken_action_mse, td_loss, td_targets,
    LossBreakdown, LossGrad,
};
pub use mlp::{sync_target, ForwardCache, QNetwork};
pub use replay::{Batch, ReplayBuffer};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("input has {got} components, network expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("architecture mismatch: {0}")]
    Architecture(String),
    #[error("non-finite gradient at parameter {index}")]
    NonFiniteGradient { index: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("{0}")]
    Blob(String),
}
