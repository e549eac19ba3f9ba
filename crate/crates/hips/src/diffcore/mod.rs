//! Minimal numerical substrate: small feed-forward networks over flattened
//! one-hot inputs, reverse-mode gradients, Adam updates, categorical losses,
//! and finite-difference verification.

mod adam;
mod fdcheck;
pub mod io;
mod loss;
mod network;

pub use adam::{adam_step, adam_step_flat, AdamState};
pub use fdcheck::finite_difference_max_rel_err;
pub use loss::{
    argmax, log_softmax, logsumexp, per_cell_argmax, per_cell_cross_entropy, softmax,
    softmax_cross_entropy,
};
pub use network::{Activation, Gradients, Layer, Network, Tape};

/// Default learning rates: 2e-4 for the dynamics model and the generative
/// model, 1e-3 for the policy, detector, and value networks.
pub const LR_DYNAMICS: f64 = 2e-4;
pub const LR_VQVAE: f64 = 2e-4;
pub const LR_POLICY: f64 = 1e-3;

/// Gradient clipping threshold used by every training loop in the repo.
pub const GRAD_CLIP_NORM: f64 = 10.0;
