//! Minimal dense network substrate: fully connected layers, multi-layer
//! perceptrons with inverted dropout, ADAM, and a finite-difference gradient
//! checker. Everything is `f64`.

mod adam;
mod gradcheck;
mod layer;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_extrapolated};
pub use layer::{Activation, DenseLayer};
pub use mlp::{Mlp, MlpCache, MlpGrads};

/// Whether a forward pass samples dropout masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub(crate) use layer::sigmoid;
pub(crate) use mlp::dropout_mask as mlp_dropout_mask;
