//! Learn a Markov-chain transition operator from unordered data and recover
//! the order in which the data was most plausibly generated.
//!
//! The pieces:
//! - [`nn`]: a small dense network substrate with ADAM and a gradient checker.
//! - [`transition`]: the gated neural transition operator with Gaussian or
//!   Bernoulli outputs.
//! - [`ordering`]: greedy and exhaustive permutation search against a scorer.
//! - [`training`]: batch-wise alternation of ordering and gradient ascent, plus
//!   model persistence.
//! - [`eval`]: Kendall tau-b, nearest-neighbour baselines and propagation.
//! - [`oneshot`]: generative one-shot classification with sampled chains.
//! - [`datagen`]: seeded synthetic trajectories with known order.
//! - [`dataset`], [`config`], [`cli`]: file formats and the command-line surface.

pub mod cli;
pub mod config;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod exec;
pub mod nn;
pub mod oneshot;
pub mod ordering;
pub mod rng;
pub mod training;
pub mod transition;

pub use error::{Error, Result};
pub use exec::Exec;
pub use ordering::{Permutation, TabularScorer, TransitionScorer};
pub use transition::{Architecture, GatedTransitionNet, State, StateKind, TransitionStats};
