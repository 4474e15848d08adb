//! Simulation library for multi-step reasoning on a one-layer, single-head,
//! attention-only Transformer trained on synthetic chain-of-thought prompts.
//!
//! The pieces, bottom up:
//!
//! * [`patterns`]: orthonormal training and testing pattern bases, positional
//!   encodings and the testing noise model.
//! * [`tasks`]: permutation reasoning tasks, noisy step-wise transition
//!   models and their summary statistics.
//! * [`prompts`]: training, CoT-testing and ICL-testing prompts.
//! * [`model`], [`training`]: the attention model, its squared loss, the
//!   analytic gradient and SGD.
//! * [`inference`], [`metrics`]: CoT and ICL prediction, error estimates and
//!   attention diagnostics.
//! * [`config`], [`experiments`], [`charts`], [`io`]: the experiment harness
//!   used by the `cotsim` binary.

pub mod charts;
pub mod config;
pub mod error;
pub mod experiments;
pub mod inference;
pub mod io;
pub mod metrics;
pub mod model;
pub mod patterns;
pub mod prompts;
pub mod rng;
pub mod tasks;
pub mod training;

pub use error::{Error, Result};
