//! Acoustics-to-word CTC toolkit.
//!
//! Exact CTC likelihoods and gradients, LSTM stacks whose frame rate halves
//! between layers, layer-transfer initialization from phoneme CTC models and
//! word frame classifiers, and an analysis suite over the softmax weights.

pub mod analysis;
pub mod config;
pub mod ctc;
pub mod data;
pub mod error;
pub mod metrics;
pub mod network;
pub mod numerics;
pub mod training;

pub use ctc::{
    collapse, ctc_gradient, ctc_log_likelihood, ctc_loss_and_gradient, enumerate_preimage, greedy_decode,
    LogProbLattice, Vocabulary,
};
pub use error::{Error, Result};
pub use network::{ModelKind, Network, NetworkSpec};
pub use numerics::Mat;
