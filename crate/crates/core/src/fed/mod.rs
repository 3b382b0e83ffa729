//! Federated training: client local passes with drift corrections, the four
//! aggregators, the broker-driven round loop and the three scenarios.

mod aggregate;
mod client;
mod federation;
mod scenario;

pub use aggregate::{aggregate, weighted_mean};
pub use client::{client_local_train, Client, ClientState};
pub use federation::{Federation, FederationResult, RoundReport};
pub use scenario::{prepare_splits, run_central, run_federated, run_local, run_scenario, ExperimentConfig, ExperimentData, ScenarioOutcome};

use thiserror::Error;

use crate::metrics::MetricsError;
use crate::nn::{Network, NnError, ParamSet};
use crate::optim::{OptimError, OptimizerKind};
use crate::tensor::{Scalar, SeededRng};
use crate::transport::{DecodeError, EncodeError, TransportError};

/// Child-stream tags under the experiment root seed.
pub const SEED_INIT: u64 = 0;
pub const SEED_SPLIT: u64 = 1;
pub const SEED_SHUFFLE: u64 = 2;

/// Shuffle and dropout stream of one worker for one round. Centralized
/// training uses worker 0, so a single federated client holding all data
/// sees the same batches as the centralized run.
pub fn shuffle_rng(root: &SeededRng, worker: usize, round: u32) -> SeededRng {
    root.child(&[SEED_SHUFFLE, worker as u64, round as u64])
}

/// Gradient-trained entries of a model state (everything but norm buffers).
pub fn trainable<T: Scalar>(state: &ParamSet<T>) -> ParamSet<T> {
    state.filter(|n| !Network::<T>::is_buffer(n))
}

#[derive(Debug, Error)]
pub enum FedError {
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl From<DecodeError> for FedError {
    fn from(e: DecodeError) -> Self {
        FedError::Transport(e.into())
    }
}

impl From<EncodeError> for FedError {
    fn from(e: EncodeError) -> Self {
        FedError::Transport(e.into())
    }
}

impl FedError {
    /// Whether rerunning the round can succeed (transport timeouts).
    pub fn is_retriable(&self) -> bool {
        matches!(self, FedError::Transport(TransportError::Timeout))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AggregatorKind {
    FedAvg,
    FedProx,
    FedDyn,
    Scaffold,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregatorConfig {
    pub kind: AggregatorKind,
    /// FedProx proximal weight.
    pub mu: f64,
    /// FedDyn regularization weight.
    pub alpha: f64,
    /// Scaffold global step size.
    pub server_lr: f64,
    pub local_epochs: usize,
}

impl AggregatorConfig {
    pub fn new(kind: AggregatorKind) -> Self {
        Self {
            kind,
            mu: 0.01,
            alpha: 0.01,
            server_lr: 1.0,
            local_epochs: 1,
        }
    }

    pub fn validate(&self) -> Result<(), FedError> {
        if !(self.mu >= 0.0) {
            return Err(FedError::Config(format!("mu must be >= 0, got {}", self.mu)));
        }
        if !(self.alpha > 0.0) {
            return Err(FedError::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.server_lr > 0.0) {
            return Err(FedError::Config(format!("server_lr must be > 0, got {}", self.server_lr)));
        }
        Ok(())
    }
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        Self::new(AggregatorKind::FedAvg)
    }
}

/// Optimizer choice for every local pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimSpec {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Keep Adam moments across rounds instead of starting fresh each round.
    pub persist_state: bool,
}

impl OptimSpec {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            lr: kind.default_lr(),
            persist_state: false,
        }
    }
}

/// One client's contribution to a round.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate<T> {
    pub client_id: usize,
    pub round: u32,
    pub num_samples: u64,
    /// Full state after local training: parameters and buffers.
    pub params_after: ParamSet<T>,
    /// `c_i⁺ − c_i` over trainable entries (Scaffold only).
    pub control_delta: Option<ParamSet<T>>,
    pub train_loss: f64,
    pub steps: usize,
}

/// Server-side state. `c` and `h` cover trainable entries only.
#[derive(Clone, Debug, PartialEq)]
pub struct ServerState<T> {
    pub round: u32,
    pub global: ParamSet<T>,
    pub c: ParamSet<T>,
    pub h: ParamSet<T>,
}

impl<T: Scalar> ServerState<T> {
    pub fn new(global: ParamSet<T>) -> Self {
        let zeros = trainable(&global).zeros_like();
        Self {
            round: 0,
            global,
            c: zeros.clone(),
            h: zeros,
        }
    }
}
