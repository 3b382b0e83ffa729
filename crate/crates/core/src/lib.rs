//! Federated training of a 1D residual convolutional network for single-lead
//! ECG rhythm classification.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense tensors, seeded RNG, reductions.
//! * [`nn`]: residual CNN layers with hand-written backward passes.
//! * [`optim`]: SGD/Adam, plateau LR reduction, early stopping, epoch loop.
//! * [`ecg`]: manifest ingestion, resampling, windowing, sharding, synthetic data.
//! * [`transport`]: FLUP envelopes and an in-process pub/sub broker.
//! * [`fed`]: client local training, the four aggregators, the round loop.
//! * [`metrics`]: confusion matrices, F1/accuracy, metrics CSV.
//! * [`exec`]: sequential or rayon-backed execution of independent work items.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // negated comparisons reject NaN

pub mod exec;
pub mod tensor;
pub mod nn;
pub mod optim;
pub mod ecg;
pub mod transport;
pub mod metrics;
pub mod fed;
