//! Optimizers, learning-rate schedule and the local training loop.

mod schedule;
mod train;

pub use schedule::{early_stop_check, plateau_update, run_schedule, MonitorState, StopDecision, TrainSchedule};
pub use train::{evaluate, train_epoch, Dataset, EpochStats, EvalResult, GradCorrection};

use thiserror::Error;

use crate::nn::{NnError, ParamSet};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("parameter and gradient sets not aligned: {0}")]
    Misaligned(String),
    #[error("training data is empty")]
    EmptyData,
    #[error("invalid dataset: {0}")]
    Data(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    /// Conventional starting learning rate for the optimizer.
    pub fn default_lr(self) -> f64 {
        match self {
            OptimizerKind::Sgd => 0.01,
            OptimizerKind::Adam => 1e-3,
        }
    }
}

/// Per-worker optimizer state.
///
/// Adam moments are keyed by parameter name and created lazily on the first
/// step, so the state does not depend on insertion order of the sets it is
/// applied to.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    t: u64,
    m: ParamSet<T>,
    v: ParamSet<T>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            betas: (0.9, 0.999),
            eps: 1e-8,
            t: 0,
            m: ParamSet::new(),
            v: ParamSet::new(),
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::Adam, lr)
    }

    /// Number of steps taken.
    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &ParamSet<T> {
        &self.m
    }

    pub fn second_moment(&self) -> &ParamSet<T> {
        &self.v
    }

    /// Clears moments and the step counter, keeping the learning rate.
    pub fn reset(&mut self) {
        self.t = 0;
        self.m = ParamSet::new();
        self.v = ParamSet::new();
    }

    /// Applies one step of the configured optimizer.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>) -> Result<(), OptimError> {
        match self.kind {
            OptimizerKind::Sgd => sgd_step(params, grads, self),
            OptimizerKind::Adam => adam_step(params, grads, self),
        }
    }
}

fn check_names<T: Scalar>(params: &ParamSet<T>, grads: &ParamSet<T>) -> Result<(), OptimError> {
    if params.len() != grads.len() {
        return Err(OptimError::Misaligned(format!(
            "{} parameters vs {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (name, w) in params.iter() {
        match grads.get(name) {
            None => return Err(OptimError::Misaligned(format!("no gradient for {name}"))),
            Some(g) if g.shape() != w.shape() => {
                return Err(OptimError::Misaligned(format!(
                    "{name}: parameter {:?} vs gradient {:?}",
                    w.shape(),
                    g.shape()
                )))
            }
            Some(_) => {}
        }
    }
    Ok(())
}

/// `w ← w − lr·g`.
pub fn sgd_step<T: Scalar>(params: &mut ParamSet<T>, grads: &ParamSet<T>, state: &mut OptimizerState<T>) -> Result<(), OptimError> {
    check_names(params, grads)?;
    let lr = T::from_f64(state.lr);
    for (name, w) in params.iter_mut() {
        let g = grads.get(name).expect("checked");
        for (wi, &gi) in w.data_mut().iter_mut().zip(g.data()) {
            *wi -= lr * gi;
        }
    }
    state.t += 1;
    Ok(())
}

/// Adam with bias-corrected moments; `t` is incremented before correction.
pub fn adam_step<T: Scalar>(params: &mut ParamSet<T>, grads: &ParamSet<T>, state: &mut OptimizerState<T>) -> Result<(), OptimError> {
    check_names(params, grads)?;
    for (name, w) in params.iter() {
        if !state.m.contains(name) {
            state.m.push(name, Tensor::zeros(w.shape()).map_err(NnError::from)?)?;
            state.v.push(name, Tensor::zeros(w.shape()).map_err(NnError::from)?)?;
        }
    }
    state.t += 1;
    let (b1, b2) = state.betas;
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let (lr, eps) = (state.lr, state.eps);
    for (name, w) in params.iter_mut() {
        let g = grads.get(name).expect("checked").data();
        let m = state.m.get_mut(name).expect("created above").data_mut();
        for (mi, &gi) in m.iter_mut().zip(g) {
            *mi = T::from_f64(b1 * mi.as_f64() + (1.0 - b1) * gi.as_f64());
        }
        let v = state.v.get_mut(name).expect("created above").data_mut();
        for (vi, &gi) in v.iter_mut().zip(g) {
            let gi = gi.as_f64();
            *vi = T::from_f64(b2 * vi.as_f64() + (1.0 - b2) * gi * gi);
        }
        let m = state.m.get(name).expect("created above").data();
        let v = state.v.get(name).expect("created above").data();
        for ((wi, &mi), &vi) in w.data_mut().iter_mut().zip(m).zip(v) {
            let mhat = mi.as_f64() / c1;
            let vhat = vi.as_f64() / c2;
            *wi = T::from_f64(wi.as_f64() - lr * mhat / (vhat.sqrt() + eps));
        }
    }
    Ok(())
}
