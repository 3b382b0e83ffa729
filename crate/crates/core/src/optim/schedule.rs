/// Epoch/round budget and the plateau and early-stopping rules.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSchedule {
    pub max_rounds: usize,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub lr_factor: f64,
    pub min_lr: f64,
    pub batch_size: usize,
    /// A value counts as an improvement when it is below the best seen by
    /// more than this absolute margin.
    pub min_delta: f64,
    /// Fraction of each training shard held out for the monitored loss.
    pub val_fraction: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            max_rounds: 256,
            plateau_patience: 16,
            early_stop_patience: 48,
            lr_factor: 0.1,
            min_lr: 1e-6,
            batch_size: 32,
            min_delta: 1e-4,
            val_fraction: 0.1,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<(), String> {
        if self.early_stop_patience <= self.plateau_patience {
            return Err(format!(
                "early_stop_patience {} must exceed plateau_patience {}",
                self.early_stop_patience, self.plateau_patience
            ));
        }
        if self.max_rounds == 0 || self.batch_size == 0 || self.plateau_patience == 0 {
            return Err("max_rounds, batch_size and plateau_patience must be positive".into());
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(format!("lr_factor {} outside (0, 1)", self.lr_factor));
        }
        if !(self.min_lr >= 0.0) || !(self.min_delta >= 0.0) {
            return Err("min_lr and min_delta must be non-negative".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(format!("val_fraction {} outside (0, 1)", self.val_fraction));
        }
        Ok(())
    }
}

/// Tracks the monitored value across rounds.
///
/// Two counters run side by side: `rounds_since_improve` drives early
/// stopping and only resets on improvement; `plateau_rounds` drives learning
/// rate reduction and also resets whenever the rate is reduced.
#[derive(Clone, Debug, PartialEq)]
pub struct MonitorState {
    pub best_value: f64,
    pub best_round: Option<usize>,
    pub rounds_since_improve: usize,
    pub plateau_rounds: usize,
}

impl Default for MonitorState {
    fn default() -> Self {
        Self {
            best_value: f64::INFINITY,
            best_round: None,
            rounds_since_improve: 0,
            plateau_rounds: 0,
        }
    }
}

impl MonitorState {
    /// Folds in the value monitored at `round`; returns whether it improved.
    pub fn observe(&mut self, round: usize, value: f64, min_delta: f64) -> bool {
        if value < self.best_value - min_delta {
            self.best_value = value;
            self.best_round = Some(round);
            self.rounds_since_improve = 0;
            self.plateau_rounds = 0;
            true
        } else {
            self.rounds_since_improve += 1;
            self.plateau_rounds += 1;
            false
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Reduces the learning rate after `plateau_patience` stagnant rounds.
pub fn plateau_update(monitor: &mut MonitorState, sched: &TrainSchedule, current_lr: f64) -> f64 {
    if monitor.plateau_rounds >= sched.plateau_patience {
        monitor.plateau_rounds = 0;
        (current_lr * sched.lr_factor).max(sched.min_lr)
    } else {
        current_lr
    }
}

pub fn early_stop_check(monitor: &MonitorState, sched: &TrainSchedule) -> StopDecision {
    if monitor.rounds_since_improve >= sched.early_stop_patience {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    }
}

/// Drives the schedule over a monitored-value sequence.
///
/// Returns the learning rate in effect after each observed round and the
/// index of the round at which training stops, if it stops.
pub fn run_schedule(values: &[f64], sched: &TrainSchedule, lr0: f64) -> (Vec<f64>, Option<usize>) {
    let mut monitor = MonitorState::default();
    let mut lr = lr0;
    let mut lrs = Vec::with_capacity(values.len());
    for (round, &v) in values.iter().enumerate().take(sched.max_rounds) {
        monitor.observe(round, v, sched.min_delta);
        lr = plateau_update(&mut monitor, sched, lr);
        lrs.push(lr);
        if early_stop_check(&monitor, sched) == StopDecision::Stop {
            return (lrs, Some(round));
        }
    }
    (lrs, None)
}
