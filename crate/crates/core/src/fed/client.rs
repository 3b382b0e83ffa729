use crate::nn::{Network, ParamSet};
use crate::optim::{train_epoch, Dataset, OptimError, OptimizerState};
use crate::tensor::{Scalar, SeededRng};

use super::{trainable, AggregatorConfig, AggregatorKind, ClientUpdate, FedError, OptimSpec};

/// Persistent per-client algorithm state; both sets cover trainable entries.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientState<T> {
    /// Scaffold control variate.
    pub c_i: ParamSet<T>,
    /// FedDyn linear term.
    pub h_i: ParamSet<T>,
}

impl<T: Scalar> ClientState<T> {
    pub fn zeros_for(state: &ParamSet<T>) -> Self {
        let z = trainable(state).zeros_like();
        Self { c_i: z.clone(), h_i: z }
    }
}

/// A federation member: its data, working model and persisted state.
#[derive(Clone, Debug)]
pub struct Client<T> {
    pub id: usize,
    pub train: Dataset<T>,
    pub val: Dataset<T>,
    pub state: ClientState<T>,
    pub model: Network<T>,
    opt: Option<OptimizerState<T>>,
}

impl<T: Scalar> Client<T> {
    /// `template` supplies the architecture; its weights are overwritten with
    /// the global model at the start of every round.
    pub fn new(id: usize, train: Dataset<T>, val: Dataset<T>, template: &Network<T>) -> Self {
        Self {
            id,
            train,
            val,
            state: ClientState::zeros_for(template.state()),
            model: template.clone(),
            opt: None,
        }
    }

    pub fn optimizer(&self) -> Option<&OptimizerState<T>> {
        self.opt.as_ref()
    }
}

fn all_zero<T: Scalar>(p: &ParamSet<T>) -> bool {
    p.iter().all(|(_, t)| t.data().iter().all(|v| v.as_f64() == 0.0))
}

/// `g ← g + f(w, anchor, extra)` elementwise over aligned sets.
fn adjust<T: Scalar>(
    w: &ParamSet<T>,
    g: &mut ParamSet<T>,
    anchor: &ParamSet<T>,
    extra: &ParamSet<T>,
    f: impl Fn(f64, f64, f64) -> f64,
) -> Result<(), OptimError> {
    if g.len() != anchor.len() || g.len() != w.len() || g.len() != extra.len() {
        return Err(OptimError::Misaligned("correction sets differ in length".into()));
    }
    let rows = w.iter().zip(anchor.iter()).zip(extra.iter());
    for ((gn, gt), (((wn, wt), (an, at)), (en, et))) in g.iter_mut().zip(rows) {
        if gn != wn || gn != an || gn != en {
            return Err(OptimError::Misaligned(format!("{gn} vs {wn}/{an}/{en}")));
        }
        for (((gv, &wv), &av), &ev) in gt.data_mut().iter_mut().zip(wt.data()).zip(at.data()).zip(et.data()) {
            *gv = T::from_f64(gv.as_f64() + f(wv.as_f64(), av.as_f64(), ev.as_f64()));
        }
    }
    Ok(())
}

/// Option-II control variate: `c_i − c + (w_global − w_after)/(K·η)`.
fn control_update(c_i: f64, c: f64, w_global: f64, w_after: f64, steps: usize, lr: f64) -> f64 {
    c_i - c + (w_global - w_after) / (steps as f64 * lr)
}

/// One client's local pass for `round`.
///
/// Loads `global`, runs `agg.local_epochs` epochs with learning rate `lr`
/// and the aggregator's gradient correction, then updates the client's
/// persisted state. `server_c` is required for Scaffold. Corrections that
/// are identically zero (FedProx with `mu = 0`, Scaffold with `c = c_i`)
/// are skipped, so those configurations reproduce FedAvg bit for bit.
#[allow(clippy::too_many_arguments)]
pub fn client_local_train<T: Scalar>(
    client: &mut Client<T>,
    global: &ParamSet<T>,
    server_c: Option<&ParamSet<T>>,
    round: u32,
    lr: f64,
    agg: &AggregatorConfig,
    optim: &OptimSpec,
    batch_size: usize,
    rng: &mut SeededRng,
) -> Result<ClientUpdate<T>, FedError> {
    if client.train.is_empty() {
        return Err(OptimError::EmptyData.into());
    }
    client.model.load_state(global)?;
    let wg = trainable(global);

    let scaffold_shift = match agg.kind {
        AggregatorKind::Scaffold => {
            let c = server_c.ok_or_else(|| FedError::Protocol("Scaffold round without server control variate".into()))?;
            let shift = c.sub(&client.state.c_i)?;
            Some(shift)
        }
        _ => None,
    };
    let zeros = wg.zeros_like();
    let mu = agg.mu;
    let alpha = agg.alpha;
    let h_i = &client.state.h_i;
    let prox = |w: &ParamSet<T>, g: &mut ParamSet<T>| adjust(w, g, &wg, &zeros, |w, a, _| mu * (w - a));
    let scaffold = |w: &ParamSet<T>, g: &mut ParamSet<T>| {
        let shift = scaffold_shift.as_ref().expect("scaffold shift");
        adjust(w, g, &wg, shift, |_, _, s| s)
    };
    let dyn_reg = |w: &ParamSet<T>, g: &mut ParamSet<T>| adjust(w, g, &wg, h_i, |w, a, h| alpha * (w - a) - h);
    let correction: Option<crate::optim::GradCorrection<'_, T>> = match agg.kind {
        AggregatorKind::FedAvg => None,
        AggregatorKind::FedProx if mu == 0.0 => None,
        AggregatorKind::FedProx => Some(&prox),
        AggregatorKind::Scaffold if all_zero(scaffold_shift.as_ref().expect("scaffold shift")) => None,
        AggregatorKind::Scaffold => Some(&scaffold),
        AggregatorKind::FedDyn => Some(&dyn_reg),
    };

    let mut opt = match client.opt.take() {
        Some(mut o) if optim.persist_state => {
            o.lr = lr;
            o
        }
        _ => OptimizerState::new(optim.kind, lr),
    };
    let mut loss_sum = 0.0;
    let mut samples = 0usize;
    let mut steps = 0usize;
    for _ in 0..agg.local_epochs {
        let stats = train_epoch(&mut client.model, &client.train, &mut opt, batch_size, rng, correction)?;
        loss_sum += stats.mean_loss * stats.samples as f64;
        samples += stats.samples;
        steps += stats.steps;
    }
    if optim.persist_state {
        client.opt = Some(opt);
    }

    let params_after = client.model.state().clone();
    let w_after = trainable(&params_after);
    let control_delta = match agg.kind {
        AggregatorKind::Scaffold => {
            let c = server_c.expect("checked above");
            let mut c_new = client.state.c_i.clone();
            if steps > 0 {
                let rows = c.iter().zip(wg.iter()).zip(w_after.iter());
                for ((_, ct), (((_, cs), (_, gt)), (_, at))) in c_new.iter_mut().zip(rows) {
                    for (((v, &cv), &gv), &av) in ct.data_mut().iter_mut().zip(cs.data()).zip(gt.data()).zip(at.data()) {
                        *v = T::from_f64(control_update(v.as_f64(), cv.as_f64(), gv.as_f64(), av.as_f64(), steps, lr));
                    }
                }
            }
            let delta = c_new.sub(&client.state.c_i)?;
            client.state.c_i = c_new;
            Some(delta)
        }
        AggregatorKind::FedDyn => {
            let drift = w_after.sub(&wg)?;
            client.state.h_i.axpy(T::from_f64(-alpha), &drift)?;
            None
        }
        _ => None,
    };

    Ok(ClientUpdate {
        client_id: client.id,
        round,
        num_samples: client.train.len() as u64,
        params_after,
        control_delta,
        train_loss: if samples > 0 { loss_sum / samples as f64 } else { 0.0 },
        steps,
    })
}
