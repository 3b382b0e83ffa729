use std::collections::BTreeSet;

use crate::nn::{Network, ParamSet};
use crate::tensor::{Scalar, Tensor};

use super::{AggregatorConfig, AggregatorKind, ClientUpdate, FedError, ServerState};

/// `Σ wᵢ·xᵢ` per coordinate, accumulated in f64 in argument order.
pub fn weighted_mean<T: Scalar>(sets: &[(&ParamSet<T>, f64)]) -> Result<ParamSet<T>, FedError> {
    let (first, _) = sets.first().ok_or_else(|| FedError::Protocol("weighted mean of nothing".into()))?;
    for (s, _) in sets {
        first.ensure_aligned(s)?;
    }
    let mut acc = vec![0.0f64; 0];
    let mut out = Vec::with_capacity(first.len());
    for (i, (name, t)) in first.iter().enumerate() {
        acc.clear();
        acc.resize(t.len(), 0.0);
        for (s, w) in sets {
            let data = s.iter().nth(i).expect("aligned").1.data();
            for (a, &x) in acc.iter_mut().zip(data) {
                *a += w * x.as_f64();
            }
        }
        let values = acc.iter().map(|&v| T::from_f64(v)).collect();
        out.push((name.to_string(), Tensor::new(t.shape(), values).expect("shape from aligned set")));
    }
    Ok(ParamSet::from_entries(out)?)
}

/// Applies `f(current, contributions)` to every coordinate of the entries of
/// `target` selected by `keep`; contributions come from `sets` in order.
fn combine<T: Scalar>(
    target: &mut ParamSet<T>,
    sets: &[&ParamSet<T>],
    keep: impl Fn(&str) -> bool,
    f: impl Fn(f64, &mut dyn Iterator<Item = f64>) -> f64,
) {
    let columns: Vec<Vec<&[T]>> = sets
        .iter()
        .map(|s| s.iter().map(|(_, t)| t.data()).collect())
        .collect();
    for (i, (name, t)) in target.iter_mut().enumerate() {
        if !keep(name) {
            continue;
        }
        for (j, v) in t.data_mut().iter_mut().enumerate() {
            let mut it = columns.iter().map(|c| c[i][j].as_f64());
            *v = T::from_f64(f(v.as_f64(), &mut it));
        }
    }
}

/// Merges one round of updates into `server` and advances its round.
///
/// Updates are processed in client-id order, so the result does not depend
/// on arrival order. Normalization buffers are always combined with the
/// sample-weighted mean.
pub fn aggregate<T: Scalar>(
    updates: &[ClientUpdate<T>],
    server: &mut ServerState<T>,
    agg: &AggregatorConfig,
    expected_clients: &[usize],
) -> Result<(), FedError> {
    let mut ids = BTreeSet::new();
    for u in updates {
        if !ids.insert(u.client_id) {
            return Err(FedError::Protocol(format!("duplicate update from client {}", u.client_id)));
        }
        if u.round != server.round {
            return Err(FedError::Protocol(format!(
                "client {} sent an update for round {} during round {}",
                u.client_id, u.round, server.round
            )));
        }
        if u.num_samples == 0 {
            return Err(FedError::Protocol(format!("client {} reported zero samples", u.client_id)));
        }
        server.global.ensure_aligned(&u.params_after)?;
    }
    let expected: BTreeSet<usize> = expected_clients.iter().copied().collect();
    if let Some(missing) = expected.difference(&ids).next() {
        return Err(FedError::Protocol(format!("no update from client {missing}")));
    }
    if let Some(extra) = ids.difference(&expected).next() {
        return Err(FedError::Protocol(format!("update from unexpected client {extra}")));
    }
    let mut sorted: Vec<&ClientUpdate<T>> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client_id);

    let total: u64 = sorted.iter().map(|u| u.num_samples).sum();
    let weights: Vec<f64> = sorted.iter().map(|u| u.num_samples as f64 / total as f64).collect();
    let params: Vec<&ParamSet<T>> = sorted.iter().map(|u| &u.params_after).collect();
    let m = sorted.len() as f64;
    let is_buffer = Network::<T>::is_buffer;

    let mean_weighted = |_: f64, it: &mut dyn Iterator<Item = f64>| it.zip(&weights).fold(0.0, |acc, (x, w)| acc + w * x);
    let old_global = server.global.clone();
    let mut deltas: Vec<&ParamSet<T>> = Vec::new();
    if agg.kind == AggregatorKind::Scaffold {
        for u in &sorted {
            let d = u
                .control_delta
                .as_ref()
                .ok_or_else(|| FedError::Protocol(format!("client {} sent no control delta", u.client_id)))?;
            server.c.ensure_aligned(d)?;
            deltas.push(d);
        }
    }

    match agg.kind {
        AggregatorKind::FedAvg | AggregatorKind::FedProx => {
            combine(&mut server.global, &params, |_| true, mean_weighted);
        }
        AggregatorKind::Scaffold => {
            let eta = agg.server_lr;
            combine(&mut server.global, &params, |n| !is_buffer(n), |w, it| {
                let mean_delta = it.map(|x| x - w).sum::<f64>() / m;
                w + eta * mean_delta
            });
            combine(&mut server.global, &params, is_buffer, mean_weighted);
            let n = expected.len() as f64;
            combine(&mut server.c, &deltas, |_| true, |c, it| c + it.sum::<f64>() / n);
        }
        AggregatorKind::FedDyn => {
            let alpha = agg.alpha;
            let trainable_params: Vec<ParamSet<T>> = params.iter().map(|p| p.filter(|n| !is_buffer(n))).collect();
            let refs: Vec<&ParamSet<T>> = trainable_params.iter().collect();
            let old_trainable = old_global.filter(|n| !is_buffer(n));
            // h ← h − α·(1/m)Σ(wᵢ − w), against the pre-round global.
            let mut h = server.h.clone();
            {
                let old = old_trainable.iter().map(|(_, t)| t.data()).collect::<Vec<_>>();
                let cols: Vec<Vec<&[T]>> = refs.iter().map(|s| s.iter().map(|(_, t)| t.data()).collect()).collect();
                for (i, (_, t)) in h.iter_mut().enumerate() {
                    for (j, v) in t.data_mut().iter_mut().enumerate() {
                        let w = old[i][j].as_f64();
                        let mean_delta = cols.iter().map(|c| c[i][j].as_f64() - w).sum::<f64>() / m;
                        *v = T::from_f64(v.as_f64() - alpha * mean_delta);
                    }
                }
            }
            // w ← (1/m)Σwᵢ − h/α over trainable entries.
            let mut new_trainable = old_trainable.clone();
            let hs: Vec<&[T]> = h.iter().map(|(_, t)| t.data()).collect();
            let cols: Vec<Vec<&[T]>> = refs.iter().map(|s| s.iter().map(|(_, t)| t.data()).collect()).collect();
            for (i, (_, t)) in new_trainable.iter_mut().enumerate() {
                for (j, v) in t.data_mut().iter_mut().enumerate() {
                    let mean = cols.iter().map(|c| c[i][j].as_f64()).sum::<f64>() / m;
                    *v = T::from_f64(mean - hs[i][j].as_f64() / alpha);
                }
            }
            server.global.copy_from(&new_trainable)?;
            server.h = h;
            combine(&mut server.global, &params, is_buffer, mean_weighted);
        }
    }
    server.round += 1;
    Ok(())
}
