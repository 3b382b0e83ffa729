//! Central finite-difference verification of [`Network::backward`].

use crate::tensor::{SeededRng, Tensor};

use super::{loss_and_grad, Network, NnError, ParamSet};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub h: f64,
    /// Lower bound on the number of checked coordinates across all tensors.
    pub min_coords: usize,
    /// Coordinates guaranteed per tensor (all of them if the tensor is smaller).
    pub per_tensor: usize,
    pub seed: u64,
    /// Multiplies analytic gradients by `1 + sabotage` before comparing.
    /// Non-zero only in negative-control tests.
    pub sabotage: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            min_coords: 200,
            per_tensor: 4,
            seed: 0,
            sabotage: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub coords: usize,
    pub max_rel_err: f64,
    /// Coordinates left out because every probe step crossed a ReLU or
    /// max-pool switch, where the finite difference is not a derivative.
    pub kinks: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords: usize,
    pub kinks: usize,
    pub tensors: Vec<TensorCheck>,
}

/// Step shrink factors tried when a probe crosses a switch.
const STEP_SCALES: [f64; 3] = [1.0, 0.1, 0.01];

/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Seeded coordinate selection: `per_tensor` from each tensor, then uniform
/// extra picks until `min_coords` is reached or everything is selected.
fn select_coords(params: &ParamSet<f64>, opts: &GradCheckOptions) -> Vec<Vec<usize>> {
    let mut rng = SeededRng::new(opts.seed);
    let mut picked: Vec<Vec<usize>> = params
        .iter()
        .map(|(_, t)| {
            let mut idx: Vec<usize> = (0..t.len()).collect();
            rng.shuffle(&mut idx);
            idx.truncate(opts.per_tensor.min(t.len()));
            idx
        })
        .collect();
    let total: usize = params.num_elements();
    let lens: Vec<usize> = params.iter().map(|(_, t)| t.len()).collect();
    let mut count: usize = picked.iter().map(Vec::len).sum();
    while count < opts.min_coords.min(total) {
        let mut flat = rng.below(total as u64) as usize;
        let mut ti = 0;
        while flat >= lens[ti] {
            flat -= lens[ti];
            ti += 1;
        }
        if !picked[ti].contains(&flat) {
            picked[ti].push(flat);
            count += 1;
        }
    }
    for p in &mut picked {
        p.sort_unstable();
    }
    picked
}

/// Compares analytic gradients of the mean cross-entropy with central
/// differences on a seeded subset of parameter coordinates. Uses train-mode
/// forward passes that leave running statistics untouched.
///
/// A probe pair whose ReLU/max-pool pattern differs from the unperturbed
/// pass straddles a kink; it is retried with steps `h/10` and `h/100`, and
/// the coordinate is counted under `kinks` if all of them straddle one.
pub fn grad_check(
    net: &Network<f64>,
    batch: &Tensor<f64>,
    labels: &[usize],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, NnError> {
    if net.config().dropout_p > 0.0 {
        return Err(NnError::Config("gradient check requires dropout_p = 0".into()));
    }
    let (logits, cache) = net.forward_train_pure(batch, None)?;
    let (_, g) = loss_and_grad(&logits, labels)?;
    let analytic = net.backward(&cache, &g)?;
    let coords = select_coords(&analytic, opts);

    let base_pattern = cache.switch_pattern();

    let mut probe = net.clone();
    let mut loss_at = |name: &str, i: usize, value: f64| -> Result<(f64, bool), NnError> {
        probe.state_mut().get_mut(name).expect("aligned").data_mut()[i] = value;
        let (logits, c) = probe.forward_train_pure(batch, None)?;
        Ok((loss_and_grad(&logits, labels)?.0, c.switch_pattern() == base_pattern))
    };
    let mut tensors = Vec::new();
    for ((name, grad), idx) in analytic.iter().zip(&coords) {
        let mut worst = 0.0f64;
        let mut kinks = 0;
        for &i in idx {
            let orig = net.state().get(name).expect("aligned").data()[i];
            let mut numeric = None;
            for scale in STEP_SCALES {
                let h = opts.h * scale;
                let (up, smooth_up) = loss_at(name, i, orig + h)?;
                let (down, smooth_down) = loss_at(name, i, orig - h)?;
                if smooth_up && smooth_down {
                    numeric = Some((up - down) / (2.0 * h));
                    break;
                }
            }
            loss_at(name, i, orig)?;
            match numeric {
                Some(n) => worst = worst.max(relative_error(grad.data()[i] * (1.0 + opts.sabotage), n)),
                None => kinks += 1,
            }
        }
        tensors.push(TensorCheck {
            name: name.to_string(),
            coords: idx.len() - kinks,
            max_rel_err: worst,
            kinks,
        });
    }
    Ok(GradCheckReport {
        max_rel_err: tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max),
        coords: tensors.iter().map(|t| t.coords).sum(),
        kinks: tensors.iter().map(|t| t.kinks).sum(),
        tensors,
    })
}
