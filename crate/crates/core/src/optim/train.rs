use crate::exec::Exec;
use crate::nn::{argmax_rows, loss_and_grad, Mode, Network, ParamSet};
use crate::tensor::{Scalar, SeededRng, Tensor};

use super::{OptimError, OptimizerState};

/// Labelled single-channel windows stored row-major (`len × input_len`).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    input_len: usize,
    x: Vec<T>,
    y: Vec<usize>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(input_len: usize, x: Vec<T>, y: Vec<usize>) -> Result<Self, OptimError> {
        if input_len == 0 || x.len() != input_len * y.len() {
            return Err(OptimError::Data(format!(
                "{} values for {} labels of length {input_len}",
                x.len(),
                y.len()
            )));
        }
        Ok(Self { input_len, x, y })
    }

    pub fn empty(input_len: usize) -> Self {
        Self {
            input_len,
            x: Vec::new(),
            y: Vec::new(),
        }
    }

    pub fn from_rows<'a>(input_len: usize, rows: impl IntoIterator<Item = (&'a [f32], usize)>) -> Result<Self, OptimError> {
        let mut out = Self::empty(input_len);
        for (row, label) in rows {
            out.push(row, label)?;
        }
        Ok(out)
    }

    pub fn push(&mut self, row: &[f32], label: usize) -> Result<(), OptimError> {
        if row.len() != self.input_len {
            return Err(OptimError::Data(format!(
                "row of length {} in a dataset of length {}",
                row.len(),
                self.input_len
            )));
        }
        self.x.extend(row.iter().map(|&v| T::from_f64(v as f64)));
        self.y.push(label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }

    pub fn input(&self, i: usize) -> &[T] {
        &self.x[i * self.input_len..(i + 1) * self.input_len]
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut x = Vec::with_capacity(indices.len() * self.input_len);
        for &i in indices {
            x.extend_from_slice(self.input(i));
        }
        Self {
            input_len: self.input_len,
            x,
            y: indices.iter().map(|&i| self.y[i]).collect(),
        }
    }

    /// Concatenation in argument order.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Self>, input_len: usize) -> Result<Self, OptimError> {
        let mut out = Self::empty(input_len);
        for p in parts {
            if p.input_len != input_len {
                return Err(OptimError::Data("input lengths differ".into()));
            }
            out.x.extend_from_slice(&p.x);
            out.y.extend_from_slice(&p.y);
        }
        Ok(out)
    }

    /// Inputs `[B, 1, L]` and labels for the given sample indices.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let mut x = Vec::with_capacity(indices.len() * self.input_len);
        for &i in indices {
            x.extend_from_slice(self.input(i));
        }
        let t = Tensor::new(&[indices.len(), 1, self.input_len], x).expect("consistent batch shape");
        (t, indices.iter().map(|&i| self.y[i]).collect())
    }
}

/// Rewrites a gradient in place given the current parameters; used for
/// federated drift corrections.
pub type GradCorrection<'a, T> = &'a (dyn Fn(&ParamSet<T>, &mut ParamSet<T>) -> Result<(), OptimError> + Sync);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// Sample-weighted mean of the batch losses.
    pub mean_loss: f64,
    pub steps: usize,
    pub samples: usize,
}

/// One pass over `data` in seeded-shuffled batches (final partial batch kept).
///
/// Per batch: train-mode forward, loss, backward, optional gradient
/// correction, optimizer step.
pub fn train_epoch<T: Scalar>(
    net: &mut Network<T>,
    data: &Dataset<T>,
    opt: &mut OptimizerState<T>,
    batch_size: usize,
    rng: &mut SeededRng,
    correction: Option<GradCorrection<'_, T>>,
) -> Result<EpochStats, OptimError> {
    if data.is_empty() {
        return Err(OptimError::EmptyData);
    }
    if batch_size == 0 {
        return Err(OptimError::Data("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    rng.shuffle(&mut order);
    let mut loss_sum = 0.0;
    let mut steps = 0;
    for chunk in order.chunks(batch_size) {
        let (x, labels) = data.batch(chunk);
        let (logits, cache) = net.forward(&x, Mode::Train, Some(&mut *rng))?;
        let (loss, grad) = loss_and_grad(&logits, &labels)?;
        let mut grads = net.backward(&cache, &grad)?;
        let mut params = net.params();
        if let Some(correct) = correction {
            correct(&params, &mut grads)?;
        }
        opt.step(&mut params, &grads)?;
        net.load_state(&params)?;
        loss_sum += loss.as_f64() * chunk.len() as f64;
        steps += 1;
    }
    Ok(EpochStats {
        mean_loss: loss_sum / data.len() as f64,
        steps,
        samples: data.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub loss: f64,
    pub predictions: Vec<usize>,
}

impl EvalResult {
    pub fn accuracy(&self, labels: &[usize]) -> f64 {
        if labels.is_empty() {
            return 0.0;
        }
        let hits = self.predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
        hits as f64 / labels.len() as f64
    }
}

/// Eval-mode loss and predictions; batches may be processed concurrently,
/// results are combined in batch order.
pub fn evaluate<T: Scalar>(net: &Network<T>, data: &Dataset<T>, batch_size: usize, exec: Exec) -> Result<EvalResult, OptimError> {
    if data.is_empty() {
        return Err(OptimError::EmptyData);
    }
    let batch_size = batch_size.max(1);
    let n_batches = data.len().div_ceil(batch_size);
    let parts = exec.map_range(n_batches, |b| -> Result<(f64, Vec<usize>), OptimError> {
        let idx: Vec<usize> = (b * batch_size..((b + 1) * batch_size).min(data.len())).collect();
        let (x, labels) = data.batch(&idx);
        let logits = net.predict(&x)?;
        let (loss, _) = loss_and_grad(&logits, &labels)?;
        Ok((loss.as_f64() * idx.len() as f64, argmax_rows(&logits)))
    });
    let mut loss = 0.0;
    let mut predictions = Vec::with_capacity(data.len());
    for part in parts {
        let (l, p) = part?;
        loss += l;
        predictions.extend(p);
    }
    Ok(EvalResult {
        loss: loss / data.len() as f64,
        predictions,
    })
}
