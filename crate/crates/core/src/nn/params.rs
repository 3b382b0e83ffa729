use std::collections::HashMap;

use crate::tensor::{Scalar, Tensor, TensorError};

use super::NnError;

/// Ordered, uniquely named collection of tensors.
///
/// This is the unit exchanged between clients and the server: network
/// parameters, normalization buffers, gradients, optimizer moments and
/// control variates are all `ParamSet`s.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: PartialEq> PartialEq for ParamSet<T> {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn from_entries(entries: Vec<(String, Tensor<T>)>) -> Result<Self, NnError> {
        let mut set = Self::new();
        for (name, t) in entries {
            set.push(name, t)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<(), NnError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NnError::DuplicateName(name));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub(crate) fn expect(&self, name: &str) -> &Tensor<T> {
        self.get(name)
            .unwrap_or_else(|| panic!("parameter {name} missing from network state"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn into_entries(self) -> Vec<(String, Tensor<T>)> {
        self.entries
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.zeros_like()))
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Subset of entries whose name satisfies `keep`, order preserved.
    pub fn filter(&self, keep: impl Fn(&str) -> bool) -> Self {
        let entries: Vec<_> = self
            .entries
            .iter()
            .filter(|(n, _)| keep(n))
            .cloned()
            .collect();
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.clone(), i))
            .collect();
        Self { entries, index }
    }

    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Errors unless `other` has exactly the same names, order and shapes.
    pub fn ensure_aligned(&self, other: &Self) -> Result<(), NnError> {
        if self.len() != other.len() {
            return Err(NnError::Misaligned(format!(
                "{} entries vs {}",
                self.len(),
                other.len()
            )));
        }
        for ((a, ta), (b, tb)) in self.entries.iter().zip(&other.entries) {
            if a != b {
                return Err(NnError::Misaligned(format!("{a} vs {b}")));
            }
            if ta.shape() != tb.shape() {
                return Err(NnError::Misaligned(format!(
                    "{a}: shape {:?} vs {:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
        }
        Ok(())
    }

    /// Errors unless every entry of `other` exists here with the same shape.
    pub fn ensure_covers(&self, other: &Self) -> Result<(), NnError> {
        for (name, t) in other.iter() {
            match self.get(name) {
                None => return Err(NnError::Misaligned(format!("{name} missing"))),
                Some(own) if own.shape() != t.shape() => {
                    return Err(NnError::Misaligned(format!(
                        "{name}: shape {:?} vs {:?}",
                        own.shape(),
                        t.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    /// `self ← self + alpha·other` for every entry (aligned sets).
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<(), NnError> {
        self.ensure_aligned(other)?;
        for ((_, y), (_, x)) in self.entries.iter_mut().zip(&other.entries) {
            y.axpy(alpha, x).map_err(NnError::Tensor)?;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self, NnError> {
        self.ensure_aligned(other)?;
        let mut out = self.clone();
        for ((_, y), (_, x)) in out.entries.iter_mut().zip(&other.entries) {
            *y = y.sub(x).map_err(NnError::Tensor)?;
        }
        Ok(out)
    }

    pub fn scale(&mut self, alpha: T) {
        for (_, t) in &mut self.entries {
            t.scale(alpha);
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Overwrites values of every entry present in `src` (shapes must match).
    pub fn copy_from(&mut self, src: &Self) -> Result<(), NnError> {
        self.ensure_covers(src)?;
        for (name, t) in src.iter() {
            *self.get_mut(name).expect("covered") = t.clone();
        }
        Ok(())
    }

    /// Maximum absolute elementwise difference between aligned sets.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64, NnError> {
        self.ensure_aligned(other)?;
        let mut m = 0.0f64;
        for ((_, a), (_, b)) in self.entries.iter().zip(&other.entries) {
            for (&x, &y) in a.data().iter().zip(b.data()) {
                m = m.max((x.as_f64() - y.as_f64()).abs());
            }
        }
        Ok(m)
    }

    /// Bitwise equality of all values (names and shapes included).
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.ensure_aligned(other).is_ok()
            && self.entries.iter().zip(&other.entries).all(|((_, a), (_, b))| {
                a.data()
                    .iter()
                    .zip(b.data())
                    .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
            })
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }
}

impl From<TensorError> for NnError {
    fn from(e: TensorError) -> Self {
        NnError::Tensor(e)
    }
}
