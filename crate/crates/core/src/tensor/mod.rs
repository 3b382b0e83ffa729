//! Dense row-major tensors and the handful of numeric primitives the network,
//! optimizers and aggregators are built from.
//!
//! Tensors are generic over [`Scalar`], which is implemented for `f32` (the
//! training dtype) and `f64` (reference paths such as gradient checking and
//! aggregation oracles).

mod rng;
mod scalar;

pub use rng::{derive_seed, kaiming_uniform, uniform_symmetric, SeededRng};
pub use scalar::{DType, Scalar, TensorData};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("invalid shape {0:?}: every extent must be at least 1")]
    InvalidShape(Vec<usize>),
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("buffer of length {len} does not match shape {shape:?}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(TensorError::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

/// Builds a tensor whose every element equals `value`.
pub fn tensor_full<T: Scalar>(shape: &[usize], value: T) -> Result<Tensor<T>> {
    Tensor::full(shape, value)
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(TensorError::LengthMismatch {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    /// Zeros with the same shape as `self`.
    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: vec![T::zero(); self.data.len()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(TensorError::LengthMismatch {
                shape: shape.to_vec(),
                len: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &v| if v.abs() > acc { v.abs() } else { acc })
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                expected: self.shape.clone(),
                found: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// `self ← self + alpha·x`, elementwise.
    pub fn axpy(&mut self, alpha: T, x: &Self) -> Result<()> {
        self.ensure_same_shape(x)?;
        for (y, &xv) in self.data.iter_mut().zip(&x.data) {
            *y += alpha * xv;
        }
        Ok(())
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.ensure_same_shape(other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a - b)
                .collect(),
        })
    }

    pub fn scale(&mut self, alpha: T) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }
}

/// `y ← y + alpha·x`. Shapes must match exactly.
pub fn axpy_inplace<T: Scalar>(y: &mut Tensor<T>, alpha: T, x: &Tensor<T>) -> Result<()> {
    y.axpy(alpha, x)
}

/// Visits every flat index in row-major order together with its offset
/// under `out_stride`, advancing the offset incrementally.
fn for_each_out_index(shape: &[usize], out_stride: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = shape.len();
    let total: usize = shape.iter().product();
    let inner = shape[rank - 1];
    let inner_stride = out_stride[rank - 1];
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    let mut flat = 0usize;
    while flat < total {
        for i in 0..inner {
            f(flat + i, base + i * inner_stride);
        }
        flat += inner;
        // Carry into the outer axes.
        let mut a = rank - 1;
        while a > 0 {
            a -= 1;
            idx[a] += 1;
            base += out_stride[a];
            if idx[a] < shape[a] {
                break;
            }
            base -= out_stride[a] * shape[a];
            idx[a] = 0;
        }
    }
}

/// Mean and biased (1/count) variance over `axes`. Reduced axes are removed
/// from the output shape; reducing every axis yields a shape-`[1]` result.
/// An empty axis set returns a copy of `x` and zeros.
pub fn moments_over_axes<T: Scalar>(x: &Tensor<T>, axes: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
    let rank = x.rank();
    for &a in axes {
        if a >= rank {
            return Err(TensorError::InvalidAxis { axis: a, rank });
        }
    }
    if axes.is_empty() {
        return Ok((x.clone(), x.zeros_like()));
    }
    let reduced: Vec<bool> = (0..rank).map(|a| axes.contains(&a)).collect();
    let mut out_shape: Vec<usize> = (0..rank)
        .filter(|&a| !reduced[a])
        .map(|a| x.shape[a])
        .collect();
    if out_shape.is_empty() {
        out_shape.push(1);
    }
    let out_len: usize = out_shape.iter().product();
    let count: usize = axes
        .iter()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .map(|&a| x.shape[a])
        .product();

    // Output stride of every input axis (zero for reduced axes).
    let mut out_stride = vec![0usize; rank];
    let mut s = 1;
    for a in (0..rank).rev() {
        if !reduced[a] {
            out_stride[a] = s;
            s *= x.shape[a];
        }
    }
    // Accumulate in f64 regardless of T; two passes for the variance.
    let mut sum = vec![0.0f64; out_len];
    for_each_out_index(&x.shape, &out_stride, |flat, o| sum[o] += x.data[flat].as_f64());
    let inv = 1.0 / count as f64;
    let mean64: Vec<f64> = sum.into_iter().map(|s| s * inv).collect();
    let mut sq = vec![0.0f64; out_len];
    for_each_out_index(&x.shape, &out_stride, |flat, o| {
        let d = x.data[flat].as_f64() - mean64[o];
        sq[o] += d * d;
    });
    let mean: Vec<T> = mean64.into_iter().map(T::from_f64).collect();
    let var: Vec<T> = sq.into_iter().map(|s| T::from_f64(s * inv)).collect();
    Ok((
        Tensor {
            shape: out_shape.clone(),
            data: mean,
        },
        Tensor {
            shape: out_shape,
            data: var,
        },
    ))
}
