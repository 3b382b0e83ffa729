//! Layer primitives on `[N, C, L]` activations, each with an exact backward.

use crate::tensor::{moments_over_axes, Scalar, SeededRng, Tensor};

use super::{NnError, NormKind};

/// Input gradient followed by the two parameter gradients of a layer.
pub type LayerGrads<T> = (Tensor<T>, Tensor<T>, Tensor<T>);

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Output length and left padding of a "same"-style convolution or pool.
///
/// Total padding is `max(0, (ceil(L/stride) − 1)·stride + K − L)`; the left
/// side gets `floor(total / 2)`.
pub fn same_padding(len: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(len);
    (out, total / 2)
}

fn dims3<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize, usize), NnError> {
    match *x.shape() {
        [n, c, l] => Ok((n, c, l)),
        _ => Err(NnError::Shape(format!("expected [N, C, L], got {:?}", x.shape()))),
    }
}

#[derive(Clone, Debug)]
pub struct Conv1dCache<T> {
    pub(crate) x: Tensor<T>,
    stride: usize,
    kernel: usize,
    out_channels: usize,
    pad_left: usize,
    out_len: usize,
}

/// Unfolds one sample `[C_in, L]` into `[C_in·K, L_out]` columns.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(x: &[T], c_in: usize, len: usize, k: usize, stride: usize, pad_left: usize, out_len: usize, cols: &mut [T]) {
    for ci in 0..c_in {
        let row = &x[ci * len..(ci + 1) * len];
        for kk in 0..k {
            let dst = &mut cols[(ci * k + kk) * out_len..(ci * k + kk + 1) * out_len];
            // Input index for output t is t·stride + kk − pad_left.
            for (t, d) in dst.iter_mut().enumerate() {
                let pos = (t * stride + kk) as isize - pad_left as isize;
                *d = if pos >= 0 && (pos as usize) < len {
                    row[pos as usize]
                } else {
                    T::zero()
                };
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(cols: &[T], c_in: usize, len: usize, k: usize, stride: usize, pad_left: usize, out_len: usize, gx: &mut [T]) {
    for ci in 0..c_in {
        let row = &mut gx[ci * len..(ci + 1) * len];
        for kk in 0..k {
            let src = &cols[(ci * k + kk) * out_len..(ci * k + kk + 1) * out_len];
            for (t, &g) in src.iter().enumerate() {
                let pos = (t * stride + kk) as isize - pad_left as isize;
                if pos >= 0 && (pos as usize) < len {
                    row[pos as usize] += g;
                }
            }
        }
    }
}

/// Output positions `t` whose input index `t·stride + kk − pad_left` lies in
/// `[0, len)`.
fn valid_range(len: usize, kk: usize, stride: usize, pad_left: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad_left > kk { (pad_left - kk).div_ceil(stride) } else { 0 };
    let hi = if len + pad_left > kk { ((len - 1 + pad_left - kk) / stride + 1).min(out_len) } else { 0 };
    (lo.min(hi), hi)
}

/// Below this many output channels the im2col + GEMM route spends most of
/// its time packing; a direct loop over kernel taps is faster.
const DIRECT_MAX_CHANNELS: usize = 16;

/// Rearranges `row` so that each stride phase is contiguous: element `i`
/// moves to `offsets[i % stride] + i / stride`. A strided tap then reads a
/// contiguous run.
fn split_phases<T: Scalar>(row: &[T], stride: usize, out: &mut [T], offsets: &mut Vec<usize>) {
    offsets.clear();
    let mut off = 0;
    for p in 0..stride {
        offsets.push(off);
        for (d, &v) in out[off..].iter_mut().zip(row.iter().skip(p).step_by(stride)) {
            *d = v;
        }
        off += (row.len().saturating_sub(p)).div_ceil(stride);
    }
}

/// Contiguous input run read by tap `kk` over outputs `[lo, hi)`.
#[inline]
fn tap_run(offsets: &[usize], kk: usize, stride: usize, pad_left: usize, lo: usize) -> usize {
    let start = lo * stride + kk - pad_left;
    offsets[start % stride] + start / stride
}

#[allow(clippy::too_many_arguments)]
fn direct_forward<T: Scalar>(x: &[T], w: &[T], c_in: usize, len: usize, k: usize, stride: usize, pad_left: usize, out_len: usize, y: &mut [T]) {
    let mut split = vec![T::zero(); c_in * len];
    let mut offsets = Vec::with_capacity(stride);
    for ci in 0..c_in {
        split_phases(&x[ci * len..(ci + 1) * len], stride, &mut split[ci * len..(ci + 1) * len], &mut offsets);
    }
    for (co, yrow) in y.chunks_mut(out_len).enumerate() {
        for ci in 0..c_in {
            let xrow = &split[ci * len..(ci + 1) * len];
            for kk in 0..k {
                let wv = w[(co * c_in + ci) * k + kk];
                let (lo, hi) = valid_range(len, kk, stride, pad_left, out_len);
                if lo == hi {
                    continue;
                }
                let start = tap_run(&offsets, kk, stride, pad_left, lo);
                for (o, &v) in yrow[lo..hi].iter_mut().zip(&xrow[start..start + (hi - lo)]) {
                    *o += wv * v;
                }
            }
        }
    }
}

/// Dot product with eight independent partial sums (fixed order, so the
/// result is deterministic) to let the compiler vectorize.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] += x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    lanes.iter().fold(T::zero(), |acc, &v| acc + v) + tail
}

#[allow(clippy::too_many_arguments)]
fn direct_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    gy: &[T],
    c_in: usize,
    len: usize,
    k: usize,
    stride: usize,
    pad_left: usize,
    out_len: usize,
    gx: &mut [T],
    gw: &mut [T],
) {
    let mut split = vec![T::zero(); c_in * len];
    let mut gsplit = vec![T::zero(); c_in * len];
    let mut offsets = Vec::with_capacity(stride);
    for ci in 0..c_in {
        split_phases(&x[ci * len..(ci + 1) * len], stride, &mut split[ci * len..(ci + 1) * len], &mut offsets);
    }
    for (co, grow) in gy.chunks(out_len).enumerate() {
        for ci in 0..c_in {
            let xrow = &split[ci * len..(ci + 1) * len];
            let gxrow = &mut gsplit[ci * len..(ci + 1) * len];
            for kk in 0..k {
                let widx = (co * c_in + ci) * k + kk;
                let wv = w[widx];
                let (lo, hi) = valid_range(len, kk, stride, pad_left, out_len);
                if lo == hi {
                    continue;
                }
                let start = tap_run(&offsets, kk, stride, pad_left, lo);
                let n = hi - lo;
                gw[widx] += dot(&grow[lo..hi], &xrow[start..start + n]);
                for (d, &g) in gxrow[start..start + n].iter_mut().zip(&grow[lo..hi]) {
                    *d += wv * g;
                }
            }
        }
    }
    for ci in 0..c_in {
        let src = &gsplit[ci * len..(ci + 1) * len];
        let dst = &mut gx[ci * len..(ci + 1) * len];
        for (p, &off) in offsets.iter().enumerate() {
            for (j, d) in dst.iter_mut().skip(p).step_by(stride).enumerate() {
                *d += src[off + j];
            }
        }
    }
}

/// Cross-correlation of `x [N, C_in, L]` with `w [C_out, C_in, K]` plus an
/// optional bias, "same" padding, output `[N, C_out, ceil(L/stride)]`.
pub fn conv1d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
) -> Result<(Tensor<T>, Conv1dCache<T>), NnError> {
    let (n, c_in, len) = dims3(x)?;
    let (c_out, wc_in, k) = match *w.shape() {
        [a, b, c] => (a, b, c),
        _ => return Err(NnError::Shape(format!("conv weight must be rank 3, got {:?}", w.shape()))),
    };
    if wc_in != c_in {
        return Err(NnError::Shape(format!(
            "conv expects {wc_in} input channels, got {c_in}"
        )));
    }
    if let Some(b) = b {
        if b.shape() != [c_out] {
            return Err(NnError::Shape(format!("conv bias shape {:?}", b.shape())));
        }
    }
    if stride == 0 {
        return Err(NnError::Config("stride must be positive".into()));
    }
    let (out_len, pad_left) = same_padding(len, k, stride);
    let ck = c_in * k;
    let mut y = Tensor::<T>::zeros(&[n, c_out, out_len])?;
    let direct = c_out <= DIRECT_MAX_CHANNELS;
    let mut cols = if direct { Vec::new() } else { vec![T::zero(); ck * out_len] };
    for s in 0..n {
        let out = &mut y.data_mut()[s * c_out * out_len..(s + 1) * c_out * out_len];
        if let Some(b) = b {
            for (co, chunk) in out.chunks_mut(out_len).enumerate() {
                chunk.fill(b.data()[co]);
            }
        }
        if c_out <= DIRECT_MAX_CHANNELS {
            direct_forward(&x.data()[s * c_in * len..(s + 1) * c_in * len], w.data(), c_in, len, k, stride, pad_left, out_len, out);
        } else {
            im2col(&x.data()[s * c_in * len..(s + 1) * c_in * len], c_in, len, k, stride, pad_left, out_len, &mut cols);
            T::gemm(c_out, ck, out_len, T::one(), w.data(), (ck as isize, 1), &cols, (out_len as isize, 1), T::one(), out, (out_len as isize, 1));
        }
    }
    Ok((
        y,
        Conv1dCache {
            x: x.clone(),
            stride,
            kernel: k,
            out_channels: c_out,
            pad_left,
            out_len,
        },
    ))
}

/// Gradients of [`conv1d_forward`]: `(grad_x, grad_w, grad_b)`.
pub fn conv1d_backward<T: Scalar>(
    cache: &Conv1dCache<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<LayerGrads<T>, NnError> {
    let (n, c_in, len) = dims3(&cache.x)?;
    let (k, c_out, out_len) = (cache.kernel, cache.out_channels, cache.out_len);
    if grad_out.shape() != [n, c_out, out_len] || w.shape() != [c_out, c_in, k] {
        return Err(NnError::StaleCache(format!(
            "conv cache for [{n}, {c_out}, {out_len}] used with grad {:?} / weight {:?}",
            grad_out.shape(),
            w.shape()
        )));
    }
    let ck = c_in * k;
    let mut gx = cache.x.zeros_like();
    let mut gw = w.zeros_like();
    let mut gb = Tensor::<T>::zeros(&[c_out])?;
    let direct = c_out <= DIRECT_MAX_CHANNELS;
    let buf = if direct { 0 } else { ck * out_len };
    let mut cols = vec![T::zero(); buf];
    let mut gcols = vec![T::zero(); buf];
    for s in 0..n {
        let gy = &grad_out.data()[s * c_out * out_len..(s + 1) * c_out * out_len];
        for (co, chunk) in gy.chunks(out_len).enumerate() {
            let mut acc = T::zero();
            for &g in chunk {
                acc += g;
            }
            gb.data_mut()[co] += acc;
        }
        let xs = &cache.x.data()[s * c_in * len..(s + 1) * c_in * len];
        if direct {
            let gxs = &mut gx.data_mut()[s * c_in * len..(s + 1) * c_in * len];
            direct_backward(xs, w.data(), gy, c_in, len, k, cache.stride, cache.pad_left, out_len, gxs, gw.data_mut());
            continue;
        }
        im2col(xs, c_in, len, k, cache.stride, cache.pad_left, out_len, &mut cols);
        // gw += gy · colsᵀ
        T::gemm(c_out, out_len, ck, T::one(), gy, (out_len as isize, 1), &cols, (1, out_len as isize), T::one(), gw.data_mut(), (ck as isize, 1));
        // gcols = wᵀ · gy
        T::gemm(ck, c_out, out_len, T::one(), w.data(), (1, ck as isize), gy, (out_len as isize, 1), T::zero(), &mut gcols, (out_len as isize, 1));
        col2im(&gcols, c_in, len, k, cache.stride, cache.pad_left, out_len, &mut gx.data_mut()[s * c_in * len..(s + 1) * c_in * len]);
    }
    Ok((gx, gw, gb))
}

/// Statistics needed to differentiate a normalization layer.
#[derive(Clone, Debug)]
pub struct NormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    kind: NormKind,
    groups: usize,
}

/// Running statistics produced by a batch-norm forward in train mode.
#[derive(Clone, Debug)]
pub struct RunningUpdate<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Index of the normalization set element `(n, c)` belongs to.
#[inline]
fn norm_set(kind: NormKind, groups: usize, c_total: usize, n: usize, c: usize) -> usize {
    match kind {
        NormKind::Batch => c,
        NormKind::Layer => n,
        NormKind::Group => n * groups + c / (c_total / groups),
    }
}

fn norm_set_count(kind: NormKind, groups: usize, n: usize, c: usize) -> usize {
    match kind {
        NormKind::Batch => c,
        NormKind::Layer => n,
        NormKind::Group => n * groups,
    }
}

/// Per-set mean and biased variance for the given normalization kind.
fn norm_moments<T: Scalar>(x: &Tensor<T>, kind: NormKind, groups: usize) -> Result<(Vec<T>, Vec<T>), NnError> {
    let (n, c, l) = dims3(x)?;
    let (mean, var) = match kind {
        NormKind::Batch => moments_over_axes(x, &[0, 2])?,
        NormKind::Layer => moments_over_axes(x, &[1, 2])?,
        NormKind::Group => {
            let g = x.clone().reshape(&[n, groups, (c / groups) * l])?;
            moments_over_axes(&g, &[2])?
        }
    };
    Ok((mean.into_data(), var.into_data()))
}

/// Output, backward cache and (train-mode BN only) the running-stat update.
pub type NormOutput<T> = (Tensor<T>, NormCache<T>, Option<RunningUpdate<T>>);

/// Normalization over `[N, C, L]` followed by a per-channel affine transform.
///
/// * Batch: per channel over `(N, L)`; batch statistics in train mode (and a
///   running-stat update is returned, momentum 0.1, unbiased variance as in
///   common frameworks), running statistics in eval mode.
/// * Layer: per sample over `(C, L)`.
/// * Group: per sample and channel group over `(C/G, L)`.
///
/// `ε = 1e-5` throughout.
#[allow(clippy::too_many_arguments)]
pub fn norm_forward<T: Scalar>(
    x: &Tensor<T>,
    kind: NormKind,
    groups: usize,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
    running: Option<(&Tensor<T>, &Tensor<T>)>,
    mode: Mode,
) -> Result<NormOutput<T>, NnError> {
    let (n, c, l) = dims3(x)?;
    if scale.shape() != [c] || shift.shape() != [c] {
        return Err(NnError::Shape(format!("norm affine params must be [{c}]")));
    }
    let groups = match kind {
        NormKind::Group => {
            if groups == 0 || c % groups != 0 {
                return Err(NnError::Config(format!("{c} channels not divisible into {groups} groups")));
            }
            groups
        }
        _ => 1,
    };
    let eps = T::from_f64(NORM_EPS);
    let mut update = None;
    let (mean, var) = match (kind, mode) {
        (NormKind::Batch, Mode::Eval) => {
            let (rm, rv) = running.ok_or_else(|| NnError::Config("batch norm needs running statistics".into()))?;
            (rm.data().to_vec(), rv.data().to_vec())
        }
        (NormKind::Batch, Mode::Train) => {
            if n * l < 2 {
                return Err(NnError::DegenerateBatch(n * l));
            }
            let (mean, var) = norm_moments(x, kind, groups)?;
            if let Some((rm, rv)) = running {
                let m = T::from_f64(BN_MOMENTUM);
                let unbias = T::from_f64((n * l) as f64 / (n * l - 1) as f64);
                update = Some(RunningUpdate {
                    mean: rm.data().iter().zip(&mean).map(|(&r, &b)| (T::one() - m) * r + m * b).collect(),
                    var: rv.data().iter().zip(&var).map(|(&r, &b)| (T::one() - m) * r + m * b * unbias).collect(),
                });
            }
            (mean, var)
        }
        _ => norm_moments(x, kind, groups)?,
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = x.zeros_like();
    let mut y = x.zeros_like();
    for s in 0..n {
        for ch in 0..c {
            let set = norm_set(kind, groups, c, s, ch);
            let (mu, is) = (mean[set], inv_std[set]);
            let (g, b) = (scale.data()[ch], shift.data()[ch]);
            let off = (s * c + ch) * l;
            let xs = &x.data()[off..off + l];
            let hs = &mut xhat.data_mut()[off..off + l];
            for (h, &v) in hs.iter_mut().zip(xs) {
                *h = (v - mu) * is;
            }
            let ys = &mut y.data_mut()[off..off + l];
            for (o, &h) in ys.iter_mut().zip(&xhat.data()[off..off + l]) {
                *o = g * h + b;
            }
        }
    }
    Ok((
        y,
        NormCache {
            xhat,
            inv_std,
            kind,
            groups,
        },
        update,
    ))
}

/// Gradients of a train-mode [`norm_forward`]: `(grad_x, grad_scale, grad_shift)`.
pub fn norm_backward<T: Scalar>(
    cache: &NormCache<T>,
    scale: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<LayerGrads<T>, NnError> {
    let (n, c, l) = dims3(&cache.xhat)?;
    if grad_out.shape() != cache.xhat.shape() {
        return Err(NnError::StaleCache(format!(
            "norm cache {:?} vs grad {:?}",
            cache.xhat.shape(),
            grad_out.shape()
        )));
    }
    let (kind, groups) = (cache.kind, cache.groups);
    let sets = norm_set_count(kind, groups, n, c);
    let mut gscale = scale.zeros_like();
    let mut gshift = scale.zeros_like();
    // Per-set sums of dxhat and dxhat·xhat.
    let mut sum_d = vec![T::zero(); sets];
    let mut sum_dx = vec![T::zero(); sets];
    let mut count = vec![0usize; sets];
    for s in 0..n {
        for ch in 0..c {
            let set = norm_set(kind, groups, c, s, ch);
            let off = (s * c + ch) * l;
            let g = scale.data()[ch];
            let (mut a, mut b, mut gs, mut gh) = (T::zero(), T::zero(), T::zero(), T::zero());
            for (&dy, &h) in grad_out.data()[off..off + l].iter().zip(&cache.xhat.data()[off..off + l]) {
                gs += dy * h;
                gh += dy;
                let d = dy * g;
                a += d;
                b += d * h;
            }
            gscale.data_mut()[ch] += gs;
            gshift.data_mut()[ch] += gh;
            sum_d[set] += a;
            sum_dx[set] += b;
            count[set] += l;
        }
    }
    let mut gx = grad_out.zeros_like();
    for s in 0..n {
        for ch in 0..c {
            let set = norm_set(kind, groups, c, s, ch);
            let inv_m = T::one() / T::from_usize(count[set]);
            let (md, mdx, is) = (sum_d[set] * inv_m, sum_dx[set] * inv_m, cache.inv_std[set]);
            let g = scale.data()[ch];
            let off = (s * c + ch) * l;
            let dst = &mut gx.data_mut()[off..off + l];
            for ((o, &dy), &h) in dst.iter_mut().zip(&grad_out.data()[off..off + l]).zip(&cache.xhat.data()[off..off + l]) {
                *o = is * (dy * g - md - h * mdx);
            }
        }
    }
    Ok((gx, gscale, gshift))
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Backward of ReLU given its output.
pub fn relu_backward<T: Scalar>(out: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut g = grad_out.clone();
    for (gv, &o) in g.data_mut().iter_mut().zip(out.data()) {
        if o <= T::zero() {
            *gv = T::zero();
        }
    }
    g
}

/// Max-pool with window 2, stride 2 and the same ceil length rule as the
/// convolutions; padded positions never win. Returns output and argmax
/// source indices.
pub fn maxpool2_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>), NnError> {
    let (n, c, l) = dims3(x)?;
    let (out_len, pad_left) = same_padding(l, 2, 2);
    let mut y = Tensor::<T>::zeros(&[n, c, out_len])?;
    let mut arg = vec![0usize; n * c * out_len];
    for row in 0..n * c {
        let src = &x.data()[row * l..(row + 1) * l];
        for t in 0..out_len {
            let mut best: Option<(usize, T)> = None;
            for kk in 0..2 {
                let pos = (2 * t + kk) as isize - pad_left as isize;
                if pos < 0 || pos as usize >= l {
                    continue;
                }
                let v = src[pos as usize];
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((pos as usize, v));
                }
            }
            let (p, v) = best.expect("window overlaps input");
            y.data_mut()[row * out_len + t] = v;
            arg[row * out_len + t] = row * l + p;
        }
    }
    Ok((y, arg))
}

pub fn maxpool2_backward<T: Scalar>(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let mut gx = Tensor::<T>::zeros(input_shape)?;
    for (&src, &g) in argmax.iter().zip(grad_out.data()) {
        gx.data_mut()[src] += g;
    }
    Ok(gx)
}

/// Inverted dropout; returns output and the scaled keep mask.
pub fn dropout_forward<T: Scalar>(x: &Tensor<T>, p: f64, rng: &mut SeededRng) -> (Tensor<T>, Tensor<T>) {
    let keep = T::from_f64(1.0 / (1.0 - p));
    let mut mask = x.zeros_like();
    for m in mask.data_mut() {
        *m = if rng.next_f64() >= p { keep } else { T::zero() };
    }
    let mut y = x.clone();
    for (v, &m) in y.data_mut().iter_mut().zip(mask.data()) {
        *v *= m;
    }
    (y, mask)
}

/// `x [N, F] → x·Wᵀ + b` with `W [out, F]`.
pub fn dense_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (n, f) = match *x.shape() {
        [n, f] => (n, f),
        _ => return Err(NnError::Shape(format!("dense input must be [N, F], got {:?}", x.shape()))),
    };
    let out = w.shape()[0];
    if w.shape() != [out, f] || b.shape() != [out] {
        return Err(NnError::Shape(format!("dense weight {:?} for input {:?}", w.shape(), x.shape())));
    }
    let mut y = Tensor::<T>::zeros(&[n, out])?;
    for row in y.data_mut().chunks_mut(out) {
        row.copy_from_slice(b.data());
    }
    T::gemm(n, f, out, T::one(), x.data(), (f as isize, 1), w.data(), (1, f as isize), T::one(), y.data_mut(), (out as isize, 1));
    Ok(y)
}

/// `(grad_x, grad_w, grad_b)` for [`dense_forward`].
pub fn dense_backward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, grad_out: &Tensor<T>) -> Result<LayerGrads<T>, NnError> {
    let (n, f) = (x.shape()[0], x.shape()[1]);
    let out = w.shape()[0];
    if grad_out.shape() != [n, out] {
        return Err(NnError::StaleCache(format!("dense grad {:?}", grad_out.shape())));
    }
    let mut gx = x.zeros_like();
    let mut gw = w.zeros_like();
    let mut gb = Tensor::<T>::zeros(&[out])?;
    T::gemm(n, out, f, T::one(), grad_out.data(), (out as isize, 1), w.data(), (f as isize, 1), T::zero(), gx.data_mut(), (f as isize, 1));
    T::gemm(out, n, f, T::one(), grad_out.data(), (1, out as isize), x.data(), (f as isize, 1), T::zero(), gw.data_mut(), (f as isize, 1));
    for row in grad_out.data().chunks(out) {
        for (g, &v) in gb.data_mut().iter_mut().zip(row) {
            *g += v;
        }
    }
    Ok((gx, gw, gb))
}
