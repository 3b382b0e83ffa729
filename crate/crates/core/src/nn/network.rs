use std::collections::HashMap;

use crate::tensor::{kaiming_uniform, uniform_symmetric, Scalar, SeededRng, Tensor};

use super::layers::{
    conv1d_backward, conv1d_forward, dense_backward, dense_forward, dropout_forward,
    maxpool2_backward, maxpool2_forward, norm_backward, norm_forward, relu, relu_backward,
    Conv1dCache, Mode, NormCache, RunningUpdate,
};
use super::{NetworkConfig, NnError, NormKind, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl BlockSpec {
    pub fn has_projection(&self) -> bool {
        self.in_channels != self.out_channels
    }
}

#[derive(Clone, Debug)]
enum ShortcutCache<T> {
    Identity,
    Pool { input_shape: Vec<usize>, argmax: Vec<usize> },
    Projection(Conv1dCache<T>),
}

#[derive(Clone, Debug)]
struct BlockCache<T> {
    norm1: NormCache<T>,
    relu1: Tensor<T>,
    conv1: Conv1dCache<T>,
    norm2: NormCache<T>,
    relu2: Tensor<T>,
    dropout_mask: Option<Tensor<T>>,
    conv2: Conv1dCache<T>,
    shortcut: ShortcutCache<T>,
}

/// Activations saved by a train-mode forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    mode: Mode,
    version: u64,
    batch: usize,
    stem: Option<Conv1dCache<T>>,
    blocks: Vec<BlockCache<T>>,
    head_norm: Option<NormCache<T>>,
    head_relu: Option<Tensor<T>>,
    flat: Option<Tensor<T>>,
}

impl<T> ForwardCache<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }
}

impl<T: Scalar> ForwardCache<T> {
    /// Which side of every ReLU and max-pool switch the pass took. Two passes
    /// with equal patterns lie on one smooth piece of the loss.
    pub fn switch_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        let mut relu = |t: &Tensor<T>| out.extend(t.data().iter().map(|&v| v > T::zero()));
        for b in &self.blocks {
            relu(&b.relu1);
            relu(&b.relu2);
        }
        if let Some(h) = &self.head_relu {
            relu(h);
        }
        for b in &self.blocks {
            if let ShortcutCache::Pool { argmax, .. } = &b.shortcut {
                out.extend(argmax.iter().map(|a| a % 2 == 0));
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Network<T> {
    config: NetworkConfig,
    blocks: Vec<BlockSpec>,
    state: ParamSet<T>,
    version: u64,
}

pub(crate) fn is_buffer_name(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var")
}

struct Ctx<'a, T> {
    mode: Mode,
    keep: bool,
    rng: Option<&'a mut SeededRng>,
    updates: Vec<(String, RunningUpdate<T>)>,
}

impl<T: Scalar> Network<T> {
    /// Builds and initializes a network.
    ///
    /// Convolution weights are Kaiming-uniform; the dense head uses bound
    /// `1/sqrt(fan_in)` and a zero bias; norm scale 1, shift 0, running
    /// mean 0 and running variance 1. Draws are consumed in canonical
    /// parameter order.
    pub fn build(config: NetworkConfig, rng: &mut SeededRng) -> Result<Self, NnError> {
        config.validate()?;
        let blocks = config.block_specs();
        let k = config.filter_len;
        let mut state = ParamSet::new();
        let conv = |state: &mut ParamSet<T>, rng: &mut SeededRng, name: &str, c_out: usize, c_in: usize, k: usize, bias: bool| -> Result<(), NnError> {
            state.push(format!("{name}.weight"), kaiming_uniform(&[c_out, c_in, k], c_in * k, rng)?)?;
            if bias {
                state.push(format!("{name}.bias"), Tensor::zeros(&[c_out])?)?;
            }
            Ok(())
        };
        let norm = |state: &mut ParamSet<T>, name: &str, c: usize| -> Result<(), NnError> {
            state.push(format!("{name}.scale"), Tensor::full(&[c], T::one())?)?;
            state.push(format!("{name}.shift"), Tensor::zeros(&[c])?)?;
            if config.norm == NormKind::Batch {
                state.push(format!("{name}.running_mean"), Tensor::zeros(&[c])?)?;
                state.push(format!("{name}.running_var"), Tensor::full(&[c], T::one())?)?;
            }
            Ok(())
        };
        // Every convolution output reaches the classifier only through a
        // normalization layer, so convolutions carry no bias.
        conv(&mut state, rng, "stem.conv", config.base_channels, 1, k, false)?;
        for (i, b) in blocks.iter().enumerate() {
            let p = format!("block{i}");
            norm(&mut state, &format!("{p}.norm1"), b.in_channels)?;
            conv(&mut state, rng, &format!("{p}.conv1"), b.out_channels, b.in_channels, k, false)?;
            norm(&mut state, &format!("{p}.norm2"), b.out_channels)?;
            conv(&mut state, rng, &format!("{p}.conv2"), b.out_channels, b.out_channels, k, false)?;
            if b.has_projection() {
                conv(&mut state, rng, &format!("{p}.proj"), b.out_channels, b.in_channels, 1, false)?;
            }
        }
        norm(&mut state, "head.norm", config.final_channels())?;
        let flat = config.flatten_dim();
        state.push(
            "head.dense.weight",
            uniform_symmetric(&[config.num_classes, flat], (1.0 / flat as f64).sqrt(), rng)?,
        )?;
        state.push("head.dense.bias", Tensor::zeros(&[config.num_classes])?)?;
        Ok(Self {
            config,
            blocks,
            state,
            version: 0,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    /// Full exchangeable state (trainable parameters and normalization
    /// buffers) in canonical order.
    pub fn state(&self) -> &ParamSet<T> {
        &self.state
    }

    /// Mutable access to the full state; invalidates outstanding caches.
    pub fn state_mut(&mut self) -> &mut ParamSet<T> {
        self.version += 1;
        &mut self.state
    }

    /// Replaces values from `src`, which must cover entries of this network.
    pub fn load_state(&mut self, src: &ParamSet<T>) -> Result<(), NnError> {
        self.state_mut().copy_from(src)
    }

    /// Trainable parameters only, canonical order.
    pub fn params(&self) -> ParamSet<T> {
        self.state.filter(|n| !is_buffer_name(n))
    }

    /// Normalization running statistics only.
    pub fn buffers(&self) -> ParamSet<T> {
        self.state.filter(is_buffer_name)
    }

    pub fn is_buffer(name: &str) -> bool {
        is_buffer_name(name)
    }

    pub fn param_count(&self) -> usize {
        self.state
            .iter()
            .filter(|(n, _)| !is_buffer_name(n))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Convolutions with the configured filter length: the stem plus two per
    /// residual block. 1×1 shortcut projections are not counted.
    pub fn conv_layer_count(&self) -> usize {
        self.state
            .names()
            .filter(|n| n.ends_with(".weight") && !n.starts_with("head.") && !n.contains(".proj."))
            .count()
    }

    pub fn projection_count(&self) -> usize {
        self.blocks.iter().filter(|b| b.has_projection()).count()
    }

    fn p(&self, name: &str) -> &Tensor<T> {
        self.state.expect(name)
    }

    fn norm(&self, name: &str, x: &Tensor<T>, ctx: &mut Ctx<'_, T>) -> Result<(Tensor<T>, NormCache<T>), NnError> {
        let running = if self.config.norm == NormKind::Batch {
            Some((
                self.p(&format!("{name}.running_mean")),
                self.p(&format!("{name}.running_var")),
            ))
        } else {
            None
        };
        let (y, cache, upd) = norm_forward(
            x,
            self.config.norm,
            self.config.group_count,
            self.p(&format!("{name}.scale")),
            self.p(&format!("{name}.shift")),
            running,
            ctx.mode,
        )?;
        if let Some(u) = upd {
            ctx.updates.push((name.to_string(), u));
        }
        Ok((y, cache))
    }

    fn block_forward_ctx(&self, i: usize, x: &Tensor<T>, ctx: &mut Ctx<'_, T>) -> Result<(Tensor<T>, Option<BlockCache<T>>), NnError> {
        let b = self.blocks[i];
        let p = format!("block{i}");
        let (n1, norm1) = self.norm(&format!("{p}.norm1"), x, ctx)?;
        let r1 = relu(&n1);
        let (c1, conv1) = conv1d_forward(&r1, self.p(&format!("{p}.conv1.weight")), None, b.stride)?;
        let (n2, norm2) = self.norm(&format!("{p}.norm2"), &c1, ctx)?;
        let r2 = relu(&n2);
        let (r2d, dropout_mask) = if ctx.mode == Mode::Train && self.config.dropout_p > 0.0 {
            let rng = ctx.rng.as_deref_mut().ok_or(NnError::MissingRng)?;
            let (y, m) = dropout_forward(&r2, self.config.dropout_p, rng);
            (y, Some(m))
        } else {
            (r2.clone(), None)
        };
        let (mut out, conv2) = conv1d_forward(&r2d, self.p(&format!("{p}.conv2.weight")), None, 1)?;
        let (sc, shortcut) = if b.has_projection() {
            let (y, c) = conv1d_forward(x, self.p(&format!("{p}.proj.weight")), None, b.stride)?;
            (y, ShortcutCache::Projection(c))
        } else if b.stride == 2 {
            let (y, argmax) = maxpool2_forward(x)?;
            (
                y,
                ShortcutCache::Pool {
                    input_shape: x.shape().to_vec(),
                    argmax,
                },
            )
        } else {
            (x.clone(), ShortcutCache::Identity)
        };
        if sc.shape() != out.shape() {
            return Err(NnError::Shape(format!(
                "block {i}: shortcut {:?} vs main path {:?}",
                sc.shape(),
                out.shape()
            )));
        }
        out.axpy(T::one(), &sc)?;
        let cache = ctx.keep.then_some(BlockCache {
            norm1,
            relu1: r1,
            conv1,
            norm2,
            relu2: r2,
            dropout_mask,
            conv2,
            shortcut,
        });
        Ok((out, cache))
    }

    /// One residual block in isolation (running statistics are not updated).
    pub fn block_forward(&self, i: usize, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let mut ctx = Ctx {
            mode,
            keep: false,
            rng: None,
            updates: Vec::new(),
        };
        Ok(self.block_forward_ctx(i, x, &mut ctx)?.0)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<usize, NnError> {
        match *x.shape() {
            [n, 1, l] if l == self.config.input_len => Ok(n),
            _ => Err(NnError::Shape(format!(
                "expected input [N, 1, {}], got {:?}",
                self.config.input_len,
                x.shape()
            ))),
        }
    }

    fn forward_ctx(&self, x: &Tensor<T>, ctx: &mut Ctx<'_, T>) -> Result<(Tensor<T>, ForwardCache<T>), NnError> {
        let n = self.check_input(x)?;
        let (mut h, stem) = conv1d_forward(x, self.p("stem.conv.weight"), None, 1)?;
        let mut blocks = Vec::new();
        for i in 0..self.blocks.len() {
            let (y, c) = self.block_forward_ctx(i, &h, ctx)?;
            if let Some(c) = c {
                blocks.push(c);
            }
            h = y;
        }
        let (hn, head_norm) = self.norm("head.norm", &h, ctx)?;
        let hr = relu(&hn);
        let flat = hr.clone().reshape(&[n, self.config.flatten_dim()])?;
        let logits = dense_forward(&flat, self.p("head.dense.weight"), self.p("head.dense.bias"))?;
        let keep = ctx.keep;
        Ok((
            logits,
            ForwardCache {
                mode: ctx.mode,
                version: self.version,
                batch: n,
                stem: keep.then_some(stem),
                blocks,
                head_norm: keep.then_some(head_norm),
                head_relu: keep.then_some(hr),
                flat: keep.then_some(flat),
            },
        ))
    }

    /// Train-mode forward without touching running statistics.
    pub fn forward_train_pure(&self, x: &Tensor<T>, rng: Option<&mut SeededRng>) -> Result<(Tensor<T>, ForwardCache<T>), NnError> {
        let mut ctx = Ctx {
            mode: Mode::Train,
            keep: true,
            rng,
            updates: Vec::new(),
        };
        self.forward_ctx(x, &mut ctx)
    }

    /// Forward pass. In train mode batch-norm running statistics are updated
    /// and the returned cache supports [`Network::backward`]; in eval mode the
    /// network is not modified.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: Option<&mut SeededRng>) -> Result<(Tensor<T>, ForwardCache<T>), NnError> {
        if mode == Mode::Eval {
            let logits = self.predict(x)?;
            return Ok((
                logits,
                ForwardCache {
                    mode,
                    version: self.version,
                    batch: x.shape()[0],
                    stem: None,
                    blocks: Vec::new(),
                    head_norm: None,
                    head_relu: None,
                    flat: None,
                },
            ));
        }
        let mut ctx = Ctx {
            mode,
            keep: true,
            rng,
            updates: Vec::new(),
        };
        let (logits, mut cache) = self.forward_ctx(x, &mut ctx)?;
        let updates = std::mem::take(&mut ctx.updates);
        // Running statistics are buffers and do not affect the cache.
        for (name, u) in updates {
            self.state
                .get_mut(&format!("{name}.running_mean"))
                .expect("batch norm buffer")
                .data_mut()
                .copy_from_slice(&u.mean);
            self.state
                .get_mut(&format!("{name}.running_var"))
                .expect("batch norm buffer")
                .data_mut()
                .copy_from_slice(&u.var);
        }
        cache.version = self.version;
        Ok((logits, cache))
    }

    /// Eval-mode logits.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut ctx = Ctx {
            mode: Mode::Eval,
            keep: false,
            rng: None,
            updates: Vec::new(),
        };
        Ok(self.forward_ctx(x, &mut ctx)?.0)
    }

    /// Gradients of the loss with respect to every trainable parameter, in
    /// canonical order.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_logits: &Tensor<T>) -> Result<ParamSet<T>, NnError> {
        if cache.mode != Mode::Train {
            return Err(NnError::EvalCache);
        }
        if cache.version != self.version {
            return Err(NnError::StaleCache(format!(
                "cache from parameter version {} used at version {}",
                cache.version, self.version
            )));
        }
        if grad_logits.shape() != [cache.batch, self.config.num_classes] {
            return Err(NnError::Shape(format!("grad_logits {:?}", grad_logits.shape())));
        }
        let stale = || NnError::StaleCache("incomplete cache".into());
        let mut grads: HashMap<String, Tensor<T>> = HashMap::new();

        let flat = cache.flat.as_ref().ok_or_else(stale)?;
        let (gflat, gw, gb) = dense_backward(flat, self.p("head.dense.weight"), grad_logits)?;
        grads.insert("head.dense.weight".into(), gw);
        grads.insert("head.dense.bias".into(), gb);
        let head_relu = cache.head_relu.as_ref().ok_or_else(stale)?;
        let g = gflat.reshape(head_relu.shape())?;
        let g = relu_backward(head_relu, &g);
        let (mut g, gs, gh) = norm_backward(cache.head_norm.as_ref().ok_or_else(stale)?, self.p("head.norm.scale"), &g)?;
        grads.insert("head.norm.scale".into(), gs);
        grads.insert("head.norm.shift".into(), gh);

        for (i, bc) in cache.blocks.iter().enumerate().rev() {
            let p = format!("block{i}");
            let w2 = self.p(&format!("{p}.conv2.weight"));
            let (gr2d, gw2, _) = conv1d_backward(&bc.conv2, w2, &g)?;
            grads.insert(format!("{p}.conv2.weight"), gw2);
            let mut gr2 = gr2d;
            if let Some(mask) = &bc.dropout_mask {
                for (v, &m) in gr2.data_mut().iter_mut().zip(mask.data()) {
                    *v *= m;
                }
            }
            let gn2 = relu_backward(&bc.relu2, &gr2);
            let (gc1, gs2, gh2) = norm_backward(&bc.norm2, self.p(&format!("{p}.norm2.scale")), &gn2)?;
            grads.insert(format!("{p}.norm2.scale"), gs2);
            grads.insert(format!("{p}.norm2.shift"), gh2);
            let (gr1, gw1, _) = conv1d_backward(&bc.conv1, self.p(&format!("{p}.conv1.weight")), &gc1)?;
            grads.insert(format!("{p}.conv1.weight"), gw1);
            let gn1 = relu_backward(&bc.relu1, &gr1);
            let (mut gx, gs1, gh1) = norm_backward(&bc.norm1, self.p(&format!("{p}.norm1.scale")), &gn1)?;
            grads.insert(format!("{p}.norm1.scale"), gs1);
            grads.insert(format!("{p}.norm1.shift"), gh1);
            let gsc = match &bc.shortcut {
                ShortcutCache::Identity => g,
                ShortcutCache::Pool { input_shape, argmax } => maxpool2_backward(input_shape, argmax, &g)?,
                ShortcutCache::Projection(c) => {
                    let (gxs, gwp, _) = conv1d_backward(c, self.p(&format!("{p}.proj.weight")), &g)?;
                    grads.insert(format!("{p}.proj.weight"), gwp);
                    gxs
                }
            };
            gx.axpy(T::one(), &gsc)?;
            g = gx;
        }
        let (_, gw, _) = conv1d_backward(cache.stem.as_ref().ok_or_else(stale)?, self.p("stem.conv.weight"), &g)?;
        grads.insert("stem.conv.weight".into(), gw);

        let mut out = ParamSet::new();
        for (name, _) in self.state.iter().filter(|(n, _)| !is_buffer_name(n)) {
            let t = grads
                .remove(name)
                .ok_or_else(|| NnError::StaleCache(format!("no gradient for {name}")))?;
            out.push(name, t)?;
        }
        Ok(out)
    }
}
