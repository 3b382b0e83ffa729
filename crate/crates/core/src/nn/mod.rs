//! 1D residual CNN for raw single-lead ECG windows.
//!
//! Layout (pre-activation residual blocks):
//!
//! ```text
//! stem conv(K) ─► block₀ … blockₙ₋₁ ─► norm ─► ReLU ─► flatten ─► dense ─► logits
//! block: x ─► norm ─► ReLU ─► conv(K, stride s) ─► norm ─► ReLU ─► [dropout] ─► conv(K) ─► (+) ─►
//!        └──────────── shortcut: identity | max-pool(2) | 1×1 conv(stride s) ────────────┘
//! ```
//!
//! The default variant has 16 blocks, subsampling on every odd block and a
//! channel width of `base·k` with `k` incremented every fourth block. The
//! small variant has 8 blocks, subsamples on every block and increments `k`
//! every second block, so both end at `4·base` channels and a temporal length
//! of `ceil(L / 2⁸)`.

mod gradcheck;
mod layers;
mod loss;
mod network;
mod params;

pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport, TensorCheck};
pub use layers::{
    conv1d_backward, conv1d_forward, dense_backward, dense_forward, maxpool2_backward,
    maxpool2_forward, norm_backward, norm_forward, relu, same_padding, Conv1dCache, Mode,
    NormCache, BN_MOMENTUM, NORM_EPS,
};
pub use loss::{argmax_rows, loss_and_grad};
pub use network::{BlockSpec, ForwardCache, Network};
pub use params::ParamSet;

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("cache does not match this call: {0}")]
    StaleCache(String),
    #[error("batch norm in train mode needs at least 2 values per channel, got {0}")]
    DegenerateBatch(usize),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("duplicate parameter name {0}")]
    DuplicateName(String),
    #[error("parameter sets not aligned: {0}")]
    Misaligned(String),
    #[error("backward requires a train-mode cache")]
    EvalCache,
    #[error("dropout needs a random source in train mode")]
    MissingRng,
    #[error(transparent)]
    Tensor(TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Default,
    Small,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NormKind {
    Batch,
    Layer,
    Group,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub variant: Variant,
    pub norm: NormKind,
    /// Only meaningful for [`NormKind::Group`].
    pub group_count: usize,
    pub input_len: usize,
    pub base_channels: usize,
    pub filter_len: usize,
    pub num_classes: usize,
    pub dropout_p: f64,
    /// Overrides the variant's block count (16 or 8).
    pub blocks: Option<usize>,
    /// Overrides how many blocks share a width multiplier (4 or 2).
    pub width_every: Option<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Default,
            norm: NormKind::Batch,
            group_count: 1,
            input_len: 6000,
            base_channels: 64,
            filter_len: 16,
            num_classes: 4,
            dropout_p: 0.0,
            blocks: None,
            width_every: None,
        }
    }
}

impl NetworkConfig {
    pub fn small() -> Self {
        Self {
            variant: Variant::Small,
            ..Self::default()
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.unwrap_or(match self.variant {
            Variant::Default => 16,
            Variant::Small => 8,
        })
    }

    pub fn width_every(&self) -> usize {
        self.width_every.unwrap_or(match self.variant {
            Variant::Default => 4,
            Variant::Small => 2,
        })
    }

    /// Whether block `i` halves the temporal length.
    pub fn subsamples(&self, i: usize) -> bool {
        match self.variant {
            Variant::Default => i % 2 == 1,
            Variant::Small => true,
        }
    }

    /// Output channel width of block `i`.
    pub fn block_width(&self, i: usize) -> usize {
        self.base_channels * (1 + i / self.width_every())
    }

    pub fn block_specs(&self) -> Vec<BlockSpec> {
        let mut in_ch = self.base_channels;
        (0..self.num_blocks())
            .map(|i| {
                let out_ch = self.block_width(i);
                let spec = BlockSpec {
                    in_channels: in_ch,
                    out_channels: out_ch,
                    stride: if self.subsamples(i) { 2 } else { 1 },
                };
                in_ch = out_ch;
                spec
            })
            .collect()
    }

    pub fn num_subsamplings(&self) -> usize {
        (0..self.num_blocks()).filter(|&i| self.subsamples(i)).count()
    }

    /// Temporal length after all blocks: iterated ceil-halvings.
    pub fn final_len(&self) -> usize {
        (0..self.num_subsamplings()).fold(self.input_len, |l, _| l.div_ceil(2))
    }

    pub fn final_channels(&self) -> usize {
        self.block_specs()
            .last()
            .map_or(self.base_channels, |b| b.out_channels)
    }

    pub fn flatten_dim(&self) -> usize {
        self.final_channels() * self.final_len()
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let err = |m: String| Err(NnError::Config(m));
        if self.base_channels == 0 || self.filter_len == 0 || self.num_classes < 2 {
            return err("base_channels and filter_len must be positive, num_classes at least 2".into());
        }
        if self.num_blocks() == 0 || self.width_every() == 0 {
            return err("block count and width_every must be positive".into());
        }
        if self.norm == NormKind::Group
            && (self.group_count == 0 || !self.base_channels.is_multiple_of(self.group_count))
        {
            return err(format!(
                "base_channels {} not divisible by group_count {}",
                self.base_channels, self.group_count
            ));
        }
        let min_len = 1usize << self.num_subsamplings();
        if self.input_len < min_len {
            return err(format!("input_len {} below {min_len}", self.input_len));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return err(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_channel_schedule() {
        let c = NetworkConfig::default();
        let widths: Vec<usize> = c.block_specs().iter().map(|b| b.out_channels).collect();
        assert_eq!(
            widths,
            vec![64, 64, 64, 64, 128, 128, 128, 128, 192, 192, 192, 192, 256, 256, 256, 256]
        );
        assert_eq!(c.num_subsamplings(), 8);
        assert_eq!(c.final_len(), 24);
        assert_eq!(c.flatten_dim(), 6144);
    }

    #[test]
    fn small_channel_schedule() {
        let c = NetworkConfig::small();
        let widths: Vec<usize> = c.block_specs().iter().map(|b| b.out_channels).collect();
        assert_eq!(widths, vec![64, 64, 128, 128, 192, 192, 256, 256]);
        assert_eq!(c.num_subsamplings(), 8);
        assert_eq!(c.final_len(), 24);
        let alt = NetworkConfig {
            width_every: Some(4),
            ..NetworkConfig::small()
        };
        assert_eq!(alt.final_channels(), 128);
    }

    #[test]
    fn validation() {
        assert!(NetworkConfig::default().validate().is_ok());
        let g = NetworkConfig {
            norm: NormKind::Group,
            group_count: 3,
            ..NetworkConfig::default()
        };
        assert!(g.validate().is_err());
        let short = NetworkConfig {
            input_len: 255,
            ..NetworkConfig::default()
        };
        assert!(short.validate().is_err());
        let ok = NetworkConfig {
            input_len: 256,
            ..NetworkConfig::default()
        };
        assert!(ok.validate().is_ok());
    }
}
