//! ECG data plane: manifest ingestion, resampling to 200 Hz, fixed-length
//! windows, client/test sharding and a seeded synthetic generator.

mod manifest;
mod resample;
mod shard;
mod synth;

pub use manifest::{load_manifest, write_manifest, Manifest};
pub use resample::{fix_length, normalize_amplitude, prepare_window, resample_to_200, resampler_taps};
pub use shard::{partition_shards, Partition, Shard, ShardId};
pub use synth::{rr_intervals, synth_generate, synth_record, SynthConfig, SynthOutput};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Sample rate every window is brought to.
pub const TARGET_FS: u32 = 200;
/// Window length in samples (30 s at 200 Hz).
pub const WINDOW_LEN: usize = 6000;
pub const NUM_CLASSES: usize = 4;

#[derive(Debug, Error)]
pub enum EcgError {
    #[error("record {id}: {reason}")]
    Ingest { id: String, reason: String },
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("unsupported sample rate {0} Hz (expected 200 or 300)")]
    Rate(u32),
    #[error("partition: {0}")]
    Partition(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RhythmLabel {
    Sinus = 0,
    Afib = 1,
    Other = 2,
    Noise = 3,
}

impl RhythmLabel {
    pub const ALL: [RhythmLabel; 4] = [RhythmLabel::Sinus, RhythmLabel::Afib, RhythmLabel::Other, RhythmLabel::Noise];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            RhythmLabel::Sinus => "SINUS",
            RhythmLabel::Afib => "AFIB",
            RhythmLabel::Other => "OTHER",
            RhythmLabel::Noise => "NOISE",
        }
    }
}

impl fmt::Display for RhythmLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RhythmLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| format!("unknown label {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EcgRecord {
    pub id: String,
    pub fs: u32,
    pub samples: Vec<f32>,
    pub label: RhythmLabel,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_codes_and_names() {
        for (i, l) in RhythmLabel::ALL.iter().enumerate() {
            assert_eq!(l.code(), i);
            assert_eq!(RhythmLabel::from_code(i), Some(*l));
            assert_eq!(l.name().parse::<RhythmLabel>(), Ok(*l));
        }
        assert!("X".parse::<RhythmLabel>().is_err());
        assert_eq!(RhythmLabel::from_code(4), None);
    }
}
