use std::f64::consts::PI;
use std::sync::OnceLock;

use super::{EcgError, EcgRecord, TARGET_FS, WINDOW_LEN};

const TAPS: usize = 64;
/// Prototype centre; output sample `m` then sits exactly at input time `1.5·m`.
const CENTER: usize = 32;

/// Low-pass prototype for 300 → 200 Hz conversion at the 600 Hz up-rate.
///
/// Windowed sinc with cutoff 100 Hz (`fc = 1/6` of the up-rate), Hamming
/// window `0.54 + 0.46·cos(π(n − 32)/32)`, `n ∈ [0, 64)`. Each of the two
/// polyphase branches (even and odd `n`) is scaled to unit DC gain, which
/// absorbs the interpolation gain of 2.
pub fn resampler_taps() -> &'static [f64; TAPS] {
    static TAPS_CELL: OnceLock<[f64; TAPS]> = OnceLock::new();
    TAPS_CELL.get_or_init(|| {
        let fc = 1.0 / 6.0;
        let mut h = [0.0; TAPS];
        for (n, v) in h.iter_mut().enumerate() {
            let x = n as f64 - CENTER as f64;
            let arg = 2.0 * fc * x;
            let sinc = if x == 0.0 { 1.0 } else { (PI * arg).sin() / (PI * arg) };
            let w = 0.54 + 0.46 * (PI * x / CENTER as f64).cos();
            *v = 2.0 * fc * sinc * w;
        }
        for branch in 0..2 {
            let sum: f64 = h.iter().skip(branch).step_by(2).sum();
            for v in h.iter_mut().skip(branch).step_by(2) {
                *v /= sum;
            }
        }
        h
    })
}

fn resample_2_3(x: &[f32]) -> Vec<f32> {
    let h = resampler_taps();
    let out_len = (2 * x.len() + 1) / 3;
    (0..out_len)
        .map(|m| {
            // Taps h[3m − 2j + 32] with index in [0, 64).
            let t = 3 * m + CENTER;
            let j_lo = (t + 1).saturating_sub(TAPS).div_ceil(2);
            let j_hi = (t / 2).min(x.len().saturating_sub(1));
            let mut acc = 0.0f64;
            for j in j_lo..=j_hi {
                acc += x[j] as f64 * h[t - 2 * j];
            }
            acc as f32
        })
        .collect()
}

/// Brings a record to 200 Hz. 300 Hz input is resampled by 2/3 with
/// [`resampler_taps`]; output length is `round(len·2/3)`.
pub fn resample_to_200(rec: &EcgRecord) -> Result<EcgRecord, EcgError> {
    let samples = match rec.fs {
        200 => rec.samples.clone(),
        300 => resample_2_3(&rec.samples),
        other => return Err(EcgError::Rate(other)),
    };
    Ok(EcgRecord {
        id: rec.id.clone(),
        fs: TARGET_FS,
        samples,
        label: rec.label,
    })
}

/// Zero-pads (extra sample on the right) or centre-crops (extra trim on the
/// left) to exactly [`WINDOW_LEN`] samples.
pub fn fix_length(samples: &[f32]) -> Vec<f32> {
    let n = samples.len();
    if n >= WINDOW_LEN {
        let excess = n - WINDOW_LEN;
        let left = excess - excess / 2;
        samples[left..left + WINDOW_LEN].to_vec()
    } else {
        let left = (WINDOW_LEN - n) / 2;
        let mut out = vec![0.0; WINDOW_LEN];
        out[left..left + n].copy_from_slice(samples);
        out
    }
}

/// Scales to peak absolute value 1; all-zero input is returned unchanged.
pub fn normalize_amplitude(samples: &mut [f32]) {
    let peak = samples.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if peak > 0.0 && peak.is_finite() {
        for v in samples {
            *v /= peak;
        }
    }
}

/// Resample, fix length, normalize: the window the model consumes.
pub fn prepare_window(rec: &EcgRecord) -> Result<Vec<f32>, EcgError> {
    let r = resample_to_200(rec)?;
    let mut w = fix_length(&r.samples);
    normalize_amplitude(&mut w);
    Ok(w)
}
