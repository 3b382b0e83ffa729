use std::f64::consts::PI;

use crate::exec::Exec;
use crate::tensor::SeededRng;

use super::{normalize_amplitude, partition_shards, EcgError, EcgRecord, Partition, RhythmLabel, ShardId, NUM_CLASSES};

/// Seeded synthetic ECG benchmark.
///
/// Counts are indexed by label code. RR parameters are in seconds and are
/// used by the beat-bearing classes (all but NOISE).
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub fs: u32,
    pub duration_s: f64,
    pub client_counts: Vec<[usize; NUM_CLASSES]>,
    pub test_counts: [usize; NUM_CLASSES],
    pub rr_mean: [f64; NUM_CLASSES],
    pub rr_jitter: [f64; NUM_CLASSES],
    pub noise_amplitude: f64,
    /// OTHER records replace every k-th beat with an early, inverted ectopic beat.
    pub ectopic_every: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::skewed(0, 8, 150, 60)
    }
}

impl SynthConfig {
    /// `clients` shards of `per_client` records, each dominated by two
    /// classes (40% each, 10% for the other two), plus a balanced test shard.
    pub fn skewed(seed: u64, clients: usize, per_client: usize, test_per_class: usize) -> Self {
        let minor = per_client / 10;
        let major_total = per_client - 2 * minor;
        let client_counts = (0..clients)
            .map(|k| {
                let a = k % NUM_CLASSES;
                let b = (k + 1 + k / NUM_CLASSES) % NUM_CLASSES;
                let mut c = [minor; NUM_CLASSES];
                c[a] = major_total - major_total / 2;
                c[b] = major_total / 2;
                c
            })
            .collect();
        Self {
            seed,
            fs: 200,
            duration_s: 30.0,
            client_counts,
            test_counts: [test_per_class; NUM_CLASSES],
            rr_mean: [0.8, 0.7, 0.8, 0.8],
            rr_jitter: [0.03, 0.35, 0.03, 0.0],
            noise_amplitude: 0.05,
            ectopic_every: 4,
        }
    }

    /// Every client shard with the same class counts.
    pub fn uniform(seed: u64, clients: usize, per_class: usize, test_per_class: usize) -> Self {
        Self {
            client_counts: vec![[per_class; NUM_CLASSES]; clients],
            test_counts: [test_per_class; NUM_CLASSES],
            ..Self::skewed(seed, clients, 10, test_per_class)
        }
    }

    pub fn samples_per_record(&self) -> usize {
        (self.fs as f64 * self.duration_s).round() as usize
    }
}

/// Generated records in shard order and the shard of each.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub records: Vec<EcgRecord>,
    pub assignment: Vec<(String, ShardId)>,
    pub num_clients: usize,
}

impl SynthOutput {
    pub fn partition(&self, exec: Exec) -> Result<Partition, EcgError> {
        partition_shards(&self.records, &self.assignment, self.num_clients, exec)
    }
}

fn shard_tag(shard: ShardId) -> u64 {
    match shard {
        ShardId::Client(k) => k as u64,
        ShardId::Test => u64::MAX - 1,
    }
}

/// RR intervals (seconds) of a beat sequence for `label`.
///
/// SINUS and AFIB draw `rr_mean·(1 + jitter·u)`, `u` uniform on `[−1, 1]`;
/// OTHER follows SINUS except that every `ectopic_every`-th beat arrives at
/// 65% of the base interval and is followed by a compensatory 135% pause.
/// NOISE has no beats.
pub fn rr_intervals(label: RhythmLabel, n_beats: usize, base: f64, cfg: &SynthConfig, rng: &mut SeededRng) -> Vec<f64> {
    let jitter = cfg.rr_jitter[label.code()];
    let k = cfg.ectopic_every.max(2);
    match label {
        RhythmLabel::Noise => Vec::new(),
        RhythmLabel::Other => {
            let mut out = Vec::with_capacity(n_beats);
            while out.len() < n_beats {
                let i = out.len();
                let rr = if i % k == k - 1 {
                    base * 0.65
                } else if i % k == 0 && i > 0 {
                    base * 1.35
                } else {
                    base * (1.0 + jitter * rng.uniform(-1.0, 1.0))
                };
                out.push(rr);
            }
            out
        }
        _ => (0..n_beats).map(|_| base * (1.0 + jitter * rng.uniform(-1.0, 1.0))).collect(),
    }
}

#[inline]
fn bump(t: f64, amp: f64, mu: f64, sigma: f64) -> f64 {
    let z = (t - mu) / sigma;
    amp * (-0.5 * z * z).exp()
}

fn add_beat(out: &mut [f64], fs: f64, tb: f64, ectopic: bool, p_wave: bool, scale: f64) {
    let lo = (((tb - 0.4) * fs).floor().max(0.0)) as usize;
    let hi = (((tb + 0.6) * fs).ceil().max(0.0) as usize).min(out.len());
    for (i, v) in out.iter_mut().enumerate().take(hi).skip(lo) {
        let t = i as f64 / fs - tb;
        let s = if ectopic {
            bump(t, -0.8, 0.0, 0.028) + bump(t, 0.25, 0.05, 0.02) + bump(t, 0.35, 0.3, 0.06)
        } else {
            let p = if p_wave { bump(t, 0.12, -0.16, 0.022) } else { 0.0 };
            p + bump(t, -0.12, -0.025, 0.008)
                + bump(t, 1.0, 0.0, 0.010)
                + bump(t, -0.25, 0.028, 0.009)
                + bump(t, 0.28, 0.24, 0.045)
        };
        *v += scale * s;
    }
}

/// One synthetic record, amplitude-normalized to `[−1, 1]`.
pub fn synth_record(label: RhythmLabel, cfg: &SynthConfig, rng: &mut SeededRng) -> Vec<f32> {
    let fs = cfg.fs as f64;
    let n = cfg.samples_per_record();
    let mut x = vec![0.0f64; n];
    let scale = rng.uniform(0.7, 1.3);
    if label == RhythmLabel::Noise {
        // Smoothed white noise plus slow random-phase drifts, no beats.
        let width = ((fs / 50.0).round() as usize).max(1);
        let white: Vec<f64> = (0..n + width).map(|_| rng.normal()).collect();
        let mut acc: f64 = white[..width].iter().sum();
        for i in 0..n {
            x[i] = acc / width as f64;
            acc += white[i + width] - white[i];
        }
        for _ in 0..3 {
            let f = rng.uniform(0.5, 3.0);
            let phase = rng.uniform(0.0, 2.0 * PI);
            let a = rng.uniform(0.1, 0.4);
            for (i, v) in x.iter_mut().enumerate() {
                *v += a * (2.0 * PI * f * i as f64 / fs + phase).sin();
            }
        }
    } else {
        let base = cfg.rr_mean[label.code()] * rng.uniform(0.85, 1.15);
        let n_beats = (cfg.duration_s / (base * 0.5)).ceil() as usize + 2;
        let rr = rr_intervals(label, n_beats, base, cfg, rng);
        let k = cfg.ectopic_every.max(2);
        let mut tb = rng.uniform(0.0, base);
        for (i, interval) in rr.iter().enumerate() {
            if tb > cfg.duration_s + 0.5 {
                break;
            }
            // Beat i follows interval i − 1: the short interval precedes the
            // ectopic beat and the compensatory pause follows it.
            let ectopic = label == RhythmLabel::Other && i % k == 0 && i > 0;
            add_beat(&mut x, fs, tb, ectopic, label != RhythmLabel::Afib, scale);
            tb += interval;
        }
        if label == RhythmLabel::Afib {
            let f = rng.uniform(5.0, 8.0);
            let phase = rng.uniform(0.0, 2.0 * PI);
            for (i, v) in x.iter_mut().enumerate() {
                let t = i as f64 / fs;
                *v += 0.05 * scale * (2.0 * PI * f * t + phase).sin();
            }
        }
        let drift_f = rng.uniform(0.1, 0.4);
        let drift_phase = rng.uniform(0.0, 2.0 * PI);
        for (i, v) in x.iter_mut().enumerate() {
            *v += 0.1 * (2.0 * PI * drift_f * i as f64 / fs + drift_phase).sin();
        }
    }
    for v in x.iter_mut() {
        *v += cfg.noise_amplitude * rng.normal();
    }
    let mut out: Vec<f32> = x.into_iter().map(|v| v as f32).collect();
    normalize_amplitude(&mut out);
    out
}

/// Generates every shard of `cfg`. Each record draws from its own child
/// stream `(seed, shard, index)`, so the output does not depend on `exec`.
pub fn synth_generate(cfg: &SynthConfig, exec: Exec) -> SynthOutput {
    let root = SeededRng::new(cfg.seed);
    let mut jobs: Vec<(ShardId, usize, RhythmLabel)> = Vec::new();
    let shards = cfg
        .client_counts
        .iter()
        .enumerate()
        .map(|(k, c)| (ShardId::Client(k), *c))
        .chain(std::iter::once((ShardId::Test, cfg.test_counts)));
    for (shard, counts) in shards {
        let mut labels: Vec<RhythmLabel> = RhythmLabel::ALL
            .iter()
            .flat_map(|&l| std::iter::repeat_n(l, counts[l.code()]))
            .collect();
        root.child(&[shard_tag(shard), 0]).shuffle(&mut labels);
        jobs.extend(labels.into_iter().enumerate().map(|(i, l)| (shard, i, l)));
    }
    let records = exec.map(&jobs, |_, &(shard, i, label)| {
        let mut rng = root.child(&[shard_tag(shard), 1, i as u64]);
        EcgRecord {
            id: format!("{shard}_{i:05}"),
            fs: cfg.fs,
            samples: synth_record(label, cfg, &mut rng),
            label,
        }
    });
    let assignment = records.iter().zip(&jobs).map(|(r, j)| (r.id.clone(), j.0)).collect();
    SynthOutput {
        records,
        assignment,
        num_clients: cfg.client_counts.len(),
    }
}
