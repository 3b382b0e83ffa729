use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use log::info;

use fedecg::ecg::{load_manifest, partition_shards, synth_generate, write_manifest, Partition, ShardId, SynthConfig, NUM_CLASSES};
use fedecg::fed::{prepare_splits, run_scenario, ScenarioOutcome};
use fedecg::metrics::{format_confusion, write_metrics_csv, Scenario};
use fedecg::nn::{grad_check, GradCheckOptions, GradCheckReport, Network, NetworkConfig, ParamSet};
use fedecg::tensor::{uniform_symmetric, SeededRng};
use fedecg::transport::{write_flup, Envelope, MsgType, SERVER_ID};

use crate::config::{DataSource, RunConfig, SynthMix};

/// Relative-error bound for the gradient check.
pub const GRADCHECK_TOL: f64 = 1e-3;

pub fn synth_config(cfg: &RunConfig) -> Option<SynthConfig> {
    let seed = cfg.experiment.seed;
    match &cfg.data {
        DataSource::Manifest(_) => None,
        DataSource::Synth {
            mix: SynthMix::Skewed,
            per_client,
            test_per_class,
        } => Some(SynthConfig::skewed(seed, cfg.clients, *per_client, *test_per_class)),
        DataSource::Synth {
            mix: SynthMix::Uniform,
            per_client,
            test_per_class,
        } => Some(SynthConfig::uniform(seed, cfg.clients, per_client / NUM_CLASSES, *test_per_class)),
    }
}

pub fn load_partition(cfg: &RunConfig) -> Result<Partition> {
    let exec = cfg.experiment.exec;
    Ok(match (&cfg.data, synth_config(cfg)) {
        (_, Some(synth)) => synth_generate(&synth, exec).partition(exec)?,
        (DataSource::Manifest(path), None) => {
            let m = load_manifest(path).with_context(|| format!("loading {}", path.display()))?;
            partition_shards(&m.records, &m.assignment, cfg.clients, exec)?
        }
        (DataSource::Synth { .. }, None) => unreachable!("synthetic sources always yield a config"),
    })
}

fn histogram_text(partition: &Partition) -> String {
    let mut s = String::from("shard   SINUS   AFIB  OTHER  NOISE  total\n");
    for (id, h) in partition.histograms() {
        s.push_str(&format!("{:<6}", id.to_string()));
        for c in h {
            s.push_str(&format!(" {c:>6}"));
        }
        s.push_str(&format!(" {:>6}\n", h.iter().sum::<usize>()));
    }
    s
}

/// Model envelope for `models`; names get an `<owner>.` prefix unless the
/// only owner is `global`.
fn model_envelope(models: &[(String, ParamSet<f32>)], rounds: usize, samples: u64) -> Envelope {
    let mut env = Envelope::new(MsgType::GlobalModel, rounds as u32, SERVER_ID, samples);
    for (owner, params) in models {
        if owner == "global" {
            env.push_params(params);
        } else {
            let prefixed = ParamSet::from_entries(
                params
                    .iter()
                    .map(|(n, t)| (format!("{owner}.{n}"), t.clone()))
                    .collect(),
            )
            .expect("prefixing keeps names unique");
            env.push_params(&prefixed);
        }
    }
    env
}

fn write_outcome(out: &Path, scenario: Scenario, outcome: &ScenarioOutcome<f32>, cfg: &RunConfig, samples: u64) -> Result<()> {
    write_metrics_csv(&outcome.rows, &out.join("metrics.csv"))?;
    write_flup(&out.join("model.flup"), &model_envelope(&outcome.models, outcome.rounds_run, samples))?;
    let mut text = String::new();
    for ((owner, _), cm) in outcome.models.iter().zip(&outcome.test_confusion) {
        text.push_str(&format!("# {scenario} {owner} test\n"));
        text.push_str(&format_confusion(cm, cfg.experiment.f1_classes));
        text.push('\n');
    }
    fs::write(out.join("confusion.txt"), text)?;
    Ok(())
}

/// Runs one training scenario and writes its artifacts to `out`.
pub fn run_training(scenario: Scenario, cfg: &RunConfig, out: &Path) -> Result<ScenarioOutcome<f32>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.resolved"), cfg.resolved_text())?;
    let partition = load_partition(cfg)?;
    let e = &cfg.experiment;
    let data = prepare_splits::<f32>(&partition, e.schedule.val_fraction, e.seed);
    let samples: usize = data.train.iter().map(|d| d.len()).sum();
    info!("{scenario}: {} clients, {samples} training records, {} test", data.num_clients(), data.test.len());
    let outcome = run_scenario(scenario, e, &data)?;
    write_outcome(out, scenario, &outcome, cfg, samples as u64)?;
    println!("{scenario}: test macro-F1 {:.4} after {} rounds", outcome.test_f1, outcome.rounds_run);
    Ok(outcome)
}

/// Writes the synthetic benchmark as a manifest plus raw signal files.
pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<String> {
    let Some(synth) = synth_config(cfg) else {
        bail!("gen-data needs `dataset = synth`");
    };
    let generated = synth_generate(&synth, cfg.experiment.exec);
    let shard_of: std::collections::HashMap<&str, ShardId> =
        generated.assignment.iter().map(|(id, s)| (id.as_str(), *s)).collect();
    let entries: Vec<_> = generated.records.iter().map(|r| (r, shard_of[r.id.as_str()])).collect();
    let path = write_manifest(out, &entries)?;
    let hist = histogram_text(&generated.partition(cfg.experiment.exec)?);
    print!("{hist}");
    println!("wrote {}", path.display());
    Ok(hist)
}

/// The network the gradient check runs on: the configured norm, a small
/// width, two blocks and 512-sample inputs.
pub fn gradcheck_network(cfg: &RunConfig) -> NetworkConfig {
    let n = &cfg.experiment.net;
    NetworkConfig {
        input_len: 512,
        base_channels: 4,
        blocks: Some(2),
        width_every: Some(1),
        dropout_p: 0.0,
        ..n.clone()
    }
}

pub fn gradcheck(cfg: &RunConfig, sabotage: f64) -> Result<GradCheckReport> {
    let net_cfg = gradcheck_network(cfg);
    let root = SeededRng::new(cfg.experiment.seed);
    let net = Network::<f64>::build(net_cfg.clone(), &mut root.child(&[0]))?;
    let x = uniform_symmetric(&[2, 1, net_cfg.input_len], 1.0, &mut root.child(&[1]))?;
    let opts = GradCheckOptions {
        seed: cfg.experiment.seed,
        sabotage,
        ..GradCheckOptions::default()
    };
    let report = grad_check(&net, &x, &[0, 2], &opts)?;
    println!("{:<28} {:>6} {:>6} {:>12}", "tensor", "coords", "kinks", "max_rel_err");
    for t in &report.tensors {
        println!("{:<28} {:>6} {:>6} {:>12.3e}", t.name, t.coords, t.kinks, t.max_rel_err);
    }
    println!(
        "overall {} coords ({} at kinks), max_rel_err {:.3e} (tolerance {GRADCHECK_TOL:e})",
        report.coords, report.kinks, report.max_rel_err
    );
    Ok(report)
}
