//! Flat `key = value` run configuration.
//!
//! Files hold one assignment per line; `#` starts a comment. Command-line
//! overrides are applied after the file, in order. Keys that only apply to
//! one aggregator or norm kind are rejected when set under another, and the
//! resolved echo lists only the keys that apply, so it parses back to the
//! same configuration.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;

use fedecg::exec::Exec;
use fedecg::fed::{AggregatorConfig, AggregatorKind, ExperimentConfig, OptimSpec};
use fedecg::metrics::F1Classes;
use fedecg::nn::{NetworkConfig, NormKind, Variant};
use fedecg::optim::{OptimizerKind, TrainSchedule};

/// Where a setting came from, for error messages.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Origin {
    Line(usize),
    Override,
    Default,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Line(n) => write!(f, "line {n}"),
            Origin::Override => f.write_str("command line"),
            Origin::Default => f.write_str("default"),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("{origin}: `{key}`: {reason}")]
pub struct ConfigError {
    pub key: String,
    pub origin: Origin,
    pub reason: String,
}

fn err(key: &str, origin: &Origin, reason: impl Into<String>) -> ConfigError {
    ConfigError {
        key: key.to_string(),
        origin: origin.clone(),
        reason: reason.into(),
    }
}

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "dataset",
    "clients",
    "synth_mix",
    "synth_per_client",
    "synth_test_per_class",
    "val_fraction",
    "variant",
    "norm",
    "groups",
    "base_channels",
    "filter_len",
    "dropout",
    "blocks",
    "width_every",
    "optimizer",
    "lr",
    "persist_optimizer",
    "aggregator",
    "mu",
    "alpha",
    "server_lr",
    "local_epochs",
    "max_rounds",
    "plateau_patience",
    "early_stop_patience",
    "lr_factor",
    "min_lr",
    "batch_size",
    "min_delta",
    "seed",
    "f1_classes",
    "exec",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthMix {
    Skewed,
    Uniform,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Manifest(PathBuf),
    Synth {
        mix: SynthMix,
        per_client: usize,
        test_per_class: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub data: DataSource,
    pub clients: usize,
}

/// Raw assignments with their origin; later ones win.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, (String, Origin)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = Self::default();
        for (i, line) in text.lines().enumerate() {
            let origin = Origin::Line(i + 1);
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| err(body, &origin, "expected `key = value`"))?;
            raw.set(k.trim(), v.trim(), origin)?;
        }
        Ok(raw)
    }

    pub fn set(&mut self, key: &str, value: &str, origin: Origin) -> Result<(), ConfigError> {
        if !KEYS.contains(&key) {
            return Err(err(key, &origin, "unknown key"));
        }
        self.entries.insert(key.to_string(), (value.to_string(), origin));
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| err(assignment, &Origin::Override, "expected key=value"))?;
        self.set(k.trim(), v.trim(), Origin::Override)
    }

    pub fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn raw(&self, key: &str) -> Option<&(String, Origin)> {
        self.entries.get(key)
    }

    fn get<V: std::str::FromStr>(&self, key: &str, default: V) -> Result<V, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some((v, origin)) => v.parse().map_err(|_| err(key, origin, format!("cannot parse {v:?}"))),
        }
    }

    fn choice<V: Copy>(&self, key: &str, default: V, options: &[(&str, V)]) -> Result<V, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some((v, origin)) => options.iter().find(|(n, _)| n == v).map(|(_, o)| *o).ok_or_else(|| {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                err(key, origin, format!("{v:?} is not one of {}", names.join(", ")))
            }),
        }
    }

    /// Fails if `key` was set while `applies` is false.
    fn only_when(&self, key: &str, applies: bool, context: &str) -> Result<(), ConfigError> {
        match self.raw(key) {
            Some((_, origin)) if !applies => Err(err(key, origin, format!("only valid {context}"))),
            _ => Ok(()),
        }
    }

    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let seed = match self.raw("seed") {
            None => return Err(err("seed", &Origin::Default, "a seed is required")),
            Some(_) => self.get::<u64>("seed", 0)?,
        };
        let clients: usize = self.get("clients", 8)?;
        let data = match self.raw("dataset") {
            None => return Err(err("dataset", &Origin::Default, "a dataset is required (`synth` or a manifest path)")),
            Some((v, _)) if v == "synth" => DataSource::Synth {
                mix: self.choice("synth_mix", SynthMix::Skewed, &[("skewed", SynthMix::Skewed), ("uniform", SynthMix::Uniform)])?,
                per_client: self.get("synth_per_client", 150)?,
                test_per_class: self.get("synth_test_per_class", 60)?,
            },
            Some((v, origin)) => {
                let path = PathBuf::from(v);
                if !path.is_file() {
                    return Err(err("dataset", origin, format!("manifest {v:?} does not exist")));
                }
                DataSource::Manifest(path)
            }
        };
        let synth = matches!(data, DataSource::Synth { .. });
        for key in ["synth_mix", "synth_per_client", "synth_test_per_class"] {
            self.only_when(key, synth, "with `dataset = synth`")?;
        }
        if clients == 0 {
            return Err(err("clients", self.origin("clients"), "must be at least 1"));
        }

        let norm = self.choice("norm", NormKind::Batch, &[("batch", NormKind::Batch), ("layer", NormKind::Layer), ("group", NormKind::Group)])?;
        self.only_when("groups", norm == NormKind::Group, "with `norm = group`")?;
        let base = match self.choice("variant", Variant::Default, &[("default", Variant::Default), ("small", Variant::Small)])? {
            Variant::Default => NetworkConfig::default(),
            Variant::Small => NetworkConfig::small(),
        };
        let net = NetworkConfig {
            norm,
            group_count: self.get("groups", if norm == NormKind::Group { 2 } else { 1 })?,
            base_channels: self.get("base_channels", base.base_channels)?,
            filter_len: self.get("filter_len", base.filter_len)?,
            dropout_p: self.get("dropout", base.dropout_p)?,
            blocks: self.raw("blocks").map(|_| self.get("blocks", 0)).transpose()?,
            width_every: self.raw("width_every").map(|_| self.get("width_every", 0)).transpose()?,
            ..base
        };
        let net = NetworkConfig {
            blocks: Some(net.num_blocks()),
            width_every: Some(net.width_every()),
            ..net
        };
        net.validate().map_err(|e| err("variant", self.origin("variant"), e.to_string()))?;

        let kind = self.choice("optimizer", OptimizerKind::Adam, &[("adam", OptimizerKind::Adam), ("sgd", OptimizerKind::Sgd)])?;
        let optim = OptimSpec {
            kind,
            lr: self.get("lr", kind.default_lr())?,
            persist_state: self.get("persist_optimizer", false)?,
        };
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
        if !(optim.lr > 0.0) {
            return Err(err("lr", self.origin("lr"), "must be positive"));
        }

        let agg_kind = self.choice(
            "aggregator",
            AggregatorKind::Scaffold,
            &[
                ("fedavg", AggregatorKind::FedAvg),
                ("fedprox", AggregatorKind::FedProx),
                ("feddyn", AggregatorKind::FedDyn),
                ("scaffold", AggregatorKind::Scaffold),
            ],
        )?;
        self.only_when("mu", agg_kind == AggregatorKind::FedProx, "with `aggregator = fedprox`")?;
        self.only_when("alpha", agg_kind == AggregatorKind::FedDyn, "with `aggregator = feddyn`")?;
        self.only_when("server_lr", agg_kind == AggregatorKind::Scaffold, "with `aggregator = scaffold`")?;
        let d = AggregatorConfig::new(agg_kind);
        let agg = AggregatorConfig {
            kind: agg_kind,
            mu: self.get("mu", d.mu)?,
            alpha: self.get("alpha", d.alpha)?,
            server_lr: self.get("server_lr", d.server_lr)?,
            local_epochs: self.get("local_epochs", d.local_epochs)?,
        };
        agg.validate().map_err(|e| err(agg_key(agg_kind), self.origin(agg_key(agg_kind)), e.to_string()))?;

        let s = TrainSchedule::default();
        let schedule = TrainSchedule {
            max_rounds: self.get("max_rounds", s.max_rounds)?,
            plateau_patience: self.get("plateau_patience", s.plateau_patience)?,
            early_stop_patience: self.get("early_stop_patience", s.early_stop_patience)?,
            lr_factor: self.get("lr_factor", s.lr_factor)?,
            min_lr: self.get("min_lr", s.min_lr)?,
            batch_size: self.get("batch_size", s.batch_size)?,
            min_delta: self.get("min_delta", s.min_delta)?,
            val_fraction: self.get("val_fraction", s.val_fraction)?,
        };
        schedule
            .validate()
            .map_err(|e| err("early_stop_patience", self.origin("early_stop_patience"), e))?;

        let f1_classes = self.choice("f1_classes", F1Classes::All, &[("all", F1Classes::All), ("cinc3", F1Classes::Cinc3)])?;
        let exec = match self.raw("exec").map(|(v, o)| (v.as_str(), o)) {
            None => Exec::default(),
            Some(("sequential", _)) => Exec::Sequential,
            #[cfg(feature = "parallel")]
            Some(("parallel", _)) => Exec::Parallel,
            Some((v, o)) => return Err(err("exec", o, format!("{v:?} is not an available execution mode"))),
        };
        Ok(RunConfig {
            experiment: ExperimentConfig {
                net,
                agg,
                optim,
                schedule,
                seed,
                f1_classes,
                exec,
            },
            data,
            clients,
        })
    }

    fn origin(&self, key: &str) -> &Origin {
        self.raw(key).map(|(_, o)| o).unwrap_or(&Origin::Default)
    }
}

fn agg_key(kind: AggregatorKind) -> &'static str {
    match kind {
        AggregatorKind::FedProx => "mu",
        AggregatorKind::FedDyn => "alpha",
        AggregatorKind::Scaffold => "server_lr",
        AggregatorKind::FedAvg => "aggregator",
    }
}

fn name_of<V: PartialEq>(value: V, options: &[(&'static str, V)]) -> &'static str {
    options.iter().find(|(_, v)| *v == value).map(|(n, _)| *n).expect("every value has a name")
}

impl RunConfig {
    /// `key = value` text listing every applicable setting; parsing it back
    /// yields the same configuration.
    pub fn resolved_text(&self) -> String {
        let e = &self.experiment;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        match &self.data {
            DataSource::Manifest(p) => put("dataset", p.display().to_string()),
            DataSource::Synth {
                mix,
                per_client,
                test_per_class,
            } => {
                put("dataset", "synth".into());
                put("synth_mix", if *mix == SynthMix::Skewed { "skewed" } else { "uniform" }.into());
                put("synth_per_client", per_client.to_string());
                put("synth_test_per_class", test_per_class.to_string());
            }
        }
        put("clients", self.clients.to_string());
        put("val_fraction", e.schedule.val_fraction.to_string());
        let n = &e.net;
        put("variant", name_of(n.variant, &[("default", Variant::Default), ("small", Variant::Small)]).into());
        put("norm", name_of(n.norm, &[("batch", NormKind::Batch), ("layer", NormKind::Layer), ("group", NormKind::Group)]).into());
        if n.norm == NormKind::Group {
            put("groups", n.group_count.to_string());
        }
        put("base_channels", n.base_channels.to_string());
        put("filter_len", n.filter_len.to_string());
        put("dropout", n.dropout_p.to_string());
        put("blocks", n.num_blocks().to_string());
        put("width_every", n.width_every().to_string());
        put("optimizer", name_of(e.optim.kind, &[("adam", OptimizerKind::Adam), ("sgd", OptimizerKind::Sgd)]).into());
        put("lr", e.optim.lr.to_string());
        put("persist_optimizer", e.optim.persist_state.to_string());
        let kinds = [
            ("fedavg", AggregatorKind::FedAvg),
            ("fedprox", AggregatorKind::FedProx),
            ("feddyn", AggregatorKind::FedDyn),
            ("scaffold", AggregatorKind::Scaffold),
        ];
        put("aggregator", name_of(e.agg.kind, &kinds).into());
        match e.agg.kind {
            AggregatorKind::FedProx => put("mu", e.agg.mu.to_string()),
            AggregatorKind::FedDyn => put("alpha", e.agg.alpha.to_string()),
            AggregatorKind::Scaffold => put("server_lr", e.agg.server_lr.to_string()),
            AggregatorKind::FedAvg => {}
        }
        put("local_epochs", e.agg.local_epochs.to_string());
        let s = &e.schedule;
        put("max_rounds", s.max_rounds.to_string());
        put("plateau_patience", s.plateau_patience.to_string());
        put("early_stop_patience", s.early_stop_patience.to_string());
        put("lr_factor", s.lr_factor.to_string());
        put("min_lr", s.min_lr.to_string());
        put("batch_size", s.batch_size.to_string());
        put("min_delta", s.min_delta.to_string());
        put("seed", e.seed.to_string());
        put("f1_classes", if e.f1_classes == F1Classes::All { "all" } else { "cinc3" }.into());
        put(
            "exec",
            match e.exec {
                Exec::Sequential => "sequential",
                #[cfg(feature = "parallel")]
                Exec::Parallel => "parallel",
            }
            .into(),
        );
        out
    }
}

/// Rewrites `--<key> <value>` and `--<key>=<value>` for configuration keys
/// into `--set <key>=<value>`; dashes in the flag name map to underscores.
pub fn rewrite_key_flags(args: Vec<String>, reserved: &[&str]) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut it = args.into_iter().peekable();
    while let Some(a) = it.next() {
        let Some(flag) = a.strip_prefix("--") else {
            out.push(a);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        let key = name.replace('-', "_");
        if reserved.contains(&name.as_str()) || !KEYS.contains(&key.as_str()) {
            out.push(a);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => match it.next() {
                Some(v) => v,
                None => {
                    out.push(a);
                    continue;
                }
            },
        };
        out.push("--set".into());
        out.push(format!("{key}={value}"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(text: &str, overrides: &[&str]) -> Result<RunConfig, ConfigError> {
        let mut raw = RawConfig::parse(text)?;
        for o in overrides {
            raw.set_override(o)?;
        }
        raw.resolve()
    }

    #[test]
    fn defaults_are_materialized() {
        let cfg = resolve("", &["seed=3", "dataset=synth"]).unwrap();
        let text = cfg.resolved_text();
        for line in ["aggregator = scaffold", "server_lr = 1", "max_rounds = 256", "plateau_patience = 16", "early_stop_patience = 48", "optimizer = adam", "lr = 0.001", "variant = default", "seed = 3"] {
            assert!(text.contains(line), "{line} missing from\n{text}");
        }
        assert!(!text.contains("mu ="));
    }

    #[test]
    fn resolved_echo_round_trips() {
        for extra in [vec!["aggregator=fedprox", "mu=0.1"], vec!["aggregator=feddyn", "norm=group", "groups=4"], vec!["optimizer=sgd", "exec=sequential"]] {
            let mut o = vec!["seed=11", "dataset=synth"];
            o.extend(extra);
            let cfg = resolve("", &o).unwrap();
            let again = resolve(&cfg.resolved_text(), &[]).unwrap();
            assert_eq!(cfg, again);
            assert_eq!(cfg.resolved_text(), again.resolved_text());
        }
    }

    #[test]
    fn cross_key_validation() {
        let e = resolve("aggregator = scaffold\nseed = 1\ndataset = synth\n", &["mu=0.1"]).unwrap_err();
        assert_eq!(e.key, "mu");
        assert_eq!(e.origin, Origin::Override);
        let e = resolve("seed = 1\ndataset = synth\ngroups = 2\n", &[]).unwrap_err();
        assert_eq!((e.key.as_str(), e.origin), ("groups", Origin::Line(3)));
    }

    #[test]
    fn errors_name_key_and_line() {
        let e = resolve("# comment\nseed = 1\nlr = fast\ndataset = synth", &[]).unwrap_err();
        assert_eq!((e.key.as_str(), e.origin.clone()), ("lr", Origin::Line(3)));
        assert!(e.to_string().starts_with("line 3: `lr`"));
        let e = resolve("seed = 1\nlearning_rate = 0.1\n", &[]).unwrap_err();
        assert_eq!((e.key.as_str(), e.origin), ("learning_rate", Origin::Line(2)));
        assert_eq!(resolve("dataset = synth", &[]).unwrap_err().key, "seed");
        assert_eq!(resolve("seed = 1", &[]).unwrap_err().key, "dataset");
        assert_eq!(resolve("seed = 1\ndataset = /no/such/manifest.csv", &[]).unwrap_err().key, "dataset");
        assert_eq!(resolve("seed = 1\ndataset = synth\nnorm = instance", &[]).unwrap_err().key, "norm");
        assert_eq!(resolve("seed = 1\ndataset = synth\nplateau_patience = 60", &[]).unwrap_err().key, "early_stop_patience");
    }

    #[test]
    fn later_settings_win() {
        let cfg = resolve("seed = 1\ndataset = synth\nlr = 0.5\n", &["lr=0.25"]).unwrap();
        assert_eq!(cfg.experiment.optim.lr, 0.25);
    }

    #[test]
    fn key_flags_become_overrides() {
        let args: Vec<String> = ["fedecg", "federated", "--mu", "0.1", "--out", "x", "--max-rounds=3", "--seed", "4"].iter().map(|s| s.to_string()).collect();
        let got = rewrite_key_flags(args, &["seed", "out", "config", "set"]);
        assert_eq!(got, ["fedecg", "federated", "--set", "mu=0.1", "--out", "x", "--set", "max_rounds=3", "--seed", "4"]);
    }
}
