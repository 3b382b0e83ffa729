//! End-to-end acceptance checks, one test per criterion. Tolerances and
//! sizes are fixed here; every test prints a single `PASS`/`FAIL` line with
//! the measured value before asserting.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use fedecg::ecg::{fix_length, prepare_window, resample_to_200, synth_generate, EcgRecord, RhythmLabel, SynthConfig, WINDOW_LEN};
use fedecg::exec::Exec;
use fedecg::fed::{
    aggregate, client_local_train, prepare_splits, run_scenario, shuffle_rng, trainable, AggregatorConfig, AggregatorKind, Client,
    ClientUpdate, ExperimentConfig, ExperimentData, Federation, OptimSpec, ServerState,
};
use fedecg::metrics::{accuracy, f1_scores, ConfusionMatrix, F1Classes, Scenario};
use fedecg::nn::{
    conv1d_backward, conv1d_forward, dense_backward, dense_forward, maxpool2_backward, maxpool2_forward, norm_backward, norm_forward,
    Mode, Network, NetworkConfig, NormKind, ParamSet,
};
use fedecg::optim::{run_schedule, train_epoch, Dataset, OptimizerKind, OptimizerState, TrainSchedule};
use fedecg::tensor::{uniform_symmetric, DType, Scalar, SeededRng, Tensor, TensorData};
use fedecg::transport::{decode_envelope, encode_envelope, DecodeError, Envelope, MsgType, WireTensor, HEADER_LEN};

fn report(criterion: u32, title: &str, ok: bool, detail: impl std::fmt::Display) {
    println!("[{}] {criterion:>2} {title}: {detail}", if ok { "PASS" } else { "FAIL" });
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fedecg"))
}

fn max_abs_diff<T: Scalar>(a: &ParamSet<T>, b: &ParamSet<T>) -> f64 {
    a.iter()
        .zip(b.iter())
        .flat_map(|((_, x), (_, y))| x.data().iter().zip(y.data()).map(|(p, q)| (p.as_f64() - q.as_f64()).abs()))
        .fold(0.0, f64::max)
}

fn random_dataset<T: Scalar>(n: usize, len: usize, rng: &mut SeededRng) -> Dataset<T> {
    let x = (0..n * len).map(|_| T::from_f64(rng.uniform(-1.0, 1.0))).collect();
    let y = (0..n).map(|_| rng.below(4) as usize).collect();
    Dataset::new(len, x, y).unwrap()
}

fn tiny_net(norm: NormKind, input_len: usize) -> NetworkConfig {
    NetworkConfig {
        norm,
        group_count: 2,
        input_len,
        base_channels: 4,
        filter_len: 5,
        blocks: Some(2),
        width_every: Some(1),
        ..NetworkConfig::small()
    }
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

/// Worst relative error between `analytic` and central differences of
/// `f` around `x`, over every coordinate.
fn fd_worst(f: impl Fn(&Tensor<f64>) -> f64, x: &Tensor<f64>, analytic: &Tensor<f64>) -> f64 {
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut up = x.clone();
        up.data_mut()[i] += h;
        let mut down = x.clone();
        down.data_mut()[i] -= h;
        let numeric = (f(&up) - f(&down)) / (2.0 * h);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8));
    }
    worst
}

fn project(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn layer_gradient_errors() -> Vec<(String, f64)> {
    let mut rng = SeededRng::new(41);
    let mut rand = |shape: &[usize]| uniform_symmetric::<f64>(shape, 1.0, &mut rng).unwrap();
    let mut out = Vec::new();

    for stride in [1, 2] {
        let x = rand(&[2, 3, 17]);
        let w = rand(&[5, 3, 4]);
        let b = rand(&[5]);
        let (y, cache) = conv1d_forward(&x, &w, Some(&b), stride).unwrap();
        let r = rand(y.shape());
        let (gx, gw, gb) = conv1d_backward(&cache, &w, &r).unwrap();
        let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| project(&conv1d_forward(x, w, Some(b), stride).unwrap().0, &r);
        let worst = fd_worst(|v| f(v, &w, &b), &x, &gx)
            .max(fd_worst(|v| f(&x, v, &b), &w, &gw))
            .max(fd_worst(|v| f(&x, &w, v), &b, &gb));
        out.push((format!("conv1d stride {stride}"), worst));
    }

    let ones = Tensor::full(&[4], 1.0).unwrap();
    let zeros = Tensor::zeros(&[4]).unwrap();
    for kind in [NormKind::Batch, NormKind::Layer, NormKind::Group] {
        let x = rand(&[3, 4, 9]);
        let s = rand(&[4]);
        let b = rand(&[4]);
        let run = |x: &Tensor<f64>, s: &Tensor<f64>, b: &Tensor<f64>| {
            norm_forward(x, kind, 2, s, b, Some((&zeros, &ones)), Mode::Train).unwrap()
        };
        let (y, cache, _) = run(&x, &s, &b);
        let r = rand(y.shape());
        let (gx, gs, gb) = norm_backward(&cache, &s, &r).unwrap();
        let worst = fd_worst(|v| project(&run(v, &s, &b).0, &r), &x, &gx)
            .max(fd_worst(|v| project(&run(&x, v, &b).0, &r), &s, &gs))
            .max(fd_worst(|v| project(&run(&x, &s, v).0, &r), &b, &gb));
        out.push((format!("{kind:?} norm"), worst));
    }

    let x = rand(&[3, 6]);
    let w = rand(&[4, 6]);
    let b = rand(&[4]);
    let r = rand(&[3, 4]);
    let (gx, gw, gb) = dense_backward(&x, &w, &r).unwrap();
    let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| project(&dense_forward(x, w, b).unwrap(), &r);
    let worst = fd_worst(|v| f(v, &w, &b), &x, &gx)
        .max(fd_worst(|v| f(&x, v, &b), &w, &gw))
        .max(fd_worst(|v| f(&x, &w, v), &b, &gb));
    out.push(("dense".into(), worst));

    let x = rand(&[2, 3, 11]);
    let (y, arg) = maxpool2_forward(&x).unwrap();
    let r = rand(y.shape());
    let gx = maxpool2_backward(x.shape(), &arg, &r).unwrap();
    out.push(("maxpool".into(), fd_worst(|v| project(&maxpool2_forward(v).unwrap().0, &r), &x, &gx)));
    out
}

fn parse_gradcheck(stdout: &str) -> Option<f64> {
    let line = stdout.lines().find(|l| l.starts_with("overall"))?;
    let tail = line.split("max_rel_err ").nth(1)?;
    tail.split_whitespace().next()?.parse().ok()
}

#[test]
fn c01_gradient_correctness() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut network = Vec::new();
    for norm in ["batch", "layer", "group"] {
        let out = bin()
            .args(["gradcheck", "--seed", "3", "--norm", norm, "--out"])
            .arg(dir.path())
            .output()
            .unwrap();
        let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
        let err = parse_gradcheck(&stdout).unwrap_or(f64::INFINITY);
        let per_layer = stdout.lines().filter(|l| l.contains(".weight") || l.contains(".scale")).count();
        network.push((norm, out.status.success(), err, per_layer));
    }
    let layers = layer_gradient_errors();
    let elapsed = start.elapsed();

    let net_ok = network.iter().all(|&(_, ok, e, n)| ok && e < 1e-3 && n > 0);
    let layers_ok = layers.iter().all(|(_, e)| *e < 1e-4);
    let ok = net_ok && layers_ok && elapsed < Duration::from_secs(60);
    let worst_net = network.iter().map(|n| n.2).fold(0.0, f64::max);
    let worst_layer = layers.iter().map(|l| l.1).fold(0.0, f64::max);
    report(
        1,
        "gradient check",
        ok,
        format!("network max {worst_net:.2e} (< 1e-3), layers max {worst_layer:.2e} (< 1e-4), {elapsed:.1?}"),
    );
    assert!(net_ok, "{network:?}");
    assert!(layers_ok, "{layers:?}");
    assert!(elapsed < Duration::from_secs(60));

    let sabotaged = bin()
        .args(["gradcheck", "--seed", "3", "--sabotage-backward", "0.01", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!sabotaged.status.success());
}

// ---------------------------------------------------------------------------
// 2. Single-client equivalence

#[test]
fn c02_single_client_equivalence() {
    let start = Instant::now();
    let seed = 5;
    let synth = SynthConfig::uniform(seed, 1, 50, 5);
    let partition = synth_generate(&synth, Exec::default()).partition(Exec::default()).unwrap();
    let train: Dataset<f32> = partition.clients[0].to_dataset();
    assert_eq!(train.len(), 200);
    let cfg = ExperimentConfig {
        net: NetworkConfig {
            base_channels: 4,
            ..NetworkConfig::small()
        },
        agg: AggregatorConfig::new(AggregatorKind::FedAvg),
        optim: OptimSpec::new(OptimizerKind::Adam),
        schedule: TrainSchedule {
            batch_size: 32,
            ..TrainSchedule::default()
        },
        seed,
        f1_classes: F1Classes::All,
        exec: Exec::default(),
    };
    let root = cfg.root_rng();
    let mut fed = Federation::new(
        "one",
        cfg.init_network::<f32>().unwrap(),
        vec![(train.clone(), Dataset::empty(train.input_len()))],
        None,
        cfg.agg.clone(),
        cfg.optim,
        cfg.schedule.batch_size,
        root.clone(),
        Exec::default(),
    )
    .unwrap();

    let mut central = cfg.init_network::<f32>().unwrap();
    let mut worst = 0.0f64;
    for r in 0..5u32 {
        fed.run_round(cfg.optim.lr).unwrap();
        let mut opt = OptimizerState::new(cfg.optim.kind, cfg.optim.lr);
        train_epoch(&mut central, &train, &mut opt, cfg.schedule.batch_size, &mut shuffle_rng(&root, 0, r), None).unwrap();
        worst = worst.max(max_abs_diff(&fed.server().global, central.state()));
    }
    let elapsed = start.elapsed();
    let ok = worst < 1e-6 && elapsed < Duration::from_secs(120);
    report(2, "single-client equivalence", ok, format!("max |Δparam| {worst:.2e} (< 1e-6) over 5 rounds, {elapsed:.1?}"));
    assert!(worst < 1e-6);
    assert!(elapsed < Duration::from_secs(120));
}

// ---------------------------------------------------------------------------
// 3. Degeneracy identities

fn toy_clients<T: Scalar>(n: usize, template: &Network<T>, rng: &mut SeededRng) -> Vec<(Dataset<T>, Dataset<T>)> {
    let len = template.config().input_len;
    (0..n)
        .map(|k| (random_dataset(6 + 3 * k, len, rng), random_dataset(3, len, rng)))
        .collect()
}

fn toy_federation<T: Scalar>(kind: AggregatorKind, mu: f64, seed: u64) -> Federation<T> {
    let template = Network::<T>::build(tiny_net(NormKind::Batch, 64), &mut SeededRng::new(seed)).unwrap();
    let clients = toy_clients(4, &template, &mut SeededRng::new(seed + 1));
    let agg = AggregatorConfig {
        mu,
        ..AggregatorConfig::new(kind)
    };
    Federation::new("deg", template, clients, None, agg, OptimSpec::new(OptimizerKind::Adam), 4, SeededRng::new(seed + 2), Exec::default())
        .unwrap()
}

fn random_set(shapes: &[(&str, Vec<usize>)], rng: &mut SeededRng) -> ParamSet<f64> {
    ParamSet::from_entries(
        shapes
            .iter()
            .map(|(n, s)| (n.to_string(), uniform_symmetric(s, 2.0, rng).unwrap()))
            .collect(),
    )
    .unwrap()
}

#[test]
fn c03_degeneracy_identities() {
    // FedProx with mu = 0 against FedAvg, whole rounds.
    let mut prox = toy_federation::<f32>(AggregatorKind::FedProx, 0.0, 9);
    let mut avg = toy_federation::<f32>(AggregatorKind::FedAvg, 0.0, 9);
    let mut prox_equal = true;
    for _ in 0..3 {
        let (a, b) = (prox.run_round(1e-3).unwrap(), avg.run_round(1e-3).unwrap());
        prox_equal &= prox.server().global.bit_eq(&avg.server().global) && a.client_losses == b.client_losses;
    }

    // Scaffold with zero control variates against FedAvg, first local pass.
    let template = Network::<f32>::build(tiny_net(NormKind::Batch, 64), &mut SeededRng::new(3)).unwrap();
    let data = toy_clients(3, &template, &mut SeededRng::new(4));
    let global = template.state().clone();
    let zeros = trainable(&global).zeros_like();
    let mut scaffold_equal = true;
    for (k, (train, val)) in data.into_iter().enumerate() {
        let pass = |kind: AggregatorKind| {
            let mut client = Client::new(k, train.clone(), val.clone(), &template);
            let c = (kind == AggregatorKind::Scaffold).then_some(&zeros);
            let agg = AggregatorConfig::new(kind);
            client_local_train(&mut client, &global, c, 0, 1e-3, &agg, &OptimSpec::new(OptimizerKind::Adam), 4, &mut SeededRng::new(k as u64))
                .unwrap()
        };
        let (s, a) = (pass(AggregatorKind::Scaffold), pass(AggregatorKind::FedAvg));
        scaffold_equal &= s.params_after.bit_eq(&a.params_after) && s.train_loss.to_bits() == a.train_loss.to_bits();
    }

    // Identical updates are a fixed point of every aggregator.
    let shapes = [("a.weight", vec![3, 2]), ("b.scale", vec![4]), ("b.running_mean", vec![4])];
    let mut rng = SeededRng::new(12);
    let mut drift = 0.0f64;
    for kind in [AggregatorKind::FedAvg, AggregatorKind::FedProx, AggregatorKind::FedDyn, AggregatorKind::Scaffold] {
        for _ in 0..20 {
            let w = random_set(&shapes, &mut rng);
            let mut server = ServerState::new(w.clone());
            server.c = random_set(&shapes[..2], &mut rng);
            let h_before = server.h.clone();
            let updates: Vec<ClientUpdate<f64>> = (0..5)
                .map(|k| ClientUpdate {
                    client_id: k,
                    round: 0,
                    num_samples: 1 + rng.below(50),
                    params_after: w.clone(),
                    control_delta: (kind == AggregatorKind::Scaffold).then(|| trainable(&w).zeros_like()),
                    train_loss: 0.0,
                    steps: 1,
                })
                .collect();
            aggregate(&updates, &mut server, &AggregatorConfig::new(kind), &[0, 1, 2, 3, 4]).unwrap();
            drift = drift.max(max_abs_diff(&server.global, &w)).max(max_abs_diff(&server.h, &h_before));
        }
    }

    let ok = prox_equal && scaffold_equal && drift <= 1e-12;
    report(
        3,
        "degeneracy identities",
        ok,
        format!("fedprox(mu=0)==fedavg {prox_equal}, scaffold(c=0)==fedavg {scaffold_equal}, fixed-point drift {drift:.1e} (<= 1e-12)"),
    );
    assert!(prox_equal && scaffold_equal);
    assert!(drift <= 1e-12);
}

// ---------------------------------------------------------------------------
// 4. Scaffold conservation

#[test]
fn c04_scaffold_conservation() {
    let template = Network::<f64>::build(tiny_net(NormKind::Batch, 64), &mut SeededRng::new(21)).unwrap();
    let clients = toy_clients(8, &template, &mut SeededRng::new(22));
    let mut fed = Federation::new(
        "scf",
        template,
        clients,
        None,
        AggregatorConfig::new(AggregatorKind::Scaffold),
        OptimSpec::new(OptimizerKind::Adam),
        4,
        SeededRng::new(23),
        Exec::default(),
    )
    .unwrap();
    let mut worst = 0.0f64;
    let mut magnitude = 0.0f64;
    for _ in 0..30 {
        fed.run_round(1e-3).unwrap();
        let c = &fed.server().c;
        let states: Vec<&ParamSet<f64>> = fed.clients().map(|cl| &cl.state.c_i).collect();
        for (i, (_, t)) in c.iter().enumerate() {
            for (j, &v) in t.data().iter().enumerate() {
                let mean = states.iter().map(|s| s.iter().nth(i).unwrap().1.data()[j]).sum::<f64>() / states.len() as f64;
                worst = worst.max((v - mean).abs());
                magnitude = magnitude.max(v.abs());
            }
        }
    }
    let ok = worst < 1e-6 && magnitude > 0.0;
    report(4, "scaffold conservation", ok, format!("max |c - mean c_i| {worst:.2e} (< 1e-6) over 30 rounds, max |c| {magnitude:.2}"));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 5. Weighted-mean oracle

fn weighted_mean_case<T: Scalar>(rng: &mut SeededRng) -> f64 {
    let tensors = 1 + rng.below(4) as usize;
    let shapes: Vec<Vec<usize>> = (0..tensors)
        .map(|_| (0..1 + rng.below(3)).map(|_| 1 + rng.below(4) as usize).collect())
        .collect();
    let global = ParamSet::from_entries(
        shapes
            .iter()
            .enumerate()
            .map(|(i, s)| (format!("t{i}.weight"), Tensor::<T>::zeros(s).unwrap()))
            .collect(),
    )
    .unwrap();
    let clients = 1 + rng.below(8) as usize;
    let mut updates: Vec<ClientUpdate<T>> = (0..clients)
        .map(|k| {
            let params = ParamSet::from_entries(
                global
                    .iter()
                    .map(|(n, t)| (n.to_string(), uniform_symmetric::<T>(t.shape(), 10.0, rng).unwrap()))
                    .collect(),
            )
            .unwrap();
            ClientUpdate {
                client_id: k,
                round: 0,
                num_samples: 1 + rng.below(1000),
                params_after: params,
                control_delta: None,
                train_loss: 0.0,
                steps: 1,
            }
        })
        .collect();
    let total: u64 = updates.iter().map(|u| u.num_samples).sum();
    let mut expected = Vec::new();
    for (i, (_, t)) in global.iter().enumerate() {
        for j in 0..t.len() {
            let mut acc = 0.0f64;
            for u in &updates {
                acc += (u.num_samples as f64 / total as f64) * u.params_after.iter().nth(i).unwrap().1.data()[j].as_f64();
            }
            expected.push(acc);
        }
    }
    rng.shuffle(&mut updates);
    let ids: Vec<usize> = (0..clients).collect();
    let mut server = ServerState::new(global);
    aggregate(&updates, &mut server, &AggregatorConfig::new(AggregatorKind::FedAvg), &ids).unwrap();
    let got = server.global.iter().flat_map(|(_, t)| t.data().iter().map(|v| v.as_f64()).collect::<Vec<_>>());
    got.zip(expected).map(|(g, e)| (g - e).abs()).fold(0.0, f64::max)
}

#[test]
fn c05_weighted_mean_oracle() {
    let mut rng = SeededRng::new(55);
    let worst64 = (0..1000).map(|_| weighted_mean_case::<f64>(&mut rng)).fold(0.0, f64::max);
    let worst32 = (0..1000).map(|_| weighted_mean_case::<f32>(&mut rng)).fold(0.0, f64::max);
    let ok = worst64 <= 1e-12 && worst32 <= 1e-5;
    report(5, "weighted-mean oracle", ok, format!("10^3 cases, f64 max err {worst64:.1e} (<= 1e-12), f32 {worst32:.1e} (<= 1e-5)"));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 6. Local < federated <= centralized at desk scale

/// Rounds of each scenario in the desk-scale trend run.
const TREND_ROUNDS: usize = 12;
const TREND_SEEDS: [u64; 3] = [0, 1, 2];

fn trend_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        net: NetworkConfig {
            base_channels: 4,
            ..NetworkConfig::small()
        },
        agg: AggregatorConfig::new(AggregatorKind::Scaffold),
        optim: OptimSpec::new(OptimizerKind::Adam),
        schedule: TrainSchedule {
            max_rounds: TREND_ROUNDS,
            ..TrainSchedule::default()
        },
        seed,
        f1_classes: F1Classes::All,
        exec: Exec::default(),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn c06_scenario_trend() {
    let start = Instant::now();
    let (mut local, mut fed, mut central) = (Vec::new(), Vec::new(), Vec::new());
    for seed in TREND_SEEDS {
        let synth = SynthConfig::skewed(seed, 8, 150, 60);
        let partition = synth_generate(&synth, Exec::default()).partition(Exec::default()).unwrap();
        let cfg = trend_config(seed);
        let data: ExperimentData<f32> = prepare_splits(&partition, cfg.schedule.val_fraction, seed);
        local.push(run_scenario(Scenario::Local, &cfg, &data).unwrap().test_f1);
        fed.push(run_scenario(Scenario::Federated, &cfg, &data).unwrap().test_f1);
        central.push(run_scenario(Scenario::Central, &cfg, &data).unwrap().test_f1);
    }
    let elapsed = start.elapsed();
    let (l, f, c) = (median(local.clone()), median(fed.clone()), median(central.clone()));
    let ok = l + 0.05 <= f && f <= c + 0.02 && elapsed < Duration::from_secs(15 * 60);
    report(
        6,
        "scenario trend",
        ok,
        format!("median F1 local {l:.3}, federated {f:.3}, central {c:.3}; need local+0.05 <= fed <= central+0.02; {elapsed:.0?}"),
    );
    println!("   per seed: local {local:.3?} federated {fed:.3?} central {central:.3?}");
    assert!(l + 0.05 <= f, "federated {f:.3} below local {l:.3} + 0.05");
    assert!(f <= c + 0.02);
    assert!(elapsed < Duration::from_secs(15 * 60));
}

// ---------------------------------------------------------------------------
// 7. Model size

#[test]
fn c07_model_size() {
    let default = Network::<f32>::build(NetworkConfig::default(), &mut SeededRng::new(0)).unwrap();
    let small = Network::<f32>::build(NetworkConfig::small(), &mut SeededRng::new(0)).unwrap();
    let ratio = small.param_count() as f64 / default.param_count() as f64;
    let convs = default.conv_layer_count();
    let sub = [NetworkConfig::default(), NetworkConfig::small()].map(|c| (1usize << c.num_subsamplings(), c.final_len()));
    let ok = (0.4..=0.6).contains(&ratio) && convs == 33 && sub == [(256, 24), (256, 24)];
    report(
        7,
        "model size",
        ok,
        format!("params small/default {ratio:.3} in [0.4, 0.6], default convs {convs} (33), subsampling/final len {sub:?}"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 8. Schedule contract

/// Plain restatement of the plateau and early-stop rules.
fn reference_schedule(values: &[f64], s: &TrainSchedule, lr0: f64) -> (Vec<f64>, Option<usize>) {
    let mut best = f64::INFINITY;
    let (mut since_improve, mut since_change) = (0usize, 0usize);
    let mut lr = lr0;
    let mut lrs = Vec::new();
    for (r, &v) in values.iter().enumerate().take(s.max_rounds) {
        if v < best - s.min_delta {
            best = v;
            since_improve = 0;
            since_change = 0;
        } else {
            since_improve += 1;
            since_change += 1;
        }
        if since_change >= s.plateau_patience {
            lr = (lr * s.lr_factor).max(s.min_lr);
            since_change = 0;
        }
        lrs.push(lr);
        if since_improve >= s.early_stop_patience {
            return (lrs, Some(r));
        }
    }
    (lrs, None)
}

#[test]
fn c08_schedule_contract() {
    let s = TrainSchedule::default();
    let scripted: Vec<f64> = std::iter::once(1.0).chain(std::iter::repeat_n(1.0, 60)).collect();
    let (lrs, stop) = run_schedule(&scripted, &s, 1e-3);
    let first_cut = lrs.iter().position(|&lr| lr < 1e-3);
    let scripted_ok = first_cut == Some(16) && stop == Some(48);

    let mut rng = SeededRng::new(8);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = 1 + rng.below(300) as usize;
        let step = [1e-5, 1e-4, 5e-4, 0.01][rng.below(4) as usize];
        let mut v = 1.0;
        let values: Vec<f64> = (0..n)
            .map(|_| {
                match rng.below(4) {
                    0 => v -= step * rng.next_f64() * 2.0,
                    1 => v += step * rng.next_f64(),
                    _ => {}
                }
                v
            })
            .collect();
        if run_schedule(&values, &s, 1e-3) != reference_schedule(&values, &s, 1e-3) {
            mismatches += 1;
        }
    }
    let ok = scripted_ok && mismatches == 0;
    report(8, "schedule contract", ok, format!("first lr cut at stagnant round {first_cut:?} (16), stop at {stop:?} (48), {mismatches}/1000 reference mismatches"));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 9. Wire format

fn random_envelope(rng: &mut SeededRng) -> Envelope {
    let types = [MsgType::GlobalModel, MsgType::ClientUpdate, MsgType::ControlState, MsgType::RoundDone, MsgType::Stop];
    let mut env = Envelope::new(types[rng.below(5) as usize], rng.next_u64() as u32, rng.next_u64() as u32, rng.next_u64());
    for t in 0..rng.below(5) {
        let name_len = rng.below(12) as usize;
        let name: String = (0..name_len).map(|_| char::from(b'a' + rng.below(26) as u8)).chain(format!(".{t}").chars()).collect();
        let dims: Vec<usize> = (0..rng.below(4)).map(|_| rng.below(5) as usize).collect();
        let count: usize = dims.iter().product();
        let data = if rng.below(2) == 0 {
            TensorData::F32((0..count).map(|_| f32::from_bits(rng.next_u64() as u32)).collect())
        } else {
            TensorData::F64((0..count).map(|_| f64::from_bits(rng.next_u64())).collect())
        };
        env.tensors.push(WireTensor { name, dims, data });
    }
    env
}

#[test]
fn c09_wire_format() {
    let mut rng = SeededRng::new(9);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let env = random_envelope(&mut rng);
        let bytes = encode_envelope(&env).unwrap();
        let back = decode_envelope(&bytes).unwrap();
        // Bitwise comparison keeps NaN payloads honest.
        let same = encode_envelope(&back).unwrap() == bytes
            && back.msg_type == env.msg_type
            && back.round == env.round
            && back.sender == env.sender
            && back.num_samples == env.num_samples
            && back.tensors.len() == env.tensors.len();
        mismatches += usize::from(!same);
    }

    let mut env = Envelope::new(MsgType::ClientUpdate, 3, 1, 10);
    env.tensors.push(WireTensor {
        name: "w".into(),
        dims: vec![2],
        data: TensorData::F32(vec![1.0, 2.0]),
    });
    let good = encode_envelope(&env).unwrap().to_vec();
    let mut magic = good.clone();
    magic[0] = b'X';
    let mut version = good.clone();
    version[4] = 9;
    let mut crc = good.clone();
    let last = crc.len() - 5;
    crc[last] ^= 1;
    let classes = [
        matches!(decode_envelope(&magic), Err(DecodeError::BadMagic(_))),
        matches!(decode_envelope(&version), Err(DecodeError::UnsupportedVersion(_))),
        matches!(decode_envelope(&crc), Err(DecodeError::Crc { .. })),
        (0..good.len()).all(|n| matches!(decode_envelope(&good[..n]), Err(DecodeError::Truncated { .. }))),
        HEADER_LEN < good.len() && DType::F32.code() == 0,
    ];
    let ok = mismatches == 0 && classes.iter().all(|&c| c);
    report(9, "wire format", ok, format!("{mismatches}/10000 round-trip mismatches; magic/version/crc/truncation errors {classes:?}"));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 10. Pipeline invariants

#[test]
fn c10_pipeline_invariants() {
    let mut rng = SeededRng::new(10);
    let mut bad_windows = 0;
    for i in 0..1000 {
        let fs = if i % 2 == 0 { 200 } else { 300 };
        let len = 1 + rng.below(20_000) as usize;
        let rec = EcgRecord {
            id: format!("r{i}"),
            fs,
            samples: (0..len).map(|_| rng.uniform(-1.0, 1.0) as f32).collect(),
            label: RhythmLabel::Sinus,
        };
        bad_windows += usize::from(prepare_window(&rec).unwrap().len() != WINDOW_LEN);
    }
    let f = 5.0;
    let sine: Vec<f32> = (0..9000).map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / 300.0).sin() as f32).collect();
    let rec = EcgRecord {
        id: "sine".into(),
        fs: 300,
        samples: sine,
        label: RhythmLabel::Sinus,
    };
    let out = resample_to_200(&rec).unwrap().samples;
    let resampled_len = out.len();
    let sine_err = out
        .iter()
        .enumerate()
        .take(out.len() - 200)
        .skip(200)
        .map(|(m, &v)| (v as f64 - (2.0 * std::f64::consts::PI * f * m as f64 / 200.0).sin()).abs())
        .fold(0.0, f64::max);
    let identity = fix_length(&out) == out;
    let ok = bad_windows == 0 && resampled_len == 6000 && sine_err < 0.01 && identity;
    report(
        10,
        "pipeline invariants",
        ok,
        format!("{bad_windows}/1000 windows off-length, 30 s @300 Hz -> {resampled_len} samples, 5 Hz error {sine_err:.2e} (< 0.01)"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 11. Metrics oracle

fn brute_f1(counts: &[[u64; 4]; 4]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (c, f) in out.iter_mut().enumerate() {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (t, row) in counts.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                match (t == c, p == c) {
                    (true, true) => tp += n,
                    (false, true) => fp += n,
                    (true, false) => fn_ += n,
                    _ => {}
                }
            }
        }
        // 2tp / (2tp + fp + fn) equals the harmonic mean of precision and recall.
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        *f = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    }
    out
}

#[test]
fn c11_metrics_oracle() {
    let mut rng = SeededRng::new(11);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let mut cm = ConfusionMatrix::default();
        let sparse = rng.below(3) == 0;
        for row in cm.counts.iter_mut() {
            for v in row.iter_mut() {
                *v = if sparse && rng.below(2) == 0 { 0 } else { rng.below(50) };
            }
        }
        let f = f1_scores(&cm);
        let expect = brute_f1(&cm.counts);
        let total: u64 = cm.counts.iter().flatten().sum();
        let diag: u64 = (0..4).map(|i| cm.counts[i][i]).sum();
        let acc_ok = match accuracy(&cm) {
            Ok(a) => total > 0 && a == diag as f64 / total as f64,
            Err(_) => total == 0,
        };
        let macro_expect = expect.iter().sum::<f64>() / 4.0;
        if f.per_class != expect || f.macro_f1 != macro_expect || !acc_ok {
            mismatches += 1;
        }
    }
    let mut cm = ConfusionMatrix::default();
    cm.counts[0][0] = 8;
    cm.counts[0][1] = 2;
    cm.counts[1][1] = 6;
    cm.counts[1][0] = 4;
    let f = f1_scores(&cm);
    let worked = (format!("{:.4}", f.per_class[0]), format!("{:.4}", f.per_class[1]));
    let ok = mismatches == 0 && worked == ("0.7273".into(), "0.6667".into());
    report(11, "metrics oracle", ok, format!("{mismatches}/10000 mismatches, worked example {worked:?}"));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 12. Determinism

const TINY_RUN: [&str; 16] = [
    "--dataset", "synth", "--clients", "3", "--synth-per-client", "12", "--synth-test-per-class", "3", "--variant", "small",
    "--base-channels", "4", "--max-rounds", "2", "--batch-size", "4",
];

fn run_twice(args: &[&str], files: &[&str], root: &Path) -> bool {
    let outputs: Vec<Vec<Vec<u8>>> = ["a", "b"]
        .iter()
        .map(|tag| {
            let out = root.join(format!("{}-{tag}", args[0]));
            let status = bin().args(args).arg("--out").arg(&out).output().unwrap();
            assert!(status.status.success(), "{args:?}: {}", String::from_utf8_lossy(&status.stderr));
            files.iter().map(|f| std::fs::read(out.join(f)).unwrap()).collect()
        })
        .collect();
    outputs[0] == outputs[1]
}

#[test]
fn c12_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut results = Vec::new();
    for cmd in ["central", "local", "federated"] {
        let mut args = vec![cmd, "--seed", "12"];
        args.extend(TINY_RUN);
        results.push((cmd, run_twice(&args, &["metrics.csv", "model.flup", "confusion.txt", "config.resolved"], dir.path())));
    }
    let gen = ["gen-data", "--seed", "12", "--clients", "2", "--synth-per-client", "4", "--synth-test-per-class", "1"];
    results.push(("gen-data", run_twice(&gen, &["manifest.csv", "signals/c0_00000.f32"], dir.path())));
    let ok = results.iter().all(|r| r.1);
    report(12, "determinism", ok, format!("byte-identical reruns {results:?}"));
    assert!(ok);
}
