use log::{info, warn};

use crate::ecg::Partition;
use crate::exec::Exec;
use crate::metrics::{confusion, f1_scores_over, ConfusionMatrix, F1Classes, MetricsRow, Scenario, Split};
use crate::nn::{Network, NetworkConfig, ParamSet};
use crate::optim::{
    early_stop_check, evaluate, plateau_update, train_epoch, Dataset, MonitorState, OptimizerState, StopDecision, TrainSchedule,
};
use crate::tensor::{Scalar, SeededRng};

use super::federation::SplitEvals;
use super::{shuffle_rng, AggregatorConfig, FedError, Federation, OptimSpec, SEED_INIT, SEED_SPLIT};

/// Everything that determines a run apart from the data.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub net: NetworkConfig,
    pub agg: AggregatorConfig,
    pub optim: OptimSpec,
    pub schedule: TrainSchedule,
    pub seed: u64,
    pub f1_classes: F1Classes,
    pub exec: Exec,
}

impl ExperimentConfig {
    pub fn root_rng(&self) -> SeededRng {
        SeededRng::new(self.seed)
    }

    /// The initial model shared by every scenario of this config.
    pub fn init_network<T: Scalar>(&self) -> Result<Network<T>, FedError> {
        Ok(Network::build(self.net.clone(), &mut self.root_rng().child(&[SEED_INIT]))?)
    }
}

/// Per-client train/validation splits and the shared test set.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentData<T> {
    pub train: Vec<Dataset<T>>,
    pub val: Vec<Dataset<T>>,
    pub test: Dataset<T>,
}

impl<T: Scalar> ExperimentData<T> {
    pub fn num_clients(&self) -> usize {
        self.train.len()
    }

    pub fn input_len(&self) -> usize {
        self.test.input_len()
    }
}

/// Holds out `val_fraction` of every client shard for validation, each with
/// its own seeded stream.
pub fn prepare_splits<T: Scalar>(partition: &Partition, val_fraction: f64, seed: u64) -> ExperimentData<T> {
    let root = SeededRng::new(seed);
    let (train, val) = partition
        .clients
        .iter()
        .enumerate()
        .map(|(k, shard)| {
            let (t, v) = shard.split_holdout(val_fraction, &mut root.child(&[SEED_SPLIT, k as u64]));
            (t.to_dataset(), v.to_dataset())
        })
        .unzip();
    ExperimentData {
        train,
        val,
        test: partition.test.to_dataset(),
    }
}

/// Result of one scenario run.
#[derive(Clone, Debug)]
pub struct ScenarioOutcome<T> {
    pub rows: Vec<MetricsRow>,
    /// Best-round model(s) keyed by owner: `global` for centralized and
    /// federated runs, `c<k>` for every trained local model.
    pub models: Vec<(String, ParamSet<T>)>,
    /// Test confusion of each model in `models`, same order.
    pub test_confusion: Vec<ConfusionMatrix>,
    /// Test macro-F1 of the best model; the mean over clients for local runs.
    pub test_f1: f64,
    pub rounds_run: usize,
}

fn eval_cm<T: Scalar>(net: &Network<T>, data: &Dataset<T>, batch: usize, exec: Exec) -> Result<(f64, ConfusionMatrix), FedError> {
    let r = evaluate(net, data, batch, exec)?;
    Ok((r.loss, confusion(&r.predictions, data.labels())?))
}

struct SingleRun<T> {
    rows: Vec<MetricsRow>,
    best: ParamSet<T>,
    rounds_run: usize,
}

/// Trains one model on `train` with the shared schedule, one epoch per
/// round, using the shuffle stream of `worker`. Row `round` r describes the
/// model after r rounds; round 0 is the fresh model.
#[allow(clippy::too_many_arguments)]
fn train_single<T: Scalar>(
    cfg: &ExperimentConfig,
    scenario: Scenario,
    owner: &str,
    worker: usize,
    train: &Dataset<T>,
    val: &Dataset<T>,
    test: Option<&Dataset<T>>,
    exec: Exec,
) -> Result<SingleRun<T>, FedError> {
    let sched = &cfg.schedule;
    let root = cfg.root_rng();
    let mut net: Network<T> = cfg.init_network()?;
    let mut opt = OptimizerState::new(cfg.optim.kind, cfg.optim.lr);
    let mut lr = cfg.optim.lr;
    let mut monitor = MonitorState::default();
    let mut rows = Vec::new();
    let bs = sched.batch_size;
    let emit = |rows: &mut Vec<MetricsRow>, net: &Network<T>, round: usize, lr: f64| -> Result<Option<f64>, FedError> {
        let mut val_loss = None;
        if !val.is_empty() {
            let (loss, cm) = eval_cm(net, val, bs, exec)?;
            rows.push(MetricsRow::from_confusion(round, scenario, owner, Split::Val, loss, &cm, cfg.f1_classes, lr)?);
            val_loss = Some(loss);
        }
        if let Some(test) = test {
            let (loss, cm) = eval_cm(net, test, bs, exec)?;
            rows.push(MetricsRow::from_confusion(round, scenario, owner, Split::Test, loss, &cm, cfg.f1_classes, lr)?);
        }
        Ok(val_loss)
    };
    emit(&mut rows, &net, 0, lr)?;
    let mut best = net.state().clone();
    let mut rounds_run = 0;
    for r in 0..sched.max_rounds {
        if !cfg.optim.persist_state {
            opt = OptimizerState::new(cfg.optim.kind, lr);
        } else {
            opt.lr = lr;
        }
        let mut rng = shuffle_rng(&root, worker, r as u32);
        let stats = train_epoch(&mut net, train, &mut opt, bs, &mut rng, None)?;
        rounds_run = r + 1;
        let monitored = emit(&mut rows, &net, r + 1, lr)?.unwrap_or(stats.mean_loss);
        if monitor.observe(r, monitored, sched.min_delta) {
            best = net.state().clone();
        }
        lr = plateau_update(&mut monitor, sched, lr);
        if early_stop_check(&monitor, sched) == StopDecision::Stop {
            info!("{owner}: early stop after round {}", r + 1);
            break;
        }
    }
    Ok(SingleRun { rows, best, rounds_run })
}

fn best_test<T: Scalar>(
    cfg: &ExperimentConfig,
    state: &ParamSet<T>,
    test: &Dataset<T>,
) -> Result<(f64, ConfusionMatrix), FedError> {
    let mut net: Network<T> = cfg.init_network()?;
    net.load_state(state)?;
    eval_cm(&net, test, cfg.schedule.batch_size, cfg.exec)
}

fn summary_row(
    cfg: &ExperimentConfig,
    scenario: Scenario,
    owner: &str,
    rounds: usize,
    loss: f64,
    cm: &ConfusionMatrix,
) -> Result<MetricsRow, FedError> {
    Ok(MetricsRow::from_confusion(rounds, scenario, owner, Split::Test, loss, cm, cfg.f1_classes, 0.0)?)
}

/// One model on the union of all client training splits.
///
/// The validation monitor uses the union of the client validation splits.
/// The closing `best` row reports the best-round model on the test set.
pub fn run_central<T: Scalar>(cfg: &ExperimentConfig, data: &ExperimentData<T>) -> Result<ScenarioOutcome<T>, FedError> {
    let train = Dataset::concat(&data.train, data.input_len())?;
    let val = Dataset::concat(&data.val, data.input_len())?;
    let run = train_single(cfg, Scenario::Central, "global", 0, &train, &val, Some(&data.test), cfg.exec)?;
    let (loss, cm) = best_test(cfg, &run.best, &data.test)?;
    let mut rows = run.rows;
    rows.push(summary_row(cfg, Scenario::Central, "best", run.rounds_run, loss, &cm)?);
    Ok(ScenarioOutcome {
        rows,
        test_f1: f1_scores_over(&cm, cfg.f1_classes).macro_f1,
        models: vec![("global".into(), run.best)],
        test_confusion: vec![cm],
        rounds_run: run.rounds_run,
    })
}

/// Independent models per client, each monitored on its own validation
/// split; clients are trained concurrently when `cfg.exec` allows. The
/// closing rows give every client's best model on the test set and their
/// arithmetic mean.
pub fn run_local<T: Scalar>(cfg: &ExperimentConfig, data: &ExperimentData<T>) -> Result<ScenarioOutcome<T>, FedError> {
    let ids: Vec<usize> = (0..data.num_clients()).filter(|&k| !data.train[k].is_empty()).collect();
    for k in (0..data.num_clients()).filter(|k| !ids.contains(k)) {
        warn!("client c{k} holds no training data; no local model is trained");
    }
    if ids.is_empty() {
        return Err(FedError::Config("no client holds training data".into()));
    }
    // Clients already run concurrently, so each one evaluates sequentially.
    let runs = cfg.exec.map(&ids, |_, &k| {
        let owner = format!("c{k}");
        train_single(cfg, Scenario::Local, &owner, k, &data.train[k], &data.val[k], None, Exec::Sequential)
            .and_then(|run| best_test(cfg, &run.best, &data.test).map(|t| (owner, run, t)))
    });
    let mut rows = Vec::new();
    let mut closing = Vec::new();
    let mut models = Vec::new();
    let mut cms = Vec::new();
    let mut rounds_run = 0;
    for res in runs {
        let (owner, run, (loss, cm)) = res?;
        rows.extend(run.rows);
        closing.push(summary_row(cfg, Scenario::Local, &owner, run.rounds_run, loss, &cm)?);
        rounds_run = rounds_run.max(run.rounds_run);
        models.push((owner, run.best));
        cms.push(cm);
    }
    let n = closing.len() as f64;
    let mut mean = closing[0].clone();
    mean.client_id = "mean".into();
    mean.round = rounds_run;
    mean.loss = closing.iter().map(|r| r.loss).sum::<f64>() / n;
    mean.accuracy = closing.iter().map(|r| r.accuracy).sum::<f64>() / n;
    mean.f1_macro = closing.iter().map(|r| r.f1_macro).sum::<f64>() / n;
    for c in 0..mean.f1.len() {
        mean.f1[c] = closing.iter().map(|r| r.f1[c]).sum::<f64>() / n;
    }
    let test_f1 = mean.f1_macro;
    rows.extend(closing);
    rows.push(mean);
    Ok(ScenarioOutcome {
        rows,
        models,
        test_confusion: cms,
        test_f1,
        rounds_run,
    })
}

/// The federated run over the in-process broker.
pub fn run_federated<T: Scalar>(cfg: &ExperimentConfig, data: &ExperimentData<T>) -> Result<ScenarioOutcome<T>, FedError> {
    let net: Network<T> = cfg.init_network()?;
    let clients = data.train.iter().cloned().zip(data.val.iter().cloned()).collect();
    let mut fed = Federation::new(
        "ecg",
        net,
        clients,
        Some(data.test.clone()),
        cfg.agg.clone(),
        cfg.optim,
        cfg.schedule.batch_size,
        cfg.root_rng(),
        cfg.exec,
    )?;
    let mut rows = Vec::new();
    let push = |rows: &mut Vec<MetricsRow>, round: usize, lr: f64, eval: SplitEvals| -> Result<(), FedError> {
        if let Some((loss, cm)) = eval.0 {
            rows.push(MetricsRow::from_confusion(round, Scenario::Federated, "global", Split::Val, loss, &cm, cfg.f1_classes, lr)?);
        }
        if let Some((loss, cm)) = eval.1 {
            rows.push(MetricsRow::from_confusion(round, Scenario::Federated, "global", Split::Test, loss, &cm, cfg.f1_classes, lr)?);
        }
        Ok(())
    };
    let initial = fed.server().global.clone();
    let eval0 = fed.evaluate_state(&initial)?;
    push(&mut rows, 0, cfg.optim.lr, eval0)?;
    let result = fed.run(&cfg.schedule, cfg.optim.lr)?;
    for rep in &result.reports {
        push(&mut rows, rep.round as usize + 1, rep.lr, (rep.val, rep.test))?;
    }
    let rounds_run = result.reports.len();
    let (loss, cm) = best_test(cfg, &result.best, &data.test)?;
    rows.push(summary_row(cfg, Scenario::Federated, "best", rounds_run, loss, &cm)?);
    Ok(ScenarioOutcome {
        rows,
        test_f1: f1_scores_over(&cm, cfg.f1_classes).macro_f1,
        models: vec![("global".into(), result.best)],
        test_confusion: vec![cm],
        rounds_run,
    })
}

pub fn run_scenario<T: Scalar>(scenario: Scenario, cfg: &ExperimentConfig, data: &ExperimentData<T>) -> Result<ScenarioOutcome<T>, FedError> {
    match scenario {
        Scenario::Local => run_local(cfg, data),
        Scenario::Central => run_central(cfg, data),
        Scenario::Federated => run_federated(cfg, data),
    }
}
