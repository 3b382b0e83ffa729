use std::collections::HashMap;
use std::time::{Duration, Instant};

use log::{debug, warn};

use crate::exec::Exec;
use crate::metrics::{confusion, ConfusionMatrix};
use crate::nn::{Network, ParamSet};
use crate::optim::{early_stop_check, evaluate, plateau_update, Dataset, MonitorState, StopDecision, TrainSchedule};
use crate::tensor::{Scalar, SeededRng};
use crate::transport::{
    decode_envelope, encode_envelope, Broker, Envelope, MsgType, Subscription, Topic, TransportError, DEFAULT_CAPACITY, SERVER_ID,
};

use super::{aggregate, client_local_train, shuffle_rng, AggregatorConfig, AggregatorKind, Client, ClientUpdate, FedError, OptimSpec, ServerState};

/// Loss and confusion on the validation and test splits, when present.
pub type SplitEvals = (Option<(f64, ConfusionMatrix)>, Option<(f64, ConfusionMatrix)>);

/// Summary of one completed round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundReport {
    /// Index of the round (0-based); the global model has seen `round + 1`
    /// aggregations when it is evaluated.
    pub round: u32,
    /// Learning rate used by the clients during this round.
    pub lr: f64,
    pub client_losses: Vec<(usize, f64)>,
    /// Sample-weighted mean of the client train losses.
    pub train_loss: f64,
    pub val: Option<(f64, ConfusionMatrix)>,
    pub test: Option<(f64, ConfusionMatrix)>,
    /// Value folded into the schedule: validation loss, or the train loss
    /// when no client holds validation data.
    pub monitored: f64,
}

#[derive(Clone, Debug)]
pub struct FederationResult<T> {
    pub reports: Vec<RoundReport>,
    /// Global model after the round with the best monitored value (the
    /// initial model if no round ran).
    pub best: ParamSet<T>,
    pub best_round: Option<u32>,
    pub final_global: ParamSet<T>,
    pub stopped_at: Option<u32>,
}

struct Node<T> {
    client: Client<T>,
    global_sub: Subscription,
    control_sub: Subscription,
    participates: bool,
    stopped: bool,
}

impl<T> Node<T> {
    /// Consumes pending control messages; a stop message halts the node.
    fn drain_control(&mut self) -> Result<(), FedError> {
        while let Some(msg) = self.control_sub.try_poll() {
            if decode_envelope(&msg.payload)?.msg_type == MsgType::Stop {
                self.stopped = true;
            }
        }
        Ok(())
    }
}

fn wire(e: impl std::fmt::Display) -> FedError {
    FedError::Transport(TransportError::Payload(e.to_string()))
}

fn expect_type(env: &Envelope, want: MsgType, round: u32) -> Result<(), FedError> {
    if env.msg_type != want || env.round != round {
        return Err(FedError::Protocol(format!(
            "expected {want:?} for round {round}, got {:?} for round {}",
            env.msg_type, env.round
        )));
    }
    Ok(())
}

/// Server and clients of one federation connected through a broker.
///
/// Each round the server publishes the global model (and, for Scaffold, its
/// control variate) on the global topic; every client polls it, trains and
/// publishes its update on its own update topic; the server collects all
/// updates under a deadline, aggregates and evaluates.
pub struct Federation<T> {
    fed_id: String,
    broker: Broker,
    server: ServerState<T>,
    eval_net: Network<T>,
    nodes: Vec<Node<T>>,
    updates_sub: Subscription,
    agg: AggregatorConfig,
    optim: OptimSpec,
    batch_size: usize,
    root: SeededRng,
    exec: Exec,
    timeout: Duration,
    val: Dataset<T>,
    test: Option<Dataset<T>>,
}

impl<T: Scalar> Federation<T> {
    /// `clients` are `(train, val)` pairs indexed by client id. Clients with
    /// no training data stay subscribed but are excluded from every round.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fed_id: &str,
        template: Network<T>,
        clients: Vec<(Dataset<T>, Dataset<T>)>,
        test: Option<Dataset<T>>,
        agg: AggregatorConfig,
        optim: OptimSpec,
        batch_size: usize,
        root: SeededRng,
        exec: Exec,
    ) -> Result<Self, FedError> {
        agg.validate()?;
        let input_len = template.config().input_len;
        let broker = Broker::new(DEFAULT_CAPACITY.max(2 * clients.len() + 4));
        let updates_sub = broker.subscribe(&Topic::all_updates(fed_id))?;
        let val = Dataset::concat(clients.iter().map(|(_, v)| v), input_len)?;
        let mut nodes = Vec::with_capacity(clients.len());
        for (id, (train, val)) in clients.into_iter().enumerate() {
            let participates = !train.is_empty();
            if !participates {
                warn!("client c{id} holds no training data and is excluded from every round");
            }
            nodes.push(Node {
                client: Client::new(id, train, val, &template),
                global_sub: broker.subscribe(&Topic::global(fed_id).to_string())?,
                control_sub: broker.subscribe(&Topic::control(fed_id).to_string())?,
                participates,
                stopped: false,
            });
        }
        if !nodes.iter().any(|n| n.participates) {
            return Err(FedError::Config("no client holds training data".into()));
        }
        Ok(Self {
            fed_id: fed_id.to_string(),
            broker,
            server: ServerState::new(template.state().clone()),
            eval_net: template,
            nodes,
            updates_sub,
            agg,
            optim,
            batch_size,
            root,
            exec,
            timeout: Duration::from_secs(600),
            val,
            test,
        })
    }

    /// Deadline applied to every poll of a round.
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn server(&self) -> &ServerState<T> {
        &self.server
    }

    pub fn clients(&self) -> impl Iterator<Item = &Client<T>> {
        self.nodes.iter().map(|n| &n.client)
    }

    pub fn broker(&self) -> &Broker {
        &self.broker
    }

    pub fn participants(&self) -> Vec<usize> {
        self.nodes.iter().filter(|n| n.participates).map(|n| n.client.id).collect()
    }

    pub fn stopped_clients(&self) -> usize {
        self.nodes.iter().filter(|n| n.stopped).count()
    }

    fn publish(&self, topic: &Topic, env: &Envelope) -> Result<(), FedError> {
        self.broker.publish(topic, encode_envelope(env)?)?;
        Ok(())
    }

    /// Evaluates a model state on the union of client validation sets and
    /// on the test set.
    pub fn evaluate_state(&mut self, state: &ParamSet<T>) -> Result<SplitEvals, FedError> {
        self.eval_net.load_state(state)?;
        let eval = |data: &Dataset<T>| -> Result<Option<(f64, ConfusionMatrix)>, FedError> {
            if data.is_empty() {
                return Ok(None);
            }
            let r = evaluate(&self.eval_net, data, self.batch_size, self.exec)?;
            Ok(Some((r.loss, confusion(&r.predictions, data.labels())?)))
        };
        let val = eval(&self.val)?;
        let test = match &self.test {
            Some(t) => eval(t)?,
            None => None,
        };
        Ok((val, test))
    }

    /// Runs one round with learning rate `lr`.
    pub fn run_round(&mut self, lr: f64) -> Result<RoundReport, FedError> {
        if self.stopped_clients() > 0 {
            return Err(FedError::Protocol("federation was stopped".into()));
        }
        let round = self.server.round;
        let scaffold = self.agg.kind == AggregatorKind::Scaffold;
        let global_topic = Topic::global(&self.fed_id);
        let mut env = Envelope::new(MsgType::GlobalModel, round, SERVER_ID, 0).with_params(&self.server.global);
        env.push_meta("lr", lr);
        self.publish(&global_topic, &env)?;
        if scaffold {
            self.publish(&global_topic, &Envelope::new(MsgType::ControlState, round, SERVER_ID, 0).with_params(&self.server.c))?;
        }

        let deadline = Instant::now() + self.timeout;
        let fed_id = self.fed_id.as_str();
        let broker = &self.broker;
        let (agg, optim, batch_size, root) = (&self.agg, &self.optim, self.batch_size, &self.root);
        let results = self.exec.map_mut(&mut self.nodes, |_, node| -> Result<(), FedError> {
            node.drain_control()?;
            let env = decode_envelope(&node.global_sub.poll(deadline)?.payload)?;
            expect_type(&env, MsgType::GlobalModel, round)?;
            let global = env.params::<T>()?;
            let lr = env.meta("lr").ok_or_else(|| FedError::Protocol("global model without lr".into()))?;
            let c = if scaffold {
                let env = decode_envelope(&node.global_sub.poll(deadline)?.payload)?;
                expect_type(&env, MsgType::ControlState, round)?;
                Some(env.params::<T>()?)
            } else {
                None
            };
            if !node.participates {
                return Ok(());
            }
            let mut rng = shuffle_rng(root, node.client.id, round);
            let update = client_local_train(&mut node.client, &global, c.as_ref(), round, lr, agg, optim, batch_size, &mut rng)?;
            let topic = Topic::update(fed_id, &format!("c{}", node.client.id));
            let sender = u32::try_from(update.client_id).map_err(wire)?;
            let mut env = Envelope::new(MsgType::ClientUpdate, round, sender, update.num_samples).with_params(&update.params_after);
            env.push_meta("train_loss", update.train_loss);
            env.push_meta("steps", update.steps as f64);
            broker.publish(&topic, encode_envelope(&env)?)?;
            if let Some(delta) = &update.control_delta {
                let env = Envelope::new(MsgType::ControlState, round, sender, update.num_samples).with_params(delta);
                broker.publish(&topic, encode_envelope(&env)?)?;
            }
            Ok(())
        });
        results.into_iter().collect::<Result<Vec<()>, FedError>>()?;

        let expected = self.participants();
        let per_client = if scaffold { 2 } else { 1 };
        let mut updates: Vec<ClientUpdate<T>> = Vec::with_capacity(expected.len());
        let mut deltas: HashMap<usize, ParamSet<T>> = HashMap::new();
        for _ in 0..expected.len() * per_client {
            let msg = self.updates_sub.poll(deadline)?;
            let env = decode_envelope(&msg.payload)?;
            if env.round != round {
                return Err(FedError::Protocol(format!("update for round {} during round {round}", env.round)));
            }
            let id = env.sender as usize;
            match env.msg_type {
                MsgType::ClientUpdate => updates.push(ClientUpdate {
                    client_id: id,
                    round,
                    num_samples: env.num_samples,
                    params_after: env.params::<T>()?,
                    control_delta: None,
                    train_loss: env.meta("train_loss").unwrap_or(f64::NAN),
                    steps: env.meta("steps").unwrap_or(0.0) as usize,
                }),
                MsgType::ControlState => {
                    if deltas.insert(id, env.params::<T>()?).is_some() {
                        return Err(FedError::Protocol(format!("duplicate control delta from client {id}")));
                    }
                }
                other => return Err(FedError::Protocol(format!("unexpected {other:?} on an update topic"))),
            }
        }
        for u in &mut updates {
            u.control_delta = deltas.remove(&u.client_id);
        }
        aggregate(&updates, &mut self.server, &self.agg, &expected)?;

        updates.sort_by_key(|u| u.client_id);
        let total: u64 = updates.iter().map(|u| u.num_samples).sum();
        let train_loss = updates.iter().map(|u| u.train_loss * u.num_samples as f64).sum::<f64>() / total as f64;
        let global = self.server.global.clone();
        let (val, test) = self.evaluate_state(&global)?;
        self.publish(&Topic::control(&self.fed_id), &Envelope::new(MsgType::RoundDone, round, SERVER_ID, 0))?;
        debug!("round {round}: train loss {train_loss:.6}");
        Ok(RoundReport {
            round,
            lr,
            client_losses: updates.iter().map(|u| (u.client_id, u.train_loss)).collect(),
            train_loss,
            monitored: val.as_ref().map_or(train_loss, |(l, _)| *l),
            val,
            test,
        })
    }

    /// Publishes a stop message; every client observes it on its control
    /// topic and leaves the federation.
    pub fn stop(&mut self) -> Result<(), FedError> {
        let round = self.server.round;
        self.publish(&Topic::control(&self.fed_id), &Envelope::new(MsgType::Stop, round, SERVER_ID, 0))?;
        for node in &mut self.nodes {
            node.drain_control()?;
        }
        Ok(())
    }

    /// Rounds until early stop or `schedule.max_rounds`, starting at `lr0`.
    pub fn run(&mut self, schedule: &TrainSchedule, lr0: f64) -> Result<FederationResult<T>, FedError> {
        schedule.validate().map_err(FedError::Config)?;
        let mut monitor = MonitorState::default();
        let mut lr = lr0;
        let mut best = self.server.global.clone();
        let mut best_round = None;
        let mut reports = Vec::new();
        let mut stopped_at = None;
        for r in 0..schedule.max_rounds {
            let report = self.run_round(lr)?;
            if monitor.observe(r, report.monitored, schedule.min_delta) {
                best = self.server.global.clone();
                best_round = Some(report.round);
            }
            lr = plateau_update(&mut monitor, schedule, lr);
            reports.push(report);
            if early_stop_check(&monitor, schedule) == StopDecision::Stop {
                stopped_at = Some(r as u32);
                break;
            }
        }
        self.stop()?;
        Ok(FederationResult {
            reports,
            best,
            best_round,
            final_global: self.server.global.clone(),
            stopped_at,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{NetworkConfig, NormKind, Variant};
    use crate::optim::OptimizerKind;

    fn setup(kind: AggregatorKind, clients: usize, empty: Option<usize>) -> Federation<f32> {
        let cfg = NetworkConfig {
            variant: Variant::Small,
            norm: NormKind::Batch,
            group_count: 1,
            input_len: 32,
            base_channels: 2,
            filter_len: 3,
            num_classes: 2,
            dropout_p: 0.0,
            blocks: Some(2),
            width_every: Some(1),
        };
        let root = SeededRng::new(9);
        let net = Network::<f32>::build(cfg, &mut root.child(&[0])).unwrap();
        let mut rng = root.child(&[5]);
        let mut make = |n: usize| {
            let mut d = Dataset::empty(32);
            for i in 0..n {
                let label = i % 2;
                let row: Vec<f32> = (0..32).map(|t| ((t as f64 * (0.2 + 0.3 * label as f64)).sin() + rng.uniform(-0.2, 0.2)) as f32).collect();
                d.push(&row, label).unwrap();
            }
            d
        };
        let data: Vec<_> = (0..clients)
            .map(|k| if Some(k) == empty { (make(0), make(2)) } else { (make(12 + k), make(4)) })
            .collect();
        let test = make(10);
        Federation::new("t1", net, data, Some(test), AggregatorConfig::new(kind), OptimSpec::new(OptimizerKind::Sgd), 4, root, Exec::default()).unwrap()
    }

    #[test]
    fn round_advances_and_reports() {
        for kind in [AggregatorKind::FedAvg, AggregatorKind::FedProx, AggregatorKind::FedDyn, AggregatorKind::Scaffold] {
            let mut fed = setup(kind, 3, None);
            let r0 = fed.run_round(0.05).unwrap();
            let r1 = fed.run_round(0.05).unwrap();
            assert_eq!((r0.round, r1.round, fed.server().round), (0, 1, 2));
            assert_eq!(r0.client_losses.iter().map(|c| c.0).collect::<Vec<_>>(), vec![0, 1, 2]);
            assert_eq!(r0.val.as_ref().unwrap().1.total(), 12);
            assert_eq!(r0.test.as_ref().unwrap().1.total(), 10);
            assert!(r0.train_loss.is_finite());
        }
    }

    #[test]
    fn reruns_are_identical() {
        let mut a = setup(AggregatorKind::Scaffold, 3, None);
        let mut b = setup(AggregatorKind::Scaffold, 3, None);
        for _ in 0..2 {
            assert_eq!(a.run_round(0.05).unwrap(), b.run_round(0.05).unwrap());
        }
        assert!(a.server().global.bit_eq(&b.server().global));
        assert!(a.server().c.bit_eq(&b.server().c));
    }

    #[test]
    fn empty_client_is_excluded() {
        let mut fed = setup(AggregatorKind::FedAvg, 3, Some(1));
        assert_eq!(fed.participants(), vec![0, 2]);
        let r = fed.run_round(0.05).unwrap();
        assert_eq!(r.client_losses.len(), 2);
    }

    #[test]
    fn stop_halts_every_client() {
        let mut fed = setup(AggregatorKind::FedAvg, 3, None);
        fed.run_round(0.05).unwrap();
        fed.stop().unwrap();
        assert_eq!(fed.stopped_clients(), 3);
        assert!(matches!(fed.run_round(0.05), Err(FedError::Protocol(_))));
    }

    #[test]
    fn schedule_stops_early_and_keeps_best() {
        let mut fed = setup(AggregatorKind::FedAvg, 2, None);
        let sched = TrainSchedule {
            max_rounds: 6,
            plateau_patience: 1,
            early_stop_patience: 2,
            min_delta: 1e9,
            ..TrainSchedule::default()
        };
        let res = fed.run(&sched, 0.05).unwrap();
        // The first round always improves on +inf; nothing can improve by 1e9 after.
        assert_eq!(res.best_round, Some(0));
        assert_eq!(res.stopped_at, Some(2));
        assert_eq!(res.reports.len(), 3);
        assert_eq!(res.reports[1].lr, 0.05);
        assert!((res.reports[2].lr - 0.005).abs() < 1e-12);
        assert!(!res.best.bit_eq(&res.final_global));
    }
}
