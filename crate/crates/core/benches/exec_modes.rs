use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use fedecg::ecg::{synth_generate, SynthConfig};
use fedecg::exec::Exec;
use fedecg::fed::{prepare_splits, AggregatorConfig, AggregatorKind, ExperimentConfig, Federation, OptimSpec};
use fedecg::metrics::F1Classes;
use fedecg::nn::NetworkConfig;
use fedecg::optim::{evaluate, OptimizerKind, TrainSchedule};

#[allow(unused_mut)]
fn modes() -> Vec<(&'static str, Exec)> {
    let mut m = vec![("sequential", Exec::Sequential)];
    #[cfg(feature = "parallel")]
    m.push(("parallel", Exec::Parallel));
    m
}

fn small_config(exec: Exec) -> ExperimentConfig {
    ExperimentConfig {
        net: NetworkConfig {
            base_channels: 4,
            ..NetworkConfig::small()
        },
        agg: AggregatorConfig::new(AggregatorKind::Scaffold),
        optim: OptimSpec::new(OptimizerKind::Adam),
        schedule: TrainSchedule::default(),
        seed: 7,
        f1_classes: F1Classes::All,
        exec,
    }
}

fn bench(c: &mut Criterion) {
    let synth = SynthConfig::skewed(7, 8, 16, 8);
    let partition = synth_generate(&synth, Exec::Sequential).partition(Exec::Sequential).unwrap();
    let data = prepare_splits::<f32>(&partition, 0.1, 7);

    let mut g = c.benchmark_group("synth_generate");
    g.sample_size(10);
    for (name, exec) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| synth_generate(&synth, exec)));
    }
    g.finish();

    let mut g = c.benchmark_group("evaluate");
    g.sample_size(10);
    for (name, exec) in modes() {
        let net = small_config(exec).init_network::<f32>().unwrap();
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| evaluate(&net, &data.test, 8, exec).unwrap()));
    }
    g.finish();

    let mut g = c.benchmark_group("federated_round");
    g.sample_size(10);
    for (name, exec) in modes() {
        let cfg = small_config(exec);
        let clients: Vec<_> = data.train.iter().cloned().zip(data.val.iter().cloned()).collect();
        let mut fed = Federation::new(
            "bench",
            cfg.init_network().unwrap(),
            clients,
            None,
            cfg.agg.clone(),
            cfg.optim,
            8,
            cfg.root_rng(),
            exec,
        )
        .unwrap();
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| fed.run_round(cfg.optim.lr).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
