use fedecg::ecg::{synth_generate, SynthConfig};
use fedecg::exec::Exec;
use fedecg::fed::{prepare_splits, run_scenario, AggregatorConfig, AggregatorKind, ExperimentConfig, ExperimentData, OptimSpec};
use fedecg::metrics::{write_metrics_csv, F1Classes, MetricsRow, Scenario, Split};
use fedecg::nn::NetworkConfig;
use fedecg::optim::{OptimizerKind, TrainSchedule};

fn setup() -> (ExperimentConfig, ExperimentData<f32>) {
    let partition = synth_generate(&SynthConfig::skewed(3, 3, 10, 2), Exec::default())
        .partition(Exec::default())
        .unwrap();
    let cfg = ExperimentConfig {
        net: NetworkConfig {
            base_channels: 4,
            ..NetworkConfig::small()
        },
        agg: AggregatorConfig::new(AggregatorKind::Scaffold),
        optim: OptimSpec::new(OptimizerKind::Adam),
        schedule: TrainSchedule {
            max_rounds: 2,
            batch_size: 4,
            val_fraction: 0.2,
            ..TrainSchedule::default()
        },
        seed: 3,
        f1_classes: F1Classes::All,
        exec: Exec::default(),
    };
    let data = prepare_splits(&partition, cfg.schedule.val_fraction, cfg.seed);
    (cfg, data)
}

fn round_zero_test(rows: &[MetricsRow]) -> &MetricsRow {
    rows.iter().find(|r| r.round == 0 && r.split == Split::Test).unwrap()
}

#[test]
fn scenarios_share_initialization_and_data() {
    let (cfg, data) = setup();
    let central = run_scenario(Scenario::Central, &cfg, &data).unwrap();
    let federated = run_scenario(Scenario::Federated, &cfg, &data).unwrap();
    let (a, b) = (round_zero_test(&central.rows), round_zero_test(&federated.rows));
    assert_eq!((a.loss, a.f1), (b.loss, b.f1));
    assert_eq!(central.models.len(), 1);
    assert_eq!(federated.models[0].0, "global");
    assert!(central.rounds_run <= 2 && federated.rounds_run <= 2);
}

#[test]
fn local_mean_row_averages_client_rows() {
    let (cfg, data) = setup();
    let out = run_scenario(Scenario::Local, &cfg, &data).unwrap();
    let closing: Vec<&MetricsRow> = out
        .rows
        .iter()
        .filter(|r| r.split == Split::Test && r.client_id.starts_with('c'))
        .collect();
    assert_eq!(closing.len(), 3);
    let mean = out.rows.last().unwrap();
    assert_eq!(mean.client_id, "mean");
    let expect = closing.iter().map(|r| r.f1_macro).sum::<f64>() / 3.0;
    assert!((mean.f1_macro - expect).abs() < 1e-12);
    assert_eq!(out.test_f1, mean.f1_macro);
    let names: Vec<&str> = out.models.iter().map(|m| m.0.as_str()).collect();
    assert_eq!(names, ["c0", "c1", "c2"]);
}

#[test]
fn reruns_write_identical_csv() {
    let (cfg, data) = setup();
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.csv", "b.csv"] {
        let out = run_scenario(Scenario::Federated, &cfg, &data).unwrap();
        write_metrics_csv(&out.rows, &dir.path().join(name)).unwrap();
    }
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    let text = String::from_utf8(read("a.csv")).unwrap();
    assert!(text.starts_with("round,scenario,client_id,split,loss,accuracy,f1_macro,f1_sinus,f1_afib,f1_other,f1_noise,lr\n"));
    assert!(text.lines().last().unwrap().contains(",federated,best,test,"));
}
