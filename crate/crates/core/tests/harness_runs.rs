use coknow_core::config::RunConfig;
use coknow_core::harness::{
    aggregate, evaluate_top1, run_matrix, train_run, Arm, Experiment, Sweep,
};
use coknow_core::inference::Predictor;

fn separable_four_class() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.k = 4;
    cfg.data.sigma = 0.1;
    cfg.train.epochs = 50;
    cfg
}

#[test]
fn separable_toy_task_golden_loss_curve() {
    let cfg = separable_four_class();
    let exp = Experiment::synthetic(&cfg).unwrap();
    let run = train_run(&exp, &cfg, 16, 0).unwrap();
    let losses: Vec<f64> = run.epochs.iter().map(|e| e.loss).collect();
    assert_eq!(losses.len(), 50);
    for (epoch, want) in [
        (0, 5.9811653621124705),
        (24, 0.3850527357611431),
        (49, 0.3621197026350663),
    ] {
        assert!(
            (losses[epoch] - want).abs() < 1e-9,
            "epoch {epoch}: {} vs {want}",
            losses[epoch]
        );
    }
    assert!(losses[49] < 0.1 * losses[0]);
}

#[test]
fn trained_model_beats_chance_on_separable_task() {
    let cfg = separable_four_class();
    let exp = Experiment::synthetic(&cfg).unwrap();
    let run = train_run(&exp, &cfg, 16, 0).unwrap();
    let p = Predictor::from_checkpoint(&run.checkpoint).unwrap();
    let acc = evaluate_top1(&p, &exp.dataset, &exp.dataset.test).unwrap();
    // 80 test images; chance is 0.25 and a binomial 5-sigma bound is about 0.49.
    assert!(acc > 0.49, "{acc}");
}

#[test]
fn matrix_produces_one_report_per_cell() {
    let mut cfg = separable_four_class();
    cfg.train.epochs = 2;
    cfg.train.shots = vec![1, 2];
    cfg.train.seeds = vec![0, 1];
    let exp = Experiment::synthetic(&cfg).unwrap();
    let m = run_matrix(&exp, &cfg, &Arm::ALL, 2);
    assert_eq!(m.reports.len(), Arm::ALL.len() * 2 * 2);
    assert!(m
        .reports
        .iter()
        .all(|r| r.error.is_none() && r.top1.is_some()));
    assert_eq!(m.aggregate.len(), Arm::ALL.len() * 2);
    assert_eq!(aggregate(&m.reports), m.aggregate);
}

#[test]
fn sweeps_have_the_documented_row_counts() {
    let cfg = RunConfig::default();
    let rows: Vec<usize> = Sweep::ALL.iter().map(|s| s.configs(&cfg).len()).collect();
    assert_eq!(rows, vec![3, 3, 2, 3, 3]);
}

#[test]
fn insufficient_shots_are_a_protocol_error() {
    let mut cfg = separable_four_class();
    cfg.data.per_class_train = 2;
    let exp = Experiment::synthetic(&cfg).unwrap();
    let err = train_run(&exp, &cfg, 4, 0).unwrap_err();
    assert!(matches!(err, coknow_core::Error::Protocol(_)), "{err}");
}
