use coknow_demo::{lr_schedule_json, train_json, zeroshot_json};
use serde_json::Value;

#[test]
fn zeroshot_matches_the_harness_golden() {
    let v: Value = serde_json::from_str(&zeroshot_json("oracle", "pk").unwrap()).unwrap();
    assert_eq!(v["n"], 160);
    assert!((v["top1_plain"].as_f64().unwrap() - 0.5375).abs() < 1e-12);
    assert!((v["top1_fused"].as_f64().unwrap() - 0.7125).abs() < 1e-12);
    assert_eq!(v["rank_flip"]["item"], 31);
}

#[test]
fn unknown_strategy_is_an_error() {
    assert!(zeroshot_json("psychic", "pk")
        .unwrap_err()
        .contains("psychic"));
}

#[test]
fn quick_training_run_reports_every_epoch() {
    let v: Value = serde_json::from_str(&train_json("standard", 2, 5, 0).unwrap()).unwrap();
    assert_eq!(v["epochs"].as_array().unwrap().len(), 5);
    let top1 = v["top1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&top1));
    assert!(train_json("coop", 2, 5, 0).is_err());
}

#[test]
fn schedule_runs_from_max_to_min() {
    let lrs: Vec<f64> = serde_json::from_str(&lr_schedule_json(0.002, 0.0, 100).unwrap()).unwrap();
    assert_eq!(lrs.len(), 101);
    assert_eq!(lrs[0], 0.002);
    assert!((lrs[50] - 0.001).abs() < 1e-15);
    assert_eq!(lrs[100], 0.0);
    assert!(lr_schedule_json(0.001, 0.002, 10).is_err());
}
