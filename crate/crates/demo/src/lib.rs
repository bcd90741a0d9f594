//! Browser demo. Every export takes plain numbers/strings and returns a JSON
//! string; errors come back as a thrown JS string.

use std::collections::BTreeMap;

use coknow_core::config::RunConfig;
use coknow_core::harness::{evaluate_top1, train_run, zeroshot_demo, Experiment};
use coknow_core::inference::{KnowledgeStrategy, Predictor};
use coknow_core::numerics::{cosine_lr, SgdCosineConfig};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn config(overrides: &[(&str, Value)]) -> Result<RunConfig, String> {
    let map: BTreeMap<String, Value> = overrides
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect();
    RunConfig::default()
        .with_overrides(&map)
        .map_err(|e| e.to_string())
}

/// Zero-shot top-1 with and without `kind` knowledge (vk|nvk|pk) fused into
/// the image, plus one rank flip.
pub fn zeroshot_json(strategy: &str, kind: &str) -> Result<String, String> {
    let strategy: KnowledgeStrategy = strategy
        .parse()
        .map_err(|e: coknow_core::Error| e.to_string())?;
    let cfg = config(&[("model.knowledge_kind", json!(kind))])?;
    let exp = Experiment::synthetic(&cfg).map_err(|e| e.to_string())?;
    let report = zeroshot_demo(&exp, &cfg, strategy).map_err(|e| e.to_string())?;
    serde_json::to_string(&report).map_err(|e| e.to_string())
}

/// One few-shot training run on the default benchmark: loss curve and test top-1.
pub fn train_json(variant: &str, shots: usize, epochs: usize, seed: u64) -> Result<String, String> {
    let cfg = config(&[
        ("model.variant", json!(variant)),
        ("train.epochs", json!(epochs)),
    ])?;
    let exp = Experiment::synthetic(&cfg).map_err(|e| e.to_string())?;
    let run = train_run(&exp, &cfg, shots, seed).map_err(|e| e.to_string())?;
    let predictor = Predictor::from_checkpoint(&run.checkpoint).map_err(|e| e.to_string())?;
    let top1 =
        evaluate_top1(&predictor, &exp.dataset, &exp.dataset.test).map_err(|e| e.to_string())?;
    Ok(json!({
        "dataset": exp.dataset.name,
        "variant": cfg.model.variant.to_string(),
        "shots": shots,
        "seed": seed,
        "epochs": run.epochs,
        "top1": top1,
    })
    .to_string())
}

/// The cosine learning-rate schedule sampled at every step.
pub fn lr_schedule_json(lr_max: f64, lr_min: f64, total_steps: usize) -> Result<String, String> {
    let cfg = SgdCosineConfig {
        lr_max,
        lr_min,
        total_steps,
        ..SgdCosineConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let lrs: Vec<f64> = (0..=total_steps).map(|s| cosine_lr(&cfg, s)).collect();
    serde_json::to_string(&lrs).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn zeroshot(strategy: &str, kind: &str) -> Result<String, JsValue> {
    zeroshot_json(strategy, kind).map_err(JsValue::from)
}

#[wasm_bindgen]
pub fn train(variant: &str, shots: usize, epochs: usize, seed: u32) -> Result<String, JsValue> {
    train_json(variant, shots, epochs, seed.into()).map_err(JsValue::from)
}

#[wasm_bindgen]
pub fn lr_schedule(lr_max: f64, lr_min: f64, total_steps: usize) -> Result<String, JsValue> {
    lr_schedule_json(lr_max, lr_min, total_steps).map_err(JsValue::from)
}
