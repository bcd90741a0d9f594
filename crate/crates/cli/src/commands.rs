use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use coknow_core::config::RunConfig;
use coknow_core::harness::{
    distribution_shift, evaluate_top1, import_features, load_dataset, render_table, run_matrix,
    run_sweep, save_dataset, synthetic_fixture_pairs, train_run, zeroshot_demo, Dataset,
    Experiment, FeatureSpace, RunReport, Split,
};
use coknow_core::inference::{write_vectors_csv, Predictor};
use coknow_core::knowledge::{
    generate_bank, validate_bank, CachedSource, FixtureStore, GenerateOptions, GenerationOutcome,
    KnowledgeBank, PromptSet,
};
use coknow_core::model::Checkpoint;
use coknow_core::numerics::{l2_normalize_rows, Tensor2, DEFAULT_EPS};
use serde::Serialize;

use crate::llm::ChatClient;
use crate::{
    AblateArgs, CliError, ConfigArgs, EvalArgs, ExportArgs, ExportWhat, GenKnowledgeArgs,
    MatrixArgs, OutputArgs, PredictArgs, ShiftArgs, SplitName, SynthArgs, TrainArgs, ZeroshotArgs,
    EXIT_PROTOCOL, EXIT_SERVICE, EXIT_USAGE,
};

type CmdResult = Result<(), CliError>;

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(coknow_core::Error::from)?;
    }
    std::fs::write(path, text)
        .map_err(|e| CliError::new(EXIT_USAGE, format!("cannot write {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(coknow_core::Error::from)?;
    text.push('\n');
    write_text(path, &text)
}

fn workers(out: &OutputArgs) -> usize {
    out.workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

fn write_outputs(out: &OutputArgs, report: &impl Serialize, table: &str) -> CmdResult {
    if let Some(p) = &out.report {
        write_json(p, report)?;
    }
    if let Some(p) = &out.table {
        write_text(p, table)?;
    }
    Ok(())
}

fn check_failures(reports: &[RunReport]) -> CmdResult {
    let failed: Vec<&RunReport> = reports.iter().filter(|r| r.error.is_some()).collect();
    if failed.is_empty() {
        return Ok(());
    }
    for r in &failed {
        eprintln!(
            "run {} shots={} seed={} failed: {}",
            r.arm,
            r.shots,
            r.seed,
            r.error.as_deref().unwrap_or_default()
        );
    }
    Err(CliError::new(
        EXIT_PROTOCOL,
        format!("{} of {} runs failed", failed.len(), reports.len()),
    ))
}

/// The synthetic experiment of `cfg`, or an imported dataset directory
/// (which then needs a bank). A given bank must cover the classes exactly.
fn load_experiment(
    cfg: &RunConfig,
    dataset: Option<&Path>,
    bank: Option<&Path>,
) -> Result<Experiment, CliError> {
    let mut exp = match dataset {
        None => Experiment::synthetic(cfg)?,
        Some(dir) => {
            let ds = load_dataset(dir)?;
            let Some(_) = bank else {
                return Err(CliError::new(
                    EXIT_USAGE,
                    "--bank is required with --dataset",
                ));
            };
            Experiment {
                bank: KnowledgeBank::new(ds.name.clone(), "none"),
                dataset: ds,
            }
        }
    };
    if let Some(path) = bank {
        let b = KnowledgeBank::load(path)?;
        let report = validate_bank(&b, &exp.dataset.classes);
        if !report.is_valid() {
            let list: Vec<String> = report.violations.iter().map(ToString::to_string).collect();
            return Err(CliError::new(
                EXIT_PROTOCOL,
                format!(
                    "bank {} does not fit the dataset: {}",
                    path.display(),
                    list.join("; ")
                ),
            ));
        }
        exp.bank = b;
    }
    Ok(exp)
}

fn dataset_for_eval(cfg: &RunConfig, dir: Option<&Path>) -> Result<Dataset, CliError> {
    Ok(match dir {
        Some(d) => load_dataset(d)?,
        None => Experiment::synthetic(cfg)?.dataset,
    })
}

fn pick(ds: &Dataset, split: SplitName) -> &Split {
    match split {
        SplitName::Train => &ds.train,
        SplitName::Test => &ds.test,
    }
}

fn image_embeddings(
    p: &Predictor,
    space: FeatureSpace,
    x: &Tensor2,
) -> coknow_core::Result<Tensor2> {
    match space {
        FeatureSpace::Raw => p.encode_images(x),
        FeatureSpace::Embedding => Ok(l2_normalize_rows(x, DEFAULT_EPS).out),
    }
}

pub fn synth(a: SynthArgs) -> CmdResult {
    let cfg = a.cfg.resolve()?;
    let exp = Experiment::synthetic(&cfg)?;
    save_dataset(&exp.dataset, &a.out)?;
    let pairs = synthetic_fixture_pairs(&exp.dataset.classes, &PromptSet::default())?;
    let n = FixtureStore::write_dir(
        &a.out.join("fixtures"),
        &a.model,
        pairs.iter().map(|(p, r)| (p.as_str(), r.as_str())),
    )?;
    write_text(&a.out.join("config.json"), &cfg.to_json())?;
    println!(
        "wrote {} ({} classes, {} train / {} test rows, {n} fixtures) to {}",
        exp.dataset.name,
        exp.dataset.k(),
        exp.dataset.train.len(),
        exp.dataset.test.len(),
        a.out.display()
    );
    Ok(())
}

pub fn gen_knowledge(a: GenKnowledgeArgs) -> CmdResult {
    let classes = coknow_core::harness::read_class_list(&a.classes)?;
    let prompts = match &a.prompts {
        Some(p) => {
            serde_json::from_str(&std::fs::read_to_string(p).map_err(coknow_core::Error::from)?)
                .map_err(|e| {
                    CliError::new(EXIT_USAGE, format!("bad prompt set {}: {e}", p.display()))
                })?
        }
        None => PromptSet::default(),
    };
    let dataset_id = a.dataset_id.clone().unwrap_or_else(|| {
        a.classes
            .file_stem()
            .map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned())
    });
    let opts = GenerateOptions {
        dataset_id,
        created_at: Some(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)),
        concurrency: a.concurrency.max(1),
        retries: a.retries,
        backoff: Duration::from_millis(a.backoff_ms),
    };
    let outcome: GenerationOutcome = match (&a.offline_fixtures, &a.endpoint) {
        (Some(dir), _) => {
            let store = FixtureStore::load_dir(dir, &a.model)?;
            generate_bank(&classes, &prompts, &store, &opts)?
        }
        (None, Some(url)) => {
            let client = ChatClient::new(
                url,
                &a.model,
                a.temperature,
                Duration::from_secs(a.timeout_s),
            );
            match &a.cache {
                Some(dir) => {
                    generate_bank(&classes, &prompts, &CachedSource::new(client, dir), &opts)?
                }
                None => generate_bank(&classes, &prompts, &client, &opts)?,
            }
        }
        (None, None) => {
            return Err(CliError::new(
                EXIT_USAGE,
                "need --offline-fixtures or --endpoint",
            ))
        }
    };
    outcome.bank.save(&a.out)?;
    if !outcome.is_complete() {
        for f in &outcome.failures {
            eprintln!("failed: {f}");
        }
        let code = if outcome.has_service_failure() {
            EXIT_SERVICE
        } else {
            EXIT_PROTOCOL
        };
        return Err(CliError::new(
            code,
            format!(
                "bank incomplete: {} of {} classes failed (first: {}); partial bank written to {}",
                outcome.bank.incomplete.len(),
                classes.len(),
                outcome.failures[0],
                a.out.display()
            ),
        ));
    }
    let report = validate_bank(&outcome.bank, &classes);
    for d in &report.duplicates {
        eprintln!("warning: identical {} text for {:?}", d.kind, d.classes);
    }
    if !report.is_valid() {
        let list: Vec<String> = report.violations.iter().map(ToString::to_string).collect();
        return Err(CliError::new(
            EXIT_PROTOCOL,
            format!("bank invalid: {}", list.join("; ")),
        ));
    }
    println!(
        "wrote {} entries ({} descriptions, model {}) to {}",
        outcome.bank.entries.len(),
        outcome.bank.description_count(),
        outcome.bank.model_id,
        a.out.display()
    );
    Ok(())
}

pub fn train(a: TrainArgs) -> CmdResult {
    let cfg = a.data.cfg.resolve()?;
    let exp = load_experiment(&cfg, a.data.dataset.as_deref(), a.bank.as_deref())?;
    let shots = a
        .shots
        .or_else(|| cfg.train.shots.iter().max().copied())
        .ok_or_else(|| CliError::new(EXIT_USAGE, "no --shots and train.shots is empty"))?;
    let seed = a
        .seed
        .or_else(|| cfg.train.seeds.first().copied())
        .unwrap_or(0);
    let start = Instant::now();
    let run = train_run(&exp, &cfg, shots, seed)?;
    run.checkpoint.save(&a.out)?;
    let predictor = Predictor::from_checkpoint(&run.checkpoint)?;
    let top1 = evaluate_top1(&predictor, &exp.dataset, &exp.dataset.test)?;
    if let Some(p) = &a.report {
        let report = RunReport {
            dataset: exp.dataset.name.clone(),
            arm: cfg.model.variant.to_string(),
            shots,
            seed,
            config: cfg.to_flat(),
            epochs: run.epochs.clone(),
            top1: Some(top1),
            error: None,
            wall_clock_s: start.elapsed().as_secs_f64(),
        };
        write_json(p, &report)?;
    }
    let (first, last) = (run.epochs.first(), run.epochs.last());
    println!(
        "trained {} on {} ({shots} shots, seed {seed}): loss {:.4} -> {:.4}, test top-1 {:.2}%; checkpoint {}",
        cfg.model.variant,
        exp.dataset.name,
        first.map_or(f64::NAN, |e| e.loss),
        last.map_or(f64::NAN, |e| e.loss),
        100.0 * top1,
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalReport<'a> {
    dataset: &'a str,
    split: &'static str,
    n: usize,
    top1: f64,
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let cfg = a.data.cfg.resolve()?;
    let ck = Checkpoint::load(&a.ckpt)?;
    let predictor = Predictor::from_checkpoint(&ck)?;
    let ds = dataset_for_eval(&cfg, a.data.dataset.as_deref())?;
    let split = pick(&ds, a.split);
    let top1 = evaluate_top1(&predictor, &ds, split)?;
    let name = match a.split {
        SplitName::Train => "train",
        SplitName::Test => "test",
    };
    if let Some(p) = &a.report {
        write_json(
            p,
            &EvalReport {
                dataset: &ds.name,
                split: name,
                n: split.len(),
                top1,
            },
        )?;
    }
    println!(
        "top-1 {:.2}% on {} {name} split ({} images)",
        100.0 * top1,
        ds.name,
        split.len()
    );
    Ok(())
}

pub fn predict(a: PredictArgs) -> CmdResult {
    let ck = Checkpoint::load(&a.ckpt)?;
    let predictor = Predictor::from_checkpoint(&ck)?;
    let file = import_features(&a.features)?;
    let i0 = image_embeddings(&predictor, file.space, &file.split.x)?;
    let records: Vec<_> = predictor
        .predict_embeddings(&i0)?
        .iter()
        .map(|p| predictor.record(p))
        .collect();
    match &a.out {
        Some(path) => {
            write_json(path, &records)?;
            println!("wrote {} predictions to {}", records.len(), path.display());
        }
        None => {
            // A closed pipe (e.g. `| head`) is not an error worth reporting.
            let text = serde_json::to_string_pretty(&records).map_err(coknow_core::Error::from)?;
            let _ = writeln!(std::io::stdout().lock(), "{text}");
        }
    }
    Ok(())
}

pub fn zeroshot(a: ZeroshotArgs) -> CmdResult {
    let cfg = a.cfg.resolve()?;
    let exp = Experiment::synthetic(&cfg)?;
    let report = zeroshot_demo(&exp, &cfg, a.strategy)?;
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    println!("{}", report.summary());
    Ok(())
}

pub fn ablate(a: AblateArgs) -> CmdResult {
    let cfg = a.cfg.resolve()?;
    let exp = Experiment::synthetic(&cfg)?;
    let result = run_sweep(&exp, &cfg, a.sweep, a.shots, workers(&a.out));
    let table = result.table();
    write_outputs(&a.out, &result.matrix.reports, &table)?;
    print!("{table}");
    check_failures(&result.matrix.reports)?;
    println!(
        "{} sweep at {} shots: {} values x {} seeds, spread {:.2} points",
        a.sweep,
        a.shots,
        result.matrix.aggregate.len(),
        cfg.train.seeds.len(),
        result.spread()
    );
    Ok(())
}

pub fn matrix(a: MatrixArgs) -> CmdResult {
    let cfg = a.cfg.resolve()?;
    let exp = Experiment::synthetic(&cfg)?;
    let result = run_matrix(&exp, &cfg, &a.arms, workers(&a.out));
    let table = render_table(
        &format!("few-shot top-1 on {}", exp.dataset.name),
        "arm",
        &result.aggregate,
    );
    write_outputs(&a.out, &result.reports, &table)?;
    print!("{table}");
    check_failures(&result.reports)?;
    let top = cfg.train.shots.iter().max().copied().unwrap_or(0);
    let means: Vec<String> = a
        .arms
        .iter()
        .map(|arm| format!("{arm} {:.2}", result.mean(&arm.to_string(), top)))
        .collect();
    println!(
        "{} runs ({} arms x {} shots x {} seeds); {top}-shot means: {}",
        result.reports.len(),
        a.arms.len(),
        cfg.train.shots.len(),
        cfg.train.seeds.len(),
        means.join(", ")
    );
    Ok(())
}

pub fn shift(a: ShiftArgs) -> CmdResult {
    let cfg = a.cfg.resolve()?;
    let exp = Experiment::synthetic(&cfg)?;
    let result = distribution_shift(&exp, &cfg, a.shots, &a.sigmas, workers(&a.out))?;
    let table = result.table();
    write_outputs(&a.out, &result, &table)?;
    print!("{table}");
    let means: Vec<String> = result
        .shifted_means()
        .iter()
        .map(|m| format!("{m:.2}"))
        .collect();
    println!(
        "shift at {} shots: in-distribution {:.2}, shifted {}",
        a.shots,
        result.in_dist_mean(),
        means.join(" / ")
    );
    Ok(())
}

pub fn export(a: ExportArgs) -> CmdResult {
    let cfg = a.data.cfg.resolve()?;
    let ck = Checkpoint::load(&a.ckpt)?;
    let predictor = Predictor::from_checkpoint(&ck)?;
    let (labels, vectors) = match a.what {
        ExportWhat::Class => (
            (0..predictor.k()).collect(),
            predictor.class_vectors().clone(),
        ),
        what => {
            let ds = dataset_for_eval(&cfg, a.data.dataset.as_deref())?;
            let split = pick(&ds, a.split);
            let i0 = image_embeddings(&predictor, ds.space, &split.x)?;
            let v = if what == ExportWhat::Fused {
                predictor.fused(&i0)?
            } else {
                i0
            };
            (split.labels.clone(), v)
        }
    };
    let mut buf = Vec::new();
    write_vectors_csv(&mut buf, &labels, &vectors)?;
    write_text(&a.out, &String::from_utf8(buf).expect("csv is utf-8"))?;
    println!(
        "wrote {} vectors of dimension {} to {}",
        vectors.rows(),
        vectors.cols(),
        a.out.display()
    );
    Ok(())
}

pub fn show_config(a: ConfigArgs) -> CmdResult {
    print!("{}", a.resolve()?.to_json());
    Ok(())
}
