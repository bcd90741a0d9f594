use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::dataset::{
    build_vocabulary, class_names, make_synthetic, sample_shots, synthetic_bank, Dataset,
    FeatureSpace, Split,
};
use crate::config::RunConfig;
use crate::encoders::{DualEncoder, Vocabulary};
use crate::error::{Error, Result};
use crate::inference::Predictor;
use crate::knowledge::KnowledgeBank;
use crate::model::{
    compute_targets, steps_per_epoch, train, Checkpoint, CoKnowModel, EpochRecord, TextTargets,
    TrainingData, TrainingState, Variant, CHECKPOINT_FORMAT,
};
use crate::prompting::HandcraftedTemplate;
use crate::rng::derive_seed;

/// A dataset plus the knowledge bank its classes are described by.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub dataset: Dataset,
    pub bank: KnowledgeBank,
}

impl Experiment {
    /// The synthetic dataset of `cfg.data` with its fixture bank.
    pub fn synthetic(cfg: &RunConfig) -> Result<Self> {
        let classes = class_names(cfg.data.k);
        let bank = synthetic_bank(&classes, "synthetic");
        let anchors = if cfg.data.align > 0.0 {
            Some(caption_anchors(cfg, &classes, &bank)?)
        } else {
            None
        };
        let mut dataset = make_synthetic(&cfg.data, anchors.as_ref())?;
        dataset.name.push_str(&anchor_suffix(cfg.data.align));
        let mut bank = bank;
        bank.dataset_id = dataset.name.clone();
        Ok(Self { dataset, bank })
    }

    pub fn vocabulary(&self, cfg: &RunConfig) -> Vocabulary {
        build_vocabulary(
            &self.dataset.classes,
            &self.bank,
            &cfg.template,
            cfg.encoder.vocab_size,
        )
    }

    pub fn encoders(&self, cfg: &RunConfig) -> Result<DualEncoder> {
        let want = match self.dataset.space {
            FeatureSpace::Raw => cfg.encoder.d_in,
            FeatureSpace::Embedding => cfg.encoder.d_joint,
        };
        if self.dataset.dim() != want {
            return Err(Error::Validation(format!(
                "{} features have dimension {}, config expects {want}",
                self.dataset.space.as_str(),
                self.dataset.dim()
            )));
        }
        DualEncoder::new(&cfg.encoder)
    }

    pub fn targets(
        &self,
        cfg: &RunConfig,
        enc: &DualEncoder,
        vocab: &Vocabulary,
    ) -> Result<TextTargets> {
        compute_targets(
            &self.dataset.classes,
            &self.bank,
            cfg.model.knowledge_kind,
            &HandcraftedTemplate::new(cfg.template.clone())?,
            &enc.text,
            vocab,
        )
    }
}

/// A trained run: the checkpoint and the per-epoch records.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochRecord>,
}

/// Samples `shots` per class with `seed`, trains from a model initialized
/// with `seed`, and packages the result as a checkpoint.
pub fn train_run(exp: &Experiment, cfg: &RunConfig, shots: usize, seed: u64) -> Result<TrainedRun> {
    cfg.validate()?;
    let enc = exp.encoders(cfg)?;
    let vocab = exp.vocabulary(cfg);
    let targets = exp.targets(cfg, &enc, &vocab)?;
    let shot_split = sample_shots(&exp.dataset, shots, seed)?;
    let data = TrainingData {
        i0: exp.dataset.embed(&shot_split, &enc.image)?,
        labels: shot_split.labels,
    };
    let model = CoKnowModel::new(
        &cfg.model,
        cfg.encoder.d_model,
        cfg.encoder.d_joint,
        derive_seed(seed, "model"),
    )?;
    let opt = cfg
        .optim
        .schedule(cfg.train.epochs * steps_per_epoch(data.len(), cfg.train.batch_size));
    let mut state = TrainingState::new(model);
    let epochs = train(
        &mut state,
        &enc.text,
        &targets,
        &data,
        &cfg.model,
        &opt,
        cfg.train.epochs,
        cfg.train.batch_size,
        derive_seed(seed, "train"),
    )?;
    let branch_targets =
        (cfg.model.variant == Variant::CoKnowLE).then(|| [targets.t1.clone(), targets.t2.clone()]);
    Ok(TrainedRun {
        checkpoint: Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            seed,
            config: cfg.model.clone(),
            optimizer: opt,
            encoder: cfg.encoder.clone(),
            vocab: vocab.tokens().to_vec(),
            classes: exp.dataset.classes.clone(),
            state,
            branch_targets,
        },
        epochs,
    })
}

/// Fraction of `split` whose top-1 prediction equals the label.
pub fn evaluate_top1(predictor: &Predictor, ds: &Dataset, split: &Split) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::Protocol(
            "cannot evaluate on an empty test set".into(),
        ));
    }
    if predictor.k() != ds.k() {
        return Err(Error::Validation(format!(
            "checkpoint has {} classes, dataset has {}",
            predictor.k(),
            ds.k()
        )));
    }
    let preds = match ds.space {
        FeatureSpace::Raw => predictor.predict_raw(&split.x)?,
        FeatureSpace::Embedding => predictor.predict_embeddings(
            &crate::numerics::l2_normalize_rows(&split.x, crate::numerics::DEFAULT_EPS).out,
        )?,
    };
    let hits = preds
        .iter()
        .zip(&split.labels)
        .filter(|(p, &l)| p.top1 == l)
        .count();
    Ok(hits as f64 / split.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    CoKnow,
    /// Context-only training (β = 1, no mapper losses).
    Baseline,
    CoKnowI,
    CoKnowLe,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::CoKnow, Arm::Baseline, Arm::CoKnowI, Arm::CoKnowLe];

    /// `base` with this arm's model settings applied.
    pub fn apply(self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        match self {
            Arm::CoKnow => cfg.model.variant = Variant::Standard,
            Arm::Baseline => {
                cfg.model.variant = Variant::Standard;
                cfg.model.beta = 1.0;
                cfg.model.mapper_losses = false;
            }
            Arm::CoKnowI => cfg.model.variant = Variant::CoKnowI,
            Arm::CoKnowLe => cfg.model.variant = Variant::CoKnowLE,
        }
        cfg
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arm::CoKnow => "coknow",
            Arm::Baseline => "baseline",
            Arm::CoKnowI => "coknow-i",
            Arm::CoKnowLe => "coknow-le",
        })
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                Error::Input(format!(
                    "unknown arm {s:?} (coknow|baseline|coknow-i|coknow-le)"
                ))
            })
    }
}

/// One training run. Every field but `wall_clock_s` is a deterministic
/// function of `(config, seed)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub arm: String,
    pub shots: usize,
    pub seed: u64,
    pub config: BTreeMap<String, Value>,
    pub epochs: Vec<EpochRecord>,
    pub top1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub wall_clock_s: f64,
}

impl RunReport {
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_s: 0.0,
            ..self.clone()
        }
    }
}

/// Runs and evaluates one `(config, shots, seed)` cell. Failures end up in
/// `error` rather than propagating.
pub fn run_one(
    exp: &Experiment,
    cfg: &RunConfig,
    arm: &str,
    shots: usize,
    seed: u64,
) -> (RunReport, Option<TrainedRun>) {
    let start = Instant::now();
    let result = train_run(exp, cfg, shots, seed).and_then(|run| {
        let predictor = Predictor::from_checkpoint(&run.checkpoint)?;
        let acc = evaluate_top1(&predictor, &exp.dataset, &exp.dataset.test)?;
        Ok((acc, run))
    });
    let mut report = RunReport {
        dataset: exp.dataset.name.clone(),
        arm: arm.to_string(),
        shots,
        seed,
        config: cfg.to_flat(),
        epochs: Vec::new(),
        top1: None,
        error: None,
        wall_clock_s: 0.0,
    };
    let run = match result {
        Ok((acc, run)) => {
            report.top1 = Some(acc);
            report.epochs = run.epochs.clone();
            Some(run)
        }
        Err(e) => {
            log::warn!("run {arm} shots={shots} seed={seed} failed: {e}");
            report.error = Some(e.to_string());
            None
        }
    };
    report.wall_clock_s = start.elapsed().as_secs_f64();
    (report, run)
}

/// Maps `f` over `items` on up to `workers` threads; output keeps input order.
pub fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                slots.lock().expect("slots lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("slots lock")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    /// Arm name or swept value.
    pub label: String,
    pub shots: usize,
    /// Successful runs.
    pub n: usize,
    pub failures: usize,
    /// Top-1 accuracy in percent.
    pub mean: f64,
    /// Sample standard deviation in percent (0 for a single run).
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups reports by `(arm, shots)` in first-seen order.
pub fn aggregate(reports: &[RunReport]) -> Vec<AggregateRow> {
    let mut keys: Vec<(String, usize)> = Vec::new();
    for r in reports {
        let key = (r.arm.clone(), r.shots);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(label, shots)| {
            let cell: Vec<&RunReport> = reports
                .iter()
                .filter(|r| r.arm == label && r.shots == shots)
                .collect();
            let accs: Vec<f64> = cell
                .iter()
                .filter_map(|r| r.top1)
                .map(|a| 100.0 * a)
                .collect();
            let (mean, std) = mean_std(&accs);
            AggregateRow {
                label,
                shots,
                n: accs.len(),
                failures: cell.len() - accs.len(),
                mean,
                std,
            }
        })
        .collect()
}

/// Aligned UTF-8 table, one line per row.
pub fn render_table(title: &str, label_header: &str, rows: &[AggregateRow]) -> String {
    let header = [label_header, "shots", "n", "fail", "top1 mean", "top1 std"];
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.label.clone(),
                r.shots.to_string(),
                r.n.to_string(),
                r.failures.to_string(),
                format!("{:.2}", r.mean),
                format!("{:.2}", r.std),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cols: [&str; 6]| {
        let mut s = format!("{:<w$}", cols[0], w = widths[0]);
        for (c, w) in cols[1..].iter().zip(&widths[1..]) {
            s.push_str(&format!("  {c:>w$}"));
        }
        s.trim_end().to_string()
    };
    let mut out = format!("{title}\n{}\n", line(header));
    for row in &cells {
        out.push_str(&line([
            &row[0], &row[1], &row[2], &row[3], &row[4], &row[5],
        ]));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixResult {
    pub reports: Vec<RunReport>,
    pub aggregate: Vec<AggregateRow>,
}

impl MatrixResult {
    pub fn row(&self, label: &str, shots: usize) -> Option<&AggregateRow> {
        self.aggregate
            .iter()
            .find(|r| r.label == label && r.shots == shots)
    }

    pub fn mean(&self, label: &str, shots: usize) -> f64 {
        self.row(label, shots).map_or(f64::NAN, |r| r.mean)
    }
}

/// Labeled configurations crossed with shots and seeds.
pub fn run_grid(
    exp: &Experiment,
    configs: &[(String, RunConfig)],
    shots: &[usize],
    seeds: &[u64],
    workers: usize,
) -> MatrixResult {
    let mut jobs = Vec::new();
    for (label, cfg) in configs {
        for &s in shots {
            for &seed in seeds {
                jobs.push((label.as_str(), cfg, s, seed));
            }
        }
    }
    let reports = parallel_map(&jobs, workers, |(label, cfg, s, seed)| {
        run_one(exp, cfg, label, *s, *seed).0
    });
    let aggregate = aggregate(&reports);
    MatrixResult { reports, aggregate }
}

/// Full cross product of arms, `cfg.train.shots` and `cfg.train.seeds`.
pub fn run_matrix(exp: &Experiment, cfg: &RunConfig, arms: &[Arm], workers: usize) -> MatrixResult {
    let configs: Vec<(String, RunConfig)> =
        arms.iter().map(|a| (a.to_string(), a.apply(cfg))).collect();
    run_grid(exp, &configs, &cfg.train.shots, &cfg.train.seeds, workers)
}

fn anchor_suffix(align: f64) -> String {
    if align > 0.0 {
        format!("-align{align}")
    } else {
        String::new()
    }
}

/// Raw-space directions whose image embeddings approximate the centered
/// caption embeddings `T2_c - mean(T2)`: `a_c = (T2_c - mean) P^T` for the
/// frozen image projection `P`. Mixing these into the prototypes plays the
/// role of image-text pretraining.
pub fn caption_anchors(
    cfg: &RunConfig,
    classes: &[String],
    bank: &KnowledgeBank,
) -> Result<crate::numerics::Tensor2> {
    let enc = DualEncoder::new(&cfg.encoder)?;
    let vocab = build_vocabulary(classes, bank, &cfg.template, cfg.encoder.vocab_size);
    let rows = HandcraftedTemplate::new(cfg.template.clone())?
        .expand(classes)
        .iter()
        .map(|s| enc.text.encode_text(s, &vocab))
        .collect::<Result<Vec<_>>>()?;
    let t2 = crate::numerics::Tensor2::from_rows(&rows)?;
    let mut mean = t2.sum_rows();
    mean = mean.scale(1.0 / t2.rows() as f64);
    let mut centered = t2.clone();
    for r in 0..centered.rows() {
        for (v, m) in centered.row_mut(r).iter_mut().zip(mean.data()) {
            *v -= m;
        }
    }
    crate::numerics::matmul_nt(&centered, &enc.image.proj)
}

/// Plain zero-shot top-1: each test image against the hand-crafted
/// template embeddings `T2`, no training involved.
pub fn zero_shot_top1(exp: &Experiment, cfg: &RunConfig) -> Result<f64> {
    let enc = exp.encoders(cfg)?;
    let vocab = exp.vocabulary(cfg);
    let targets = exp.targets(cfg, &enc, &vocab)?;
    let test = &exp.dataset.test;
    if test.is_empty() {
        return Err(Error::Protocol(
            "cannot evaluate on an empty test set".into(),
        ));
    }
    let i0 = exp.dataset.embed(test, &enc.image)?;
    let mut hits = 0;
    for (row, &label) in i0.iter_rows().zip(&test.labels) {
        let sims: Vec<f64> = targets
            .t2
            .iter_rows()
            .map(|t| crate::inference::cosine(t, row))
            .collect();
        if crate::inference::Prediction::from_similarities(&sims, cfg.model.tau)?.top1 == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / test.len() as f64)
}
