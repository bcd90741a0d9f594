use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::dataset::test_split;
use super::protocol::{
    evaluate_top1, mean_std, parallel_map, render_table, run_grid, train_run, Experiment,
    MatrixResult,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::inference::Predictor;
use crate::knowledge::KnowledgeKind;
use crate::model::Variant;
use crate::prompting::ClassPosition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sweep {
    Beta,
    Ctxlen,
    Position,
    Knowledge,
    Variant,
}

impl Sweep {
    pub const ALL: [Sweep; 5] = [
        Sweep::Beta,
        Sweep::Ctxlen,
        Sweep::Position,
        Sweep::Knowledge,
        Sweep::Variant,
    ];

    /// Swept values as `(label, config)`; everything else is `base`.
    pub fn configs(self, base: &RunConfig) -> Vec<(String, RunConfig)> {
        let with = |f: &dyn Fn(&mut RunConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c
        };
        match self {
            Sweep::Beta => [0.4, 0.6, 0.8]
                .iter()
                .map(|&b| (format!("beta={b}"), with(&|c| c.model.beta = b)))
                .collect(),
            Sweep::Ctxlen => {
                // One encoder for all three lengths; the sinusoidal table and
                // every drawn weight are independent of max_len.
                let max_len = base.encoder.max_len.max(32 + 8);
                [8, 16, 32]
                    .iter()
                    .map(|&m| {
                        (
                            format!("M={m}"),
                            with(&|c| {
                                c.model.context_len = m;
                                c.encoder.max_len = max_len;
                            }),
                        )
                    })
                    .collect()
            }
            Sweep::Position => [ClassPosition::End, ClassPosition::Middle]
                .iter()
                .map(|&p| {
                    (
                        format!("position={p}"),
                        with(&|c| c.model.class_position = p),
                    )
                })
                .collect(),
            Sweep::Knowledge => KnowledgeKind::ALL
                .iter()
                .map(|&k| {
                    (
                        format!("knowledge={k}"),
                        with(&|c| c.model.knowledge_kind = k),
                    )
                })
                .collect(),
            Sweep::Variant => [Variant::Standard, Variant::CoKnowI, Variant::CoKnowLE]
                .iter()
                .map(|&v| (format!("variant={v}"), with(&|c| c.model.variant = v)))
                .collect(),
        }
    }
}

impl fmt::Display for Sweep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sweep::Beta => "beta",
            Sweep::Ctxlen => "ctxlen",
            Sweep::Position => "position",
            Sweep::Knowledge => "knowledge",
            Sweep::Variant => "variant",
        })
    }
}

impl FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Sweep::ALL
            .into_iter()
            .find(|w| w.to_string() == s)
            .ok_or_else(|| {
                Error::Input(format!(
                    "unknown sweep {s:?} (beta|ctxlen|position|knowledge|variant)"
                ))
            })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub sweep: Sweep,
    pub shots: usize,
    pub matrix: MatrixResult,
}

impl SweepResult {
    pub fn table(&self) -> String {
        render_table(
            &format!("{} sweep ({} shots)", self.sweep, self.shots),
            "value",
            &self.matrix.aggregate,
        )
    }

    /// Max minus min of the per-value mean accuracies, in points.
    pub fn spread(&self) -> f64 {
        let means = self.matrix.aggregate.iter().map(|r| r.mean);
        let (lo, hi) = means.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| {
            (lo.min(m), hi.max(m))
        });
        hi - lo
    }
}

/// One table row per swept value at a single shot setting.
pub fn run_sweep(
    exp: &Experiment,
    base: &RunConfig,
    sweep: Sweep,
    shots: usize,
    workers: usize,
) -> SweepResult {
    let configs = sweep.configs(base);
    SweepResult {
        sweep,
        shots,
        matrix: run_grid(exp, &configs, &[shots], &base.train.seeds, workers),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftRun {
    pub seed: u64,
    pub in_dist: f64,
    /// Accuracy at each shifted sigma, aligned with [`ShiftResult::sigmas`].
    pub shifted: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftResult {
    pub shots: usize,
    pub sigma: f64,
    pub sigmas: Vec<f64>,
    pub runs: Vec<ShiftRun>,
}

impl ShiftResult {
    /// Mean accuracy in percent per shifted sigma.
    pub fn shifted_means(&self) -> Vec<f64> {
        (0..self.sigmas.len())
            .map(|i| {
                mean_std(
                    &self
                        .runs
                        .iter()
                        .map(|r| 100.0 * r.shifted[i])
                        .collect::<Vec<_>>(),
                )
                .0
            })
            .collect()
    }

    pub fn in_dist_mean(&self) -> f64 {
        mean_std(
            &self
                .runs
                .iter()
                .map(|r| 100.0 * r.in_dist)
                .collect::<Vec<_>>(),
        )
        .0
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "distribution shift ({} shots, train sigma {})\nsigma'  top1 mean\n{:<6}  {:>9.2}  (in-distribution)\n",
            self.shots,
            self.sigma,
            self.sigma,
            self.in_dist_mean()
        );
        for (s, m) in self.sigmas.iter().zip(self.shifted_means()) {
            out.push_str(&format!("{s:<6}  {m:>9.2}\n"));
        }
        out
    }
}

/// Trains on the synthetic dataset's shots, then evaluates on the standard
/// test split and on test splits re-noised at each of `sigmas` around the
/// same prototypes.
pub fn distribution_shift(
    exp: &Experiment,
    cfg: &RunConfig,
    shots: usize,
    sigmas: &[f64],
    workers: usize,
) -> Result<ShiftResult> {
    let protos =
        exp.dataset.prototypes.as_ref().ok_or_else(|| {
            Error::Protocol("distribution shift needs a synthetic dataset".into())
        })?;
    let spec = exp
        .dataset
        .spec
        .as_ref()
        .expect("synthetic datasets carry their spec");
    let shifted_sets = sigmas
        .iter()
        .map(|&s| test_split(protos, spec.per_class_test, s, spec.seed))
        .collect::<Result<Vec<_>>>()?;
    let runs = parallel_map(&cfg.train.seeds, workers, |&seed| -> Result<ShiftRun> {
        let run = train_run(exp, cfg, shots, seed)?;
        let p = Predictor::from_checkpoint(&run.checkpoint)?;
        Ok(ShiftRun {
            seed,
            in_dist: evaluate_top1(&p, &exp.dataset, &exp.dataset.test)?,
            shifted: shifted_sets
                .iter()
                .map(|t| evaluate_top1(&p, &exp.dataset, t))
                .collect::<Result<_>>()?,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(ShiftResult {
        shots,
        sigma: spec.sigma,
        sigmas: sigmas.to_vec(),
        runs,
    })
}
