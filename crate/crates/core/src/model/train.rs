use serde::{Deserialize, Serialize};

use super::forward::{forward_train, loss_and_backward};
use super::targets::TextTargets;
use super::{CoKnowConfig, CoKnowModel};
use crate::encoders::TextEncoder;
use crate::error::{Error, Result};
use crate::numerics::{cosine_lr, Sgd, SgdCosineConfig, Tensor2};
use crate::rng::{derive_seed, SeededRng};

/// Few-shot training set as frozen image embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub i0: Tensor2,
    pub labels: Vec<usize>,
}

impl TrainingData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Model plus optimizer position; enough to resume bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub model: CoKnowModel,
    pub sgd: Sgd,
    pub step: usize,
    pub epoch: usize,
}

impl TrainingState {
    pub fn new(model: CoKnowModel) -> Self {
        Self {
            model,
            sgd: Sgd::default(),
            step: 0,
            epoch: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean of the summed loss over the epoch's batches.
    pub loss: f64,
    /// Same for the `T0`-branch term alone.
    pub main_loss: f64,
    /// Learning rate at the epoch's last step.
    pub lr: f64,
}

pub fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size.max(1))
}

/// Runs `epochs` epochs from `state.epoch` onward. Each epoch visits the
/// data in an order shuffled by a stream derived from `(seed, epoch)`, so a
/// restored state continues exactly where it left off.
#[allow(clippy::too_many_arguments)]
pub fn train(
    state: &mut TrainingState,
    encoder: &TextEncoder,
    targets: &TextTargets,
    data: &TrainingData,
    cfg: &CoKnowConfig,
    opt: &SgdCosineConfig,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<EpochRecord>> {
    if data.is_empty() {
        return Err(Error::Protocol("training set is empty".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if let Some(&bad) = data.labels.iter().find(|&&l| l >= targets.k()) {
        return Err(Error::Index {
            what: "classes",
            index: bad,
            len: targets.k(),
        });
    }
    cfg.validate()?;
    opt.validate()?;

    let mut records = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        SeededRng::new(derive_seed(seed, &format!("shuffle-{}", state.epoch))).shuffle(&mut order);
        let (mut loss_sum, mut main_sum) = (0.0, 0.0);
        for batch in order.chunks(batch_size) {
            let i0 = data.i0.select_rows(batch);
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
            state.model.zero_grads();
            let out = forward_train(&state.model, encoder, targets, &i0, cfg)?;
            let loss = loss_and_backward(&mut state.model, encoder, targets, &out, &labels, cfg)?;
            loss_sum += loss.total * batch.len() as f64;
            main_sum += loss.main * batch.len() as f64;
            let mut params = state.model.trainable_mut(cfg);
            state.sgd.step(&mut params, opt, state.step);
            state.step += 1;
        }
        records.push(EpochRecord {
            epoch: state.epoch,
            loss: loss_sum / data.len() as f64,
            main_loss: main_sum / data.len() as f64,
            lr: cosine_lr(opt, state.step.saturating_sub(1)),
        });
        state.epoch += 1;
    }
    Ok(records)
}
