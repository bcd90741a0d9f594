//! The three-branch training architecture: learnable-context targets `T0`,
//! knowledge targets `T1`, template targets `T2`, two semantic knowledge
//! mappers producing `I1`/`I2` from the frozen image embedding `I0`, the
//! β-weighted fusion `I'`, and the summed cross-entropy objective.

mod checkpoint;
mod forward;
mod mapper;
mod oracle;
mod targets;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use forward::{forward_train, fusion_weights, loss_and_backward, BranchOutputs, LossBreakdown};
pub use mapper::{Mapper, MapperForward};
pub use oracle::{full_gradient_check, GradCheckCase};
pub use targets::{
    class_token_ids, compute_targets, encode_context_targets, targets_class_tokens, ContextForward,
    TextTargets,
};
pub use train::{steps_per_epoch, train, EpochRecord, TrainingData, TrainingState};

use crate::error::{Error, Result};
use crate::knowledge::KnowledgeKind;
use crate::numerics::Param;
use crate::prompting::{init_context, ClassPosition, SoftPrompt, DEFAULT_CONTEXT_STD};
use crate::rng::{derive_seed, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Fusion `β I0 + (1-β)/2 (I1 + I2)` scored against `T0`.
    Standard,
    /// As standard, but `I0` is itself re-mapped by a third mapper before fusion.
    #[serde(rename = "coknow-i")]
    CoKnowI,
    /// `[I0, I1, I2]` concatenated and scored against `[T0, T1, T2]`; β unused.
    #[serde(rename = "coknow-le")]
    CoKnowLE,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Standard => "standard",
            Variant::CoKnowI => "coknow-i",
            Variant::CoKnowLE => "coknow-le",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "standard" => Ok(Variant::Standard),
            "coknow-i" | "coknowi" => Ok(Variant::CoKnowI),
            "coknow-le" | "coknowle" => Ok(Variant::CoKnowLE),
            other => Err(Error::Input(format!(
                "unknown variant {other:?} (standard|coknow-i|coknow-le)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoKnowConfig {
    /// Logit scale applied to every branch during training.
    pub lambda_scale: f64,
    pub beta: f64,
    /// Softmax temperature at inference.
    pub tau: f64,
    pub context_len: usize,
    pub context_std: f64,
    pub class_position: ClassPosition,
    pub knowledge_kind: KnowledgeKind,
    pub variant: Variant,
    /// Include the two mapper cross-entropy terms. Off (with β = 1) gives
    /// the context-only baseline.
    pub mapper_losses: bool,
    /// Train mappers only; context vectors keep their initial values.
    pub freeze_context: bool,
    /// Re-normalize `I'` before scoring against `T0`.
    pub renormalize_fused: bool,
}

impl Default for CoKnowConfig {
    fn default() -> Self {
        Self {
            lambda_scale: 100.0,
            beta: 0.6,
            tau: 0.01,
            context_len: 16,
            context_std: DEFAULT_CONTEXT_STD,
            class_position: ClassPosition::End,
            knowledge_kind: KnowledgeKind::Pk,
            variant: Variant::Standard,
            mapper_losses: true,
            freeze_context: false,
            renormalize_fused: false,
        }
    }
}

impl CoKnowConfig {
    /// Context-only baseline: β = 1 and no mapper loss terms.
    pub fn baseline() -> Self {
        Self {
            beta: 1.0,
            mapper_losses: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!(
                "beta must be in [0, 1], got {}",
                self.beta
            )));
        }
        if !(self.lambda_scale > 0.0 && self.tau > 0.0) {
            return Err(Error::Config(
                "lambda_scale and tau must be positive".into(),
            ));
        }
        if self.context_len == 0 {
            return Err(Error::Config("context_len must be at least 1".into()));
        }
        if self.context_std < 0.0 {
            return Err(Error::Config("context_std must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Everything the optimizer updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoKnowModel {
    pub prompt: SoftPrompt,
    /// Maps `I0` toward the knowledge targets `T1`.
    pub knowledge_mapper: Mapper,
    /// Maps `I0` toward the hand-crafted template targets `T2`.
    pub template_mapper: Mapper,
    /// Only in the `CoKnowI` variant.
    pub image_mapper: Option<Mapper>,
}

impl CoKnowModel {
    pub fn new(cfg: &CoKnowConfig, d_model: usize, d_joint: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let prompt = init_context(
            cfg.context_len,
            d_model,
            derive_seed(seed, "context"),
            cfg.context_std,
            cfg.class_position,
        )?;
        let mut rng = SeededRng::new(derive_seed(seed, "mappers"));
        let knowledge_mapper = Mapper::new(d_joint, &mut rng)?;
        let template_mapper = Mapper::new(d_joint, &mut rng)?;
        let image_mapper = match cfg.variant {
            Variant::CoKnowI => Some(Mapper::new(d_joint, &mut rng)?),
            _ => None,
        };
        Ok(Self {
            prompt,
            knowledge_mapper,
            template_mapper,
            image_mapper,
        })
    }

    /// Parameters in a fixed order: context, knowledge mapper, template
    /// mapper, image mapper.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.prompt.context];
        out.extend(self.knowledge_mapper.params_mut());
        out.extend(self.template_mapper.params_mut());
        if let Some(m) = self.image_mapper.as_mut() {
            out.extend(m.params_mut());
        }
        out
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = vec![&self.prompt.context];
        out.extend(self.knowledge_mapper.params());
        out.extend(self.template_mapper.params());
        if let Some(m) = self.image_mapper.as_ref() {
            out.extend(m.params());
        }
        out
    }

    /// The parameters the optimizer steps, honoring `freeze_context`.
    pub fn trainable_mut(&mut self, cfg: &CoKnowConfig) -> Vec<&mut Param> {
        let mut all = self.params_mut();
        if cfg.freeze_context {
            all.remove(0);
        }
        all
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coknow_i_adds_exactly_one_mapper() {
        let std = CoKnowModel::new(&CoKnowConfig::default(), 64, 64, 0).unwrap();
        let cfg_i = CoKnowConfig {
            variant: Variant::CoKnowI,
            ..CoKnowConfig::default()
        };
        let with_i = CoKnowModel::new(&cfg_i, 64, 64, 0).unwrap();
        assert_eq!(
            with_i.parameter_count(),
            std.parameter_count() + std.knowledge_mapper.parameter_count()
        );
        // Shared streams: the first two mappers are identical across variants.
        assert_eq!(std.knowledge_mapper, with_i.knowledge_mapper);
    }

    #[test]
    fn config_validation() {
        let mut c = CoKnowConfig {
            beta: 1.2,
            ..CoKnowConfig::default()
        };
        assert!(c.validate().is_err());
        c.beta = 0.0;
        assert!(c.validate().is_ok());
        let b = CoKnowConfig::baseline();
        assert_eq!(b.beta, 1.0);
        assert!(!b.mapper_losses);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in [Variant::Standard, Variant::CoKnowI, Variant::CoKnowLE] {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{v}\""));
        }
    }
}
