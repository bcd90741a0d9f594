use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::TrainingState;
use super::{CoKnowConfig, Variant};
use crate::encoders::{EncoderConfig, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::{SgdCosineConfig, Tensor2};

pub const CHECKPOINT_FORMAT: &str = "coknow-checkpoint/1";

/// Everything needed to predict from raw image features, and to resume
/// training bit-exactly. The frozen encoder is rebuilt from `encoder`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub seed: u64,
    pub config: CoKnowConfig,
    pub optimizer: SgdCosineConfig,
    pub encoder: EncoderConfig,
    pub vocab: Vec<String>,
    pub classes: Vec<String>,
    pub state: TrainingState,
    /// Knowledge and template targets, kept only for the concatenated
    /// variant, whose prediction scores against them too.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch_targets: Option<[Tensor2; 2]>,
}

impl Checkpoint {
    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::new(self.vocab.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Format {
                what: "checkpoint",
                detail: format!("unsupported format {:?}", self.format),
            });
        }
        self.config.validate()?;
        self.encoder.validate()?;
        let m = &self.state.model;
        if m.prompt.d_model() != self.encoder.d_model
            || m.knowledge_mapper.dim() != self.encoder.d_joint
        {
            return Err(Error::Validation(format!(
                "checkpoint parameters do not match encoder widths d_model={} d_joint={}",
                self.encoder.d_model, self.encoder.d_joint
            )));
        }
        if m.prompt.len() != self.config.context_len {
            return Err(Error::Validation(
                "context length disagrees with config".into(),
            ));
        }
        if self.classes.len() < 2 {
            return Err(Error::Validation(
                "checkpoint needs at least two classes".into(),
            ));
        }
        let le = self.config.variant == Variant::CoKnowLE;
        match &self.branch_targets {
            Some([t1, t2]) if le => {
                let want = (self.classes.len(), self.encoder.d_joint);
                if t1.shape() != want || t2.shape() != want {
                    return Err(Error::dim("checkpoint_targets", t1.shape(), want));
                }
            }
            None if !le => {}
            _ => {
                return Err(Error::Validation(
                    "branch targets must be present exactly for the coknow-le variant".into(),
                ))
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
