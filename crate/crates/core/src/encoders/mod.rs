//! Frozen, seeded toy dual encoder. Parameters are a pure function of
//! [`EncoderConfig`]; nothing in the crate ever writes to them after
//! construction. Gradients flow to *inputs* (raw sequence items) only.

mod image;
mod text;
mod vocab;

use serde::{Deserialize, Serialize};

pub use image::{ImageEmbedding, ImageEncoder};
pub use text::{sinusoidal, tokenize, SeqItem, TextEncoder, TextForward, TokenSequence};
pub use vocab::{words, Vocabulary, PAD, PAD_ID, UNK, UNK_ID};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub d_joint: usize,
    pub d_in: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    /// Multiplier on the sinusoidal position table.
    pub pos_scale: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            d_joint: 64,
            d_in: 64,
            max_len: 32,
            vocab_size: 512,
            pos_scale: 1.0,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_joint == 0 || !self.d_joint.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "d_joint must be a positive multiple of 4, got {}",
                self.d_joint
            )));
        }
        if self.d_model == 0 || self.d_in == 0 || self.max_len == 0 || self.vocab_size < 2 {
            return Err(Error::Config(format!("degenerate encoder shape {self:?}")));
        }
        Ok(())
    }
}

/// Both frozen towers built from one config.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEncoder {
    pub text: TextEncoder,
    pub image: ImageEncoder,
}

impl DualEncoder {
    pub fn new(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            text: TextEncoder::new(config),
            image: ImageEncoder::new(config),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.text.config
    }
}
