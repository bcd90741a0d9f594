//! Text-side inputs: the hand-crafted template and the shared learnable
//! context with its class-token placement.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoders::{SeqItem, TokenSequence};
use crate::error::{Error, Result};
use crate::knowledge::CLASS_PLACEHOLDER;
use crate::numerics::{Param, Tensor2};
use crate::rng::SeededRng;

pub const DEFAULT_TEMPLATE: &str = "a photo of a [CLASS]";
pub const DEFAULT_CONTEXT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassPosition {
    End,
    Middle,
}

impl fmt::Display for ClassPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassPosition::End => "end",
            ClassPosition::Middle => "middle",
        })
    }
}

impl FromStr for ClassPosition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "end" => Ok(ClassPosition::End),
            "middle" => Ok(ClassPosition::Middle),
            other => Err(Error::Input(format!(
                "unknown class position {other:?} (end|middle)"
            ))),
        }
    }
}

/// `M` context vectors shared by every class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftPrompt {
    pub context: Param,
    pub class_position: ClassPosition,
}

impl SoftPrompt {
    pub fn len(&self) -> usize {
        self.context.value.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d_model(&self) -> usize {
        self.context.value.cols()
    }
}

/// Gaussian init with standard deviation `std`.
pub fn init_context(
    m: usize,
    d_model: usize,
    seed: u64,
    std: f64,
    position: ClassPosition,
) -> Result<SoftPrompt> {
    if m == 0 {
        return Err(Error::Config("context length must be at least 1".into()));
    }
    let mut rng = SeededRng::new(seed);
    Ok(SoftPrompt {
        context: Param::new(Tensor2::randn(m, d_model, std, &mut rng)),
        class_position: position,
    })
}

/// `End`: `[v_1..v_M, class]`. `Middle`: `[v_1..v_ceil(M/2), class, rest]`.
/// Raw items always appear in context-row order, so the i-th raw gradient
/// returned by the text encoder belongs to context row i.
pub fn assemble_soft_sequence(
    prompt: &SoftPrompt,
    class_tokens: &[usize],
    max_len: usize,
) -> Result<TokenSequence> {
    if class_tokens.is_empty() {
        return Err(Error::Input("class name has no tokens".into()));
    }
    let m = prompt.len();
    let total = m + class_tokens.len();
    if total > max_len {
        return Err(Error::Input(format!(
            "context of {m} plus {} class tokens exceeds max length {max_len}",
            class_tokens.len()
        )));
    }
    let split = match prompt.class_position {
        ClassPosition::End => m,
        ClassPosition::Middle => m.div_ceil(2),
    };
    let ctx = |i: usize| SeqItem::Raw(prompt.context.value.row(i).to_vec());
    let mut items = Vec::with_capacity(total);
    items.extend((0..split).map(ctx));
    items.extend(class_tokens.iter().map(|&t| SeqItem::Token(t)));
    items.extend((split..m).map(ctx));
    TokenSequence::new(items, max_len)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandcraftedTemplate {
    pub pattern: String,
}

impl Default for HandcraftedTemplate {
    fn default() -> Self {
        Self {
            pattern: DEFAULT_TEMPLATE.into(),
        }
    }
}

impl HandcraftedTemplate {
    pub fn new(pattern: impl Into<String>) -> Result<Self> {
        let pattern = pattern.into();
        match pattern.matches(CLASS_PLACEHOLDER).count() {
            1 => Ok(Self { pattern }),
            n => Err(Error::Template(format!(
                "template {pattern:?} must contain exactly one {CLASS_PLACEHOLDER}, found {n}"
            ))),
        }
    }

    pub fn expand(&self, classes: &[String]) -> Vec<String> {
        classes
            .iter()
            .map(|c| self.pattern.replacen(CLASS_PLACEHOLDER, c, 1))
            .collect()
    }
}
