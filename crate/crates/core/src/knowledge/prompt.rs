use serde::{Deserialize, Serialize};

use super::bank::KnowledgeKind;
use crate::error::{Error, Result};

pub const CLASS_PLACEHOLDER: &str = "[CLASS]";

/// A fixed generation prompt with one `[CLASS]` slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenPrompt {
    pub kind: KnowledgeKind,
    pub template: String,
    pub max_words: usize,
}

impl GenPrompt {
    pub fn new(kind: KnowledgeKind, template: impl Into<String>, max_words: usize) -> Result<Self> {
        let p = Self {
            kind,
            template: template.into(),
            max_words,
        };
        p.check_template()?;
        Ok(p)
    }

    fn check_template(&self) -> Result<()> {
        match self.template.matches(CLASS_PLACEHOLDER).count() {
            1 => Ok(()),
            n => Err(Error::Template(format!(
                "{} prompt must contain exactly one {CLASS_PLACEHOLDER}, found {n}",
                self.kind
            ))),
        }
    }

    pub fn render(&self, class_name: &str) -> Result<String> {
        self.check_template()?;
        if class_name.trim().is_empty() {
            return Err(Error::Input("class name must be nonempty".into()));
        }
        Ok(self.template.replacen(CLASS_PLACEHOLDER, class_name, 1))
    }
}

/// The three generation prompts. The wordings are editable defaults, not
/// canonical: only example replies, never the prompts, are public.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub vk: GenPrompt,
    pub nvk: GenPrompt,
    pub pk: GenPrompt,
}

impl PromptSet {
    pub fn get(&self, kind: KnowledgeKind) -> &GenPrompt {
        match kind {
            KnowledgeKind::Vk => &self.vk,
            KnowledgeKind::Nvk => &self.nvk,
            KnowledgeKind::Pk => &self.pk,
        }
    }
}

impl Default for PromptSet {
    fn default() -> Self {
        let p = |kind, t: &str| GenPrompt::new(kind, t, 12).expect("default template is valid");
        Self {
            vk: p(
                KnowledgeKind::Vk,
                "Describe only the visual appearance of a [CLASS] (shape, color, parts, texture) \
                 in one short phrase of at most 12 words.",
            ),
            nvk: p(
                KnowledgeKind::Nvk,
                "Describe a [CLASS] from a nonvisual perspective (its function, behavior, or purpose) \
                 in one short phrase of at most 12 words.",
            ),
            pk: p(
                KnowledgeKind::Pk,
                "Describe a [CLASS] comprehensively, combining its visual appearance and nonvisual \
                 characteristics, in one short phrase of at most 12 words.",
            ),
        }
    }
}
