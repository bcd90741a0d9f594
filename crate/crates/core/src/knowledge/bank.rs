use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DESCRIPTION_CHARS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnowledgeKind {
    /// Visual attributes.
    Vk,
    /// Nonvisual attributes: function, behaviour, context.
    Nvk,
    /// Panoramic: visual and nonvisual combined.
    Pk,
}

impl KnowledgeKind {
    pub const ALL: [KnowledgeKind; 3] = [KnowledgeKind::Vk, KnowledgeKind::Nvk, KnowledgeKind::Pk];

    pub fn as_str(self) -> &'static str {
        match self {
            KnowledgeKind::Vk => "vk",
            KnowledgeKind::Nvk => "nvk",
            KnowledgeKind::Pk => "pk",
        }
    }
}

impl fmt::Display for KnowledgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_str().to_uppercase())
    }
}

impl FromStr for KnowledgeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vk" => Ok(KnowledgeKind::Vk),
            "nvk" => Ok(KnowledgeKind::Nvk),
            "pk" => Ok(KnowledgeKind::Pk),
            other => Err(Error::Input(format!(
                "unknown knowledge kind {other:?} (vk|nvk|pk)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntrySource {
    Llm,
    Fixture,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub vk: String,
    pub nvk: String,
    pub pk: String,
    pub source: EntrySource,
}

impl KnowledgeEntry {
    pub fn get(&self, kind: KnowledgeKind) -> &str {
        match kind {
            KnowledgeKind::Vk => &self.vk,
            KnowledgeKind::Nvk => &self.nvk,
            KnowledgeKind::Pk => &self.pk,
        }
    }
}

/// One VK/NVK/PK triple per class. Entries are keyed (and therefore
/// serialized) in sorted class-name order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeBank {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    pub dataset_id: String,
    pub entries: BTreeMap<String, KnowledgeEntry>,
    /// Classes that could not be generated; present only on partial banks.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub incomplete: Vec<String>,
    pub model_id: String,
}

impl KnowledgeBank {
    pub fn new(dataset_id: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            created_at: None,
            dataset_id: dataset_id.into(),
            entries: BTreeMap::new(),
            incomplete: Vec::new(),
            model_id: model_id.into(),
        }
    }

    pub fn description_count(&self) -> usize {
        self.entries.len() * KnowledgeKind::ALL.len()
    }

    pub fn is_complete(&self) -> bool {
        self.incomplete.is_empty()
    }

    pub fn description(&self, class: &str, kind: KnowledgeKind) -> Result<&str> {
        self.entries.get(class).map(|e| e.get(kind)).ok_or_else(|| {
            Error::Validation(format!("knowledge bank has no entry for class {class:?}"))
        })
    }

    /// UTF-8 JSON with sorted keys and a trailing newline; the exact bytes
    /// are stable under load/save.
    pub fn to_json(&self) -> Result<String> {
        // Value's map is ordered, which sorts every object's keys.
        let value = serde_json::to_value(self)?;
        let mut s = serde_json::to_string_pretty(&value)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format {
            what: "knowledge bank",
            detail: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
