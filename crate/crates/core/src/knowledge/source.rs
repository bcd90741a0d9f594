//! Where descriptions come from: a chat endpoint (implemented by callers),
//! an offline fixture store, or the on-disk response cache in front of either.
//!
//! Fixtures and cache entries share one layout: a directory of JSON files
//! named `<sha256(model_id + "\n" + prompt)>.json`, each holding
//! `{"model_id", "prompt", "response"}`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::bank::EntrySource;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SourceError {
    /// Offline mode has no reply for this prompt.
    #[error("no fixture for prompt {prompt:?}")]
    Miss { prompt: String },
    /// Worth retrying: timeouts, connection failures, 429/5xx.
    #[error("transient endpoint failure: {0}")]
    Transient(String),
    #[error("endpoint failure: {0}")]
    Fatal(String),
}

pub trait DescriptionSource: Sync {
    fn model_id(&self) -> &str;
    fn entry_source(&self) -> EntrySource;
    fn complete(&self, prompt: &str) -> std::result::Result<String, SourceError>;
}

pub fn cache_key(model_id: &str, prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(model_id.as_bytes());
    h.update(b"\n");
    h.update(prompt.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedReply {
    pub model_id: String,
    pub prompt: String,
    pub response: String,
}

impl CachedReply {
    fn file_name(&self) -> String {
        format!("{}.json", cache_key(&self.model_id, &self.prompt))
    }

    fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(self.file_name());
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

/// In-memory view of a fixture directory.
#[derive(Debug, Clone, Default)]
pub struct FixtureStore {
    model_id: String,
    replies: HashMap<String, String>,
}

impl FixtureStore {
    pub fn new(model_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            replies: HashMap::new(),
        }
    }

    pub fn insert(&mut self, prompt: &str, response: impl Into<String>) {
        self.replies
            .insert(cache_key(&self.model_id, prompt), response.into());
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }

    /// Loads every `*.json` reply in `dir`. Replies recorded for other model
    /// ids are kept but never match.
    pub fn load_dir(dir: &Path, model_id: impl Into<String>) -> Result<Self> {
        let mut store = Self::new(model_id);
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let reply: CachedReply = serde_json::from_str(&std::fs::read_to_string(&path)?)
                .map_err(|e| Error::Format {
                    what: "fixture file",
                    detail: format!("{}: {e}", path.display()),
                })?;
            store
                .replies
                .insert(cache_key(&reply.model_id, &reply.prompt), reply.response);
        }
        Ok(store)
    }

    /// Writes one file per `(prompt, response)` pair under `dir`.
    pub fn write_dir<'a>(
        dir: &Path,
        model_id: &str,
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<usize> {
        let mut n = 0;
        for (prompt, response) in pairs {
            CachedReply {
                model_id: model_id.to_string(),
                prompt: prompt.to_string(),
                response: response.to_string(),
            }
            .write(dir)?;
            n += 1;
        }
        Ok(n)
    }
}

impl DescriptionSource for FixtureStore {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn entry_source(&self) -> EntrySource {
        EntrySource::Fixture
    }

    fn complete(&self, prompt: &str) -> std::result::Result<String, SourceError> {
        self.replies
            .get(&cache_key(&self.model_id, prompt))
            .cloned()
            .ok_or_else(|| SourceError::Miss {
                prompt: prompt.to_string(),
            })
    }
}

/// Read-through disk cache in front of another source.
pub struct CachedSource<S> {
    inner: S,
    dir: PathBuf,
}

impl<S: DescriptionSource> CachedSource<S> {
    pub fn new(inner: S, dir: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            dir: dir.into(),
        }
    }

    fn path(&self, prompt: &str) -> PathBuf {
        self.dir
            .join(format!("{}.json", cache_key(self.inner.model_id(), prompt)))
    }
}

impl<S: DescriptionSource> DescriptionSource for CachedSource<S> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn entry_source(&self) -> EntrySource {
        self.inner.entry_source()
    }

    fn complete(&self, prompt: &str) -> std::result::Result<String, SourceError> {
        let path = self.path(prompt);
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Ok(reply) = serde_json::from_str::<CachedReply>(&text) {
                if reply.prompt == prompt && reply.model_id == self.model_id() {
                    return Ok(reply.response);
                }
            }
        }
        let response = self.inner.complete(prompt)?;
        let reply = CachedReply {
            model_id: self.model_id().to_string(),
            prompt: prompt.to_string(),
            response: response.clone(),
        };
        if let Err(e) = reply.write(&self.dir) {
            log::warn!("could not write response cache {}: {e}", path.display());
        }
        Ok(response)
    }
}
