//! Blocking chat-completions client used as a description source.

use std::time::Duration;

use coknow_core::knowledge::{DescriptionSource, EntrySource, SourceError};
use serde_json::{json, Value};

/// Environment variable holding the bearer token. Read once, never logged
/// or written anywhere.
pub const API_KEY_ENV: &str = "COKNOW_API_KEY";

pub struct ChatClient {
    agent: ureq::Agent,
    url: String,
    model: String,
    temperature: f64,
    api_key: Option<String>,
}

impl ChatClient {
    /// `endpoint` is either a base URL (`.../v1`) or the full
    /// `.../chat/completions` URL.
    pub fn new(endpoint: &str, model: &str, temperature: f64, timeout: Duration) -> Self {
        let trimmed = endpoint.trim_end_matches('/');
        let url = if trimmed.ends_with("/chat/completions") {
            trimmed.to_string()
        } else {
            format!("{trimmed}/chat/completions")
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            agent,
            url,
            model: model.to_string(),
            temperature,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

fn first_choice(v: &Value) -> Option<&str> {
    v.get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
}

impl DescriptionSource for ChatClient {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn entry_source(&self) -> EntrySource {
        EntrySource::Llm
    }

    fn complete(&self, prompt: &str) -> Result<String, SourceError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        });
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        match req.send_json(&body) {
            Ok(mut resp) => {
                let v: Value = resp
                    .body_mut()
                    .read_json()
                    .map_err(|e| SourceError::Fatal(format!("unreadable response: {e}")))?;
                first_choice(&v).map(str::to_string).ok_or_else(|| {
                    SourceError::Fatal("response has no choices[0].message.content".into())
                })
            }
            Err(ureq::Error::StatusCode(s)) if s == 429 || s >= 500 => {
                Err(SourceError::Transient(format!("HTTP {s}")))
            }
            Err(ureq::Error::StatusCode(s)) => Err(SourceError::Fatal(format!("HTTP {s}"))),
            Err(
                e @ (ureq::Error::Timeout(_)
                | ureq::Error::Io(_)
                | ureq::Error::ConnectionFailed
                | ureq::Error::HostNotFound
                | ureq::Error::BodyStalled),
            ) => Err(SourceError::Transient(e.to_string())),
            Err(e) => Err(SourceError::Fatal(e.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_urls() {
        let t = Duration::from_secs(1);
        assert_eq!(
            ChatClient::new("http://h/v1/", "m", 0.0, t).url(),
            "http://h/v1/chat/completions"
        );
        assert_eq!(
            ChatClient::new("http://h/v1/chat/completions", "m", 0.0, t).url(),
            "http://h/v1/chat/completions"
        );
    }

    #[test]
    fn reads_first_choice() {
        let v = json!({"choices": [{"message": {"role": "assistant", "content": "hi"}}]});
        assert_eq!(first_choice(&v), Some("hi"));
        assert_eq!(first_choice(&json!({"choices": []})), None);
    }
}
