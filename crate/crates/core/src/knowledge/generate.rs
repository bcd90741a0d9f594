use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use super::bank::{KnowledgeBank, KnowledgeEntry, KnowledgeKind, MAX_DESCRIPTION_CHARS};
use super::prompt::PromptSet;
use super::source::{DescriptionSource, SourceError};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub dataset_id: String,
    pub created_at: Option<String>,
    /// Maximum in-flight requests.
    pub concurrency: usize,
    /// Extra attempts after a transient failure.
    pub retries: u32,
    /// First backoff delay; doubles on each retry.
    pub backoff: Duration,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            dataset_id: "default".into(),
            created_at: None,
            concurrency: 4,
            retries: 3,
            backoff: Duration::from_millis(500),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationFailure {
    pub class_name: String,
    pub kind: KnowledgeKind,
    pub error: SourceError,
}

impl std::fmt::Display for GenerationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "class {:?} kind {}: {}",
            self.class_name, self.kind, self.error
        )
    }
}

#[derive(Debug, Clone)]
pub struct GenerationOutcome {
    /// Complete entries only; failed classes are listed in `bank.incomplete`.
    pub bank: KnowledgeBank,
    pub failures: Vec<GenerationFailure>,
}

impl GenerationOutcome {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    /// True if any failure came from the endpoint rather than a fixture miss.
    pub fn has_service_failure(&self) -> bool {
        self.failures
            .iter()
            .any(|f| !matches!(f.error, SourceError::Miss { .. }))
    }
}

/// Raw assistant text, whitespace-trimmed and cut to 512 characters.
pub fn clean_response(text: &str) -> String {
    text.trim().chars().take(MAX_DESCRIPTION_CHARS).collect()
}

/// Renders every (class, kind) prompt, queries `source` with up to
/// `opts.concurrency` requests in flight, retries transient failures with
/// exponential backoff and assembles the bank in sorted order.
pub fn generate_bank(
    classes: &[String],
    prompts: &PromptSet,
    source: &dyn DescriptionSource,
    opts: &GenerateOptions,
) -> Result<GenerationOutcome> {
    if classes.is_empty() {
        return Err(Error::Input("class list is empty".into()));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = classes.iter().find(|c| !seen.insert(c.as_str())) {
        return Err(Error::Input(format!("duplicate class {dup:?}")));
    }

    let mut jobs = Vec::with_capacity(classes.len() * 3);
    for class in classes {
        for kind in KnowledgeKind::ALL {
            jobs.push((class.as_str(), kind, prompts.get(kind).render(class)?));
        }
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<std::result::Result<String, SourceError>>>> =
        Mutex::new(vec![None; jobs.len()]);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some((_, _, prompt)) = jobs.get(i) else {
            break;
        };
        let r = complete_with_retry(source, prompt, opts);
        results.lock().expect("results lock")[i] = Some(r);
    };
    let workers = opts.concurrency.clamp(1, jobs.len());
    if workers == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(worker);
            }
        });
    }
    let results = results.into_inner().expect("results lock");

    let mut replies: BTreeMap<&str, [Option<String>; 3]> = BTreeMap::new();
    let mut failures = Vec::new();
    for ((class, kind, _), r) in jobs.iter().zip(results) {
        match r.expect("every job ran") {
            Ok(text) => {
                let slot = replies.entry(class).or_default();
                slot[kind_index(*kind)] = Some(clean_response(&text));
            }
            Err(error) => failures.push(GenerationFailure {
                class_name: class.to_string(),
                kind: *kind,
                error,
            }),
        }
    }

    let mut bank = KnowledgeBank::new(&opts.dataset_id, source.model_id());
    bank.created_at = opts.created_at.clone();
    let failed: HashSet<&str> = failures.iter().map(|f| f.class_name.as_str()).collect();
    for class in classes {
        if failed.contains(class.as_str()) {
            bank.incomplete.push(class.clone());
            continue;
        }
        let [vk, nvk, pk] = replies.remove(class.as_str()).expect("all kinds succeeded");
        bank.entries.insert(
            class.clone(),
            KnowledgeEntry {
                vk: vk.expect("vk"),
                nvk: nvk.expect("nvk"),
                pk: pk.expect("pk"),
                source: source.entry_source(),
            },
        );
    }
    bank.incomplete.sort();
    Ok(GenerationOutcome { bank, failures })
}

fn kind_index(kind: KnowledgeKind) -> usize {
    match kind {
        KnowledgeKind::Vk => 0,
        KnowledgeKind::Nvk => 1,
        KnowledgeKind::Pk => 2,
    }
}

fn complete_with_retry(
    source: &dyn DescriptionSource,
    prompt: &str,
    opts: &GenerateOptions,
) -> std::result::Result<String, SourceError> {
    let mut attempt = 0;
    loop {
        match source.complete(prompt) {
            Ok(text) if clean_response(&text).is_empty() => {
                return Err(SourceError::Fatal("empty response".into()))
            }
            Ok(text) => return Ok(text),
            Err(SourceError::Transient(msg)) if attempt < opts.retries => {
                let delay = opts.backoff.saturating_mul(1 << attempt.min(16));
                log::warn!(
                    "transient failure ({msg}); retry {} in {delay:?}",
                    attempt + 1
                );
                std::thread::sleep(delay);
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::bank::EntrySource;
    use crate::knowledge::source::FixtureStore;
    use std::sync::atomic::AtomicU32;

    fn full_store(classes: &[String], prompts: &PromptSet) -> FixtureStore {
        let mut store = FixtureStore::new("gpt-4");
        for c in classes {
            for kind in KnowledgeKind::ALL {
                store.insert(
                    &prompts.get(kind).render(c).unwrap(),
                    format!("{kind} of {c}"),
                );
            }
        }
        store
    }

    fn classes(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("class_{i}")).collect()
    }

    #[test]
    fn fixture_mode_counts() {
        let prompts = PromptSet::default();
        let cs = classes(10);
        let store = full_store(&cs, &prompts);
        let out = generate_bank(&cs, &prompts, &store, &GenerateOptions::default()).unwrap();
        assert!(out.is_complete());
        assert_eq!(out.bank.entries.len(), 10);
        assert_eq!(out.bank.description_count(), 30);
        assert_eq!(out.bank.model_id, "gpt-4");
        assert!(out
            .bank
            .entries
            .values()
            .all(|e| e.source == EntrySource::Fixture));
    }

    #[test]
    fn missing_fixture_names_class_and_kind() {
        let prompts = PromptSet::default();
        let cs = classes(3);
        let mut store = FixtureStore::new("gpt-4");
        for c in &cs {
            for kind in KnowledgeKind::ALL {
                if !(c == "class_1" && kind == KnowledgeKind::Nvk) {
                    store.insert(&prompts.get(kind).render(c).unwrap(), "text");
                }
            }
        }
        let out = generate_bank(&cs, &prompts, &store, &GenerateOptions::default()).unwrap();
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].class_name, "class_1");
        assert_eq!(out.failures[0].kind, KnowledgeKind::Nvk);
        assert!(out.failures[0].to_string().contains("NVK"));
        assert!(!out.has_service_failure());
        assert_eq!(out.bank.incomplete, vec!["class_1".to_string()]);
        assert_eq!(out.bank.entries.len(), 2);
    }

    #[test]
    fn rejects_empty_and_duplicate_lists() {
        let prompts = PromptSet::default();
        let store = FixtureStore::new("m");
        let opts = GenerateOptions::default();
        assert!(generate_bank(&[], &prompts, &store, &opts).is_err());
        let dup = vec!["a".to_string(), "a".to_string()];
        assert!(generate_bank(&dup, &prompts, &store, &opts).is_err());
    }

    struct Flaky {
        fail_first: u32,
        calls: AtomicU32,
    }

    impl DescriptionSource for Flaky {
        fn model_id(&self) -> &str {
            "flaky"
        }
        fn entry_source(&self) -> EntrySource {
            EntrySource::Llm
        }
        fn complete(&self, prompt: &str) -> std::result::Result<String, SourceError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                Err(SourceError::Transient("503".into()))
            } else {
                Ok(format!("  {}  ", &prompt[..10]))
            }
        }
    }

    #[test]
    fn transient_failures_are_retried_then_reported() {
        let prompts = PromptSet::default();
        let opts = GenerateOptions {
            concurrency: 1,
            backoff: Duration::from_millis(1),
            ..GenerateOptions::default()
        };
        let cs = classes(1);
        let ok = Flaky {
            fail_first: 2,
            calls: AtomicU32::new(0),
        };
        let out = generate_bank(&cs, &prompts, &ok, &opts).unwrap();
        assert!(out.is_complete());
        assert_eq!(out.bank.entries["class_0"].vk, "Describe o");

        let dead = Flaky {
            fail_first: u32::MAX,
            calls: AtomicU32::new(0),
        };
        let out = generate_bank(&cs, &prompts, &dead, &opts).unwrap();
        assert_eq!(out.failures.len(), 3);
        assert!(out.has_service_failure());
        // 1 attempt + 3 retries per kind.
        assert_eq!(dead.calls.load(Ordering::SeqCst), 12);
    }

    #[test]
    fn concurrent_generation_matches_sequential() {
        let prompts = PromptSet::default();
        let cs = classes(25);
        let store = full_store(&cs, &prompts);
        let seq = generate_bank(
            &cs,
            &prompts,
            &store,
            &GenerateOptions {
                concurrency: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let par = generate_bank(
            &cs,
            &prompts,
            &store,
            &GenerateOptions {
                concurrency: 8,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(seq.bank.to_json().unwrap(), par.bank.to_json().unwrap());
    }

    #[test]
    fn responses_truncated_to_limit() {
        assert_eq!(
            clean_response(&"x".repeat(600)).len(),
            MAX_DESCRIPTION_CHARS
        );
        assert_eq!(clean_response("  hi \n"), "hi");
    }
}
