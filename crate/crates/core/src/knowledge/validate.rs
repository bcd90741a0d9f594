use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::bank::{KnowledgeBank, KnowledgeKind, MAX_DESCRIPTION_CHARS};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    MissingClass(String),
    UnexpectedClass(String),
    Empty {
        class_name: String,
        kind: KnowledgeKind,
    },
    TooLong {
        class_name: String,
        kind: KnowledgeKind,
        chars: usize,
    },
    MarkedIncomplete(Vec<String>),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingClass(c) => write!(f, "missing class {c:?}"),
            Violation::UnexpectedClass(c) => write!(f, "class {c:?} not in the target list"),
            Violation::Empty { class_name, kind } => write!(f, "empty {kind} for {class_name:?}"),
            Violation::TooLong {
                class_name,
                kind,
                chars,
            } => write!(
                f,
                "{kind} for {class_name:?} has {chars} chars (max {MAX_DESCRIPTION_CHARS})"
            ),
            Violation::MarkedIncomplete(cs) => write!(f, "bank marked incomplete for {cs:?}"),
        }
    }
}

/// Identical description text shared by several classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DuplicateWarning {
    pub kind: KnowledgeKind,
    pub classes: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub duplicates: Vec<DuplicateWarning>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_bank(bank: &KnowledgeBank, classes: &[String]) -> ValidationReport {
    let mut report = ValidationReport::default();
    let wanted: BTreeSet<&str> = classes.iter().map(String::as_str).collect();
    for c in &wanted {
        if !bank.entries.contains_key(*c) {
            report
                .violations
                .push(Violation::MissingClass(c.to_string()));
        }
    }
    for c in bank.entries.keys() {
        if !wanted.contains(c.as_str()) {
            report
                .violations
                .push(Violation::UnexpectedClass(c.clone()));
        }
    }
    if !bank.incomplete.is_empty() {
        report
            .violations
            .push(Violation::MarkedIncomplete(bank.incomplete.clone()));
    }

    for kind in KnowledgeKind::ALL {
        let mut by_text: BTreeMap<&str, Vec<String>> = BTreeMap::new();
        for (class_name, entry) in &bank.entries {
            let text = entry.get(kind);
            let chars = text.chars().count();
            if text.trim().is_empty() {
                report.violations.push(Violation::Empty {
                    class_name: class_name.clone(),
                    kind,
                });
                continue;
            }
            if chars > MAX_DESCRIPTION_CHARS {
                report.violations.push(Violation::TooLong {
                    class_name: class_name.clone(),
                    kind,
                    chars,
                });
            }
            by_text.entry(text).or_default().push(class_name.clone());
        }
        report.duplicates.extend(
            by_text
                .into_values()
                .filter(|cs| cs.len() > 1)
                .map(|classes| DuplicateWarning { kind, classes }),
        );
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::bank::{EntrySource, KnowledgeEntry};

    fn bank(classes: &[&str]) -> KnowledgeBank {
        let mut b = KnowledgeBank::new("d", "m");
        for c in classes {
            b.entries.insert(
                c.to_string(),
                KnowledgeEntry {
                    vk: format!("{c} looks"),
                    nvk: format!("{c} does"),
                    pk: format!("{c} is"),
                    source: EntrySource::Manual,
                },
            );
        }
        b
    }

    fn names(cs: &[&str]) -> Vec<String> {
        cs.iter().map(|c| c.to_string()).collect()
    }

    #[test]
    fn complete_bank_is_clean() {
        let r = validate_bank(&bank(&["a", "b"]), &names(&["a", "b"]));
        assert!(r.is_valid());
        assert!(r.duplicates.is_empty());
    }

    #[test]
    fn missing_class_is_one_violation() {
        let r = validate_bank(&bank(&["a"]), &names(&["a", "b"]));
        assert_eq!(r.violations, vec![Violation::MissingClass("b".into())]);
    }

    #[test]
    fn shared_pk_text_warns() {
        let mut b = bank(&["a", "b"]);
        b.entries.get_mut("b").unwrap().pk = "a is".into();
        let r = validate_bank(&b, &names(&["a", "b"]));
        assert!(r.is_valid());
        assert_eq!(
            r.duplicates,
            vec![DuplicateWarning {
                kind: KnowledgeKind::Pk,
                classes: names(&["a", "b"])
            }]
        );
    }

    #[test]
    fn length_and_emptiness() {
        let mut b = bank(&["a"]);
        b.entries.get_mut("a").unwrap().vk = "x".repeat(513);
        b.entries.get_mut("a").unwrap().nvk = " ".into();
        let r = validate_bank(&b, &names(&["a"]));
        assert_eq!(r.violations.len(), 2);
    }
}
