//! Multi-level class knowledge: visual (VK), nonvisual (NVK) and panoramic
//! (PK) descriptions, how they are generated from an LLM or fixtures, how
//! banks are validated, and how they become text-side target embeddings.

mod bank;
mod generate;
mod prompt;
mod source;
mod validate;

pub use bank::{EntrySource, KnowledgeBank, KnowledgeEntry, KnowledgeKind, MAX_DESCRIPTION_CHARS};
pub use generate::{
    clean_response, generate_bank, GenerateOptions, GenerationFailure, GenerationOutcome,
};
pub use prompt::{GenPrompt, PromptSet, CLASS_PLACEHOLDER};
pub use source::{
    cache_key, CachedReply, CachedSource, DescriptionSource, FixtureStore, SourceError,
};
pub use validate::{validate_bank, DuplicateWarning, ValidationReport, Violation};

use crate::encoders::{SeqItem, TextEncoder, Vocabulary, UNK_ID};
use crate::error::Result;
use crate::numerics::Tensor2;

#[derive(Debug, Clone)]
pub struct BankEmbedding {
    /// Row `i` is the encoded description of `classes[i]`.
    pub matrix: Tensor2,
    /// Classes whose description is at least half `<unk>` tokens.
    pub unk_heavy: Vec<String>,
}

/// Encodes the `kind` description of every class, in class order.
pub fn embed_bank(
    bank: &KnowledgeBank,
    kind: KnowledgeKind,
    classes: &[String],
    encoder: &TextEncoder,
    vocab: &Vocabulary,
) -> Result<BankEmbedding> {
    let mut rows = Vec::with_capacity(classes.len());
    let mut unk_heavy = Vec::new();
    for class in classes {
        let text = bank.description(class, kind)?;
        let seq = encoder.tokenize(text, vocab);
        let unk = seq
            .items
            .iter()
            .filter(|i| matches!(i, SeqItem::Token(UNK_ID)))
            .count();
        if 2 * unk >= seq.len() {
            log::warn!(
                "{kind} description of {class:?} is {unk}/{} unknown tokens",
                seq.len()
            );
            unk_heavy.push(class.clone());
        }
        rows.push(encoder.encode(&seq)?);
    }
    Ok(BankEmbedding {
        matrix: Tensor2::from_rows(&rows)?,
        unk_heavy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::EncoderConfig;

    const AIRPLANE_NVK: &str = "Capability to fly carrying passengers or cargo long distances.";
    const FACE_PK: &str = "Area with eyes, nose, mouth; center of emotional expression.";

    #[test]
    fn example_replies_through_fixture_store() {
        let prompts = PromptSet::default();
        let mut store = FixtureStore::new("gpt-4");
        let nvk_prompt = prompts.nvk.render("airplane").unwrap();
        let pk_prompt = prompts.pk.render("face").unwrap();
        store.insert(&nvk_prompt, AIRPLANE_NVK);
        store.insert(&pk_prompt, FACE_PK);
        assert_eq!(store.complete(&nvk_prompt).unwrap(), AIRPLANE_NVK);
        assert_eq!(store.complete(&pk_prompt).unwrap(), FACE_PK);
    }

    #[test]
    fn embedding_rows_follow_class_order() {
        let mut bank = KnowledgeBank::new("d", "m");
        for (c, pk) in [
            ("a", "red round fruit"),
            ("b", "red round fruit"),
            ("c", "long yellow fruit"),
        ] {
            bank.entries.insert(
                c.into(),
                KnowledgeEntry {
                    vk: pk.into(),
                    nvk: pk.into(),
                    pk: pk.into(),
                    source: EntrySource::Manual,
                },
            );
        }
        let classes: Vec<String> = ["c", "a", "b"].iter().map(|s| s.to_string()).collect();
        let vocab = Vocabulary::build(bank.entries.values().map(|e| e.pk.as_str()), 64);
        let enc = TextEncoder::new(&EncoderConfig::default());
        let emb = embed_bank(&bank, KnowledgeKind::Pk, &classes, &enc, &vocab).unwrap();
        assert_eq!(emb.matrix.rows(), 3);
        assert_eq!(emb.matrix.row(1), emb.matrix.row(2));
        assert_ne!(emb.matrix.row(0), emb.matrix.row(1));
        assert!(emb.unk_heavy.is_empty());

        let tiny = Vocabulary::build(["fruit"], 8);
        let emb = embed_bank(&bank, KnowledgeKind::Pk, &classes, &enc, &tiny).unwrap();
        assert_eq!(emb.unk_heavy.len(), 3);

        let missing = vec!["zzz".to_string()];
        assert!(embed_bank(&bank, KnowledgeKind::Pk, &missing, &enc, &vocab).is_err());
    }
}
