use crate::encoders::{SeqItem, TextEncoder, TextForward, TokenSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::knowledge::{embed_bank, KnowledgeBank, KnowledgeKind};
use crate::numerics::Tensor2;
use crate::prompting::{assemble_soft_sequence, HandcraftedTemplate, SoftPrompt};

/// Frozen text-side targets, computed once before training.
#[derive(Debug, Clone, PartialEq)]
pub struct TextTargets {
    pub classes: Vec<String>,
    /// Token ids of every class name (multi-word names keep all tokens).
    pub class_tokens: Vec<Vec<usize>>,
    /// Knowledge embeddings, one row per class.
    pub t1: Tensor2,
    /// Hand-crafted template embeddings, one row per class.
    pub t2: Tensor2,
}

impl TextTargets {
    pub fn k(&self) -> usize {
        self.classes.len()
    }
}

pub fn class_token_ids(class: &str, encoder: &TextEncoder, vocab: &Vocabulary) -> Vec<usize> {
    encoder
        .tokenize(class, vocab)
        .items
        .into_iter()
        .filter_map(|i| match i {
            SeqItem::Token(t) => Some(t),
            SeqItem::Raw(_) => None,
        })
        .collect()
}

pub fn compute_targets(
    classes: &[String],
    bank: &KnowledgeBank,
    kind: KnowledgeKind,
    template: &HandcraftedTemplate,
    encoder: &TextEncoder,
    vocab: &Vocabulary,
) -> Result<TextTargets> {
    if classes.is_empty() {
        return Err(Error::Input("no classes".into()));
    }
    let t1 = embed_bank(bank, kind, classes, encoder, vocab)?.matrix;
    let rows = template
        .expand(classes)
        .iter()
        .map(|s| encoder.encode_text(s, vocab))
        .collect::<Result<Vec<_>>>()?;
    let t2 = Tensor2::from_rows(&rows)?;
    let class_tokens = classes
        .iter()
        .map(|c| class_token_ids(c, encoder, vocab))
        .collect();
    Ok(TextTargets {
        classes: classes.to_vec(),
        class_tokens,
        t1,
        t2,
    })
}

/// `T0` plus what is needed to push its gradient back to the context vectors.
#[derive(Debug, Clone)]
pub struct ContextForward {
    pub t0: Tensor2,
    seqs: Vec<TokenSequence>,
    fwds: Vec<TextForward>,
}

pub fn encode_context_targets(
    prompt: &SoftPrompt,
    encoder: &TextEncoder,
    class_tokens: &[Vec<usize>],
) -> Result<ContextForward> {
    let mut seqs = Vec::with_capacity(class_tokens.len());
    let mut fwds = Vec::with_capacity(class_tokens.len());
    let mut rows = Vec::with_capacity(class_tokens.len());
    for tokens in class_tokens {
        let seq = assemble_soft_sequence(prompt, tokens, encoder.config.max_len)?;
        let fwd = encoder.forward(&seq)?;
        rows.push(fwd.output.clone());
        seqs.push(seq);
        fwds.push(fwd);
    }
    Ok(ContextForward {
        t0: Tensor2::from_rows(&rows)?,
        seqs,
        fwds,
    })
}

impl ContextForward {
    /// Accumulates `dL/dT0` (k x d_joint) into `context_grad` (M x d_model).
    /// Every class shares the same context rows, so contributions add up.
    pub fn backward(
        &self,
        encoder: &TextEncoder,
        d_t0: &Tensor2,
        context_grad: &mut Tensor2,
    ) -> Result<()> {
        if d_t0.rows() != self.seqs.len() {
            return Err(Error::dim(
                "context_backward",
                d_t0.shape(),
                self.t0.shape(),
            ));
        }
        for (c, (seq, fwd)) in self.seqs.iter().zip(&self.fwds).enumerate() {
            let grads = encoder.backward(seq, fwd, d_t0.row(c))?;
            for (row, g) in grads.iter().enumerate() {
                for (acc, v) in context_grad.row_mut(row).iter_mut().zip(g) {
                    *acc += v;
                }
            }
        }
        Ok(())
    }
}

/// Class-name token ids for every class, in order.
pub fn targets_class_tokens(
    classes: &[String],
    encoder: &TextEncoder,
    vocab: &Vocabulary,
) -> Vec<Vec<usize>> {
    classes
        .iter()
        .map(|c| class_token_ids(c, encoder, vocab))
        .collect()
}
