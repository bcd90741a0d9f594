use super::vocab::{words, Vocabulary, PAD_ID};
use super::EncoderConfig;
use crate::error::{Error, Result};
use crate::numerics::{dot, Tensor2};
use crate::rng::{derive_seed, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub enum SeqItem {
    Token(usize),
    /// A free vector in token-embedding space (e.g. a learnable context vector).
    Raw(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub items: Vec<SeqItem>,
    pub truncated: bool,
}

impl TokenSequence {
    pub fn new(items: Vec<SeqItem>, max_len: usize) -> Result<Self> {
        if items.len() > max_len {
            return Err(Error::Input(format!(
                "sequence of length {} exceeds max length {max_len}",
                items.len()
            )));
        }
        Ok(Self {
            items,
            truncated: false,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn raw_count(&self) -> usize {
        self.items
            .iter()
            .filter(|i| matches!(i, SeqItem::Raw(_)))
            .count()
    }
}

/// Lowercases, splits on whitespace and punctuation, maps unknown words to
/// `<unk>`. Empty text becomes a single `<pad>`; sequences longer than
/// `max_len` are truncated (with a warning and the `truncated` flag set).
pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> TokenSequence {
    let mut items: Vec<SeqItem> = words(text)
        .iter()
        .map(|w| SeqItem::Token(vocab.id(w)))
        .collect();
    if items.is_empty() {
        items.push(SeqItem::Token(PAD_ID));
    }
    let truncated = items.len() > max_len;
    if truncated {
        log::warn!("text of {} tokens truncated to {max_len}", items.len());
        items.truncate(max_len);
    }
    TokenSequence { items, truncated }
}

/// Frozen toy text tower: embedding lookup (or raw vector), plus sinusoidal
/// position, token-wise `tanh`, mean pool, `tanh(h A)`, `B`, L2 normalization.
///
/// The token-wise squashing is what makes the output depend on item order;
/// without it, additive positions would cancel under mean pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder {
    pub config: EncoderConfig,
    pub embed_table: Tensor2,
    pub pos_encoding: Tensor2,
    pub proj_a: Tensor2,
    pub proj_b: Tensor2,
}

/// Intermediates of one forward pass needed by [`TextEncoder::backward`].
#[derive(Debug, Clone)]
pub struct TextForward {
    pub output: Vec<f64>,
    pub degenerate: bool,
    token_acts: Vec<Vec<f64>>,
    hidden: Vec<f64>,
    norm: f64,
}

impl TextEncoder {
    pub fn new(config: &EncoderConfig) -> Self {
        let mut rng = SeededRng::new(derive_seed(config.seed, "text-encoder"));
        let d = config.d_model;
        let embed_table = Tensor2::randn(config.vocab_size, d, 1.0, &mut rng);
        let proj_a = Tensor2::randn(d, d, 1.0 / (d as f64).sqrt(), &mut rng);
        let proj_b = Tensor2::randn(d, config.d_joint, 1.0 / (d as f64).sqrt(), &mut rng);
        let pos_encoding = sinusoidal(config.max_len, d).scale(config.pos_scale);
        Self {
            config: config.clone(),
            embed_table,
            pos_encoding,
            proj_a,
            proj_b,
        }
    }

    /// Same encoder with the positional table zeroed.
    pub fn without_positions(&self) -> Self {
        let mut out = self.clone();
        out.pos_encoding.fill(0.0);
        out
    }

    pub fn tokenize(&self, text: &str, vocab: &Vocabulary) -> TokenSequence {
        tokenize(text, vocab, self.config.max_len)
    }

    pub fn encode(&self, seq: &TokenSequence) -> Result<Vec<f64>> {
        Ok(self.forward(seq)?.output)
    }

    pub fn encode_text(&self, text: &str, vocab: &Vocabulary) -> Result<Vec<f64>> {
        self.encode(&self.tokenize(text, vocab))
    }

    pub fn forward(&self, seq: &TokenSequence) -> Result<TextForward> {
        let d = self.config.d_model;
        if seq.is_empty() {
            return Err(Error::Input("cannot encode an empty sequence".into()));
        }
        if seq.len() > self.config.max_len {
            return Err(Error::Input(format!(
                "sequence of length {} exceeds max length {}",
                seq.len(),
                self.config.max_len
            )));
        }
        let mut pooled = vec![0.0; d];
        let mut token_acts = Vec::with_capacity(seq.len());
        for (pos, item) in seq.items.iter().enumerate() {
            let v: &[f64] = match item {
                SeqItem::Token(id) => {
                    if *id >= self.embed_table.rows() {
                        return Err(Error::Index {
                            what: "vocabulary rows",
                            index: *id,
                            len: self.embed_table.rows(),
                        });
                    }
                    self.embed_table.row(*id)
                }
                SeqItem::Raw(v) => {
                    if v.len() != d {
                        return Err(Error::dim("encode_text raw item", (1, v.len()), (1, d)));
                    }
                    v
                }
            };
            let act: Vec<f64> = v
                .iter()
                .zip(self.pos_encoding.row(pos))
                .map(|(x, pe)| (x + pe).tanh())
                .collect();
            for (p, a) in pooled.iter_mut().zip(&act) {
                *p += a;
            }
            token_acts.push(act);
        }
        let inv = 1.0 / seq.len() as f64;
        pooled.iter_mut().for_each(|p| *p *= inv);

        let hidden: Vec<f64> = vec_mat(&pooled, &self.proj_a)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let mut output = vec_mat(&hidden, &self.proj_b);
        let norm = dot(&output, &output).sqrt();
        let degenerate = norm < crate::numerics::DEFAULT_EPS;
        if !degenerate {
            output.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(TextForward {
            output,
            degenerate,
            token_acts,
            hidden,
            norm,
        })
    }

    /// Gradients of `upstream · output` w.r.t. each raw item of `seq`, in
    /// order. Token items receive nothing (the embedding table is frozen).
    pub fn backward(
        &self,
        seq: &TokenSequence,
        fwd: &TextForward,
        upstream: &[f64],
    ) -> Result<Vec<Vec<f64>>> {
        if upstream.len() != self.config.d_joint {
            return Err(Error::dim(
                "encode_text_backward",
                (1, upstream.len()),
                (1, self.config.d_joint),
            ));
        }
        let g_out: Vec<f64> = if fwd.degenerate {
            upstream.to_vec()
        } else {
            let proj = dot(&fwd.output, upstream);
            upstream
                .iter()
                .zip(&fwd.output)
                .map(|(g, y)| (g - y * proj) / fwd.norm)
                .collect()
        };
        let g_hidden: Vec<f64> = mat_vec(&self.proj_b, &g_out)
            .into_iter()
            .zip(&fwd.hidden)
            .map(|(g, a)| g * (1.0 - a * a))
            .collect();
        let inv = 1.0 / fwd.token_acts.len() as f64;
        let g_pooled: Vec<f64> = mat_vec(&self.proj_a, &g_hidden)
            .into_iter()
            .map(|g| g * inv)
            .collect();
        Ok(seq
            .items
            .iter()
            .zip(&fwd.token_acts)
            .filter(|(item, _)| matches!(item, SeqItem::Raw(_)))
            .map(|(_, act)| {
                g_pooled
                    .iter()
                    .zip(act)
                    .map(|(g, a)| g * (1.0 - a * a))
                    .collect()
            })
            .collect())
    }
}

/// `PE(p, 2i) = sin(p / 10000^(2i/d))`, `PE(p, 2i+1) = cos(p / 10000^(2i/d))`.
pub fn sinusoidal(max_len: usize, d: usize) -> Tensor2 {
    let mut pe = Tensor2::zeros(max_len, d);
    for pos in 0..max_len {
        for i in 0..d {
            let pair = (i / 2) as f64 * 2.0;
            let angle = pos as f64 / 10000f64.powf(pair / d as f64);
            pe.set(pos, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    pe
}

/// Row vector times matrix.
pub(crate) fn vec_mat(v: &[f64], m: &Tensor2) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for (r, &x) in v.iter().enumerate() {
        for (o, w) in out.iter_mut().zip(m.row(r)) {
            *o += x * w;
        }
    }
    out
}

/// Matrix times column vector (`m · v`), used to back-propagate through `vec_mat`.
pub(crate) fn mat_vec(m: &Tensor2, v: &[f64]) -> Vec<f64> {
    m.iter_rows().map(|row| dot(row, v)).collect()
}
