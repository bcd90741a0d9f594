//! Prediction from raw image features and a checkpoint alone, the zero-shot
//! knowledge-fusion demonstrator, and fused-embedding export.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoders::{ImageEncoder, TextEncoder};
use crate::error::{Error, Result};
use crate::model::{
    encode_context_targets, targets_class_tokens, Checkpoint, CoKnowConfig, CoKnowModel, Variant,
};
use crate::numerics::{dot, l2_normalize_rows, norm, softmax_in_place, Tensor2, DEFAULT_EPS};

/// `β x0 + (1-β)/2 x1 + (1-β)/2 x2`, no renormalization.
pub fn fuse(x0: &[f64], x1: &[f64], x2: &[f64], beta: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("beta must be in [0, 1], got {beta}")));
    }
    if x1.len() != x0.len() || x2.len() != x0.len() {
        return Err(Error::dim(
            "fuse",
            (1, x0.len()),
            (1, x1.len().max(x2.len())),
        ));
    }
    let side = (1.0 - beta) / 2.0;
    Ok(x0
        .iter()
        .zip(x1)
        .zip(x2)
        .map(|((a, b), c)| beta * a + side * b + side * c)
        .collect())
}

/// Cosine similarity; zero when either side has (near) zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na <= DEFAULT_EPS || nb <= DEFAULT_EPS {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub top1: usize,
    pub top1_conf: f64,
}

impl Prediction {
    /// `softmax(sims / tau)`; ties for the top go to the lowest index.
    pub fn from_similarities(sims: &[f64], tau: f64) -> Result<Self> {
        if sims.is_empty() {
            return Err(Error::Input("no classes to score".into()));
        }
        if tau <= 0.0 || tau.is_nan() {
            return Err(Error::Config(format!("tau must be positive, got {tau}")));
        }
        let mut probs: Vec<f64> = sims.iter().map(|s| s / tau).collect();
        softmax_in_place(&mut probs);
        let mut top1 = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[top1] {
                top1 = i;
            }
        }
        Ok(Self {
            top1_conf: probs[top1],
            top1,
            probs,
        })
    }
}

/// Prediction JSON as written by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub class: String,
    pub confidence: f64,
    pub probs: Vec<f64>,
}

/// A checkpoint turned into a classifier. Class vectors are computed once
/// here; no knowledge bank is involved.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub classes: Vec<String>,
    pub config: CoKnowConfig,
    model: CoKnowModel,
    image_encoder: ImageEncoder,
    /// `T0` rows, or `[T0, T1, T2]` rows for the concatenated variant.
    class_vectors: Tensor2,
}

impl Predictor {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.validate()?;
        let text = TextEncoder::new(&ck.encoder);
        let vocab = ck.vocabulary()?;
        let class_tokens = targets_class_tokens(&ck.classes, &text, &vocab);
        let t0 = encode_context_targets(&ck.state.model.prompt, &text, &class_tokens)?.t0;
        let class_vectors = match &ck.branch_targets {
            Some([t1, t2]) => Tensor2::hstack(&[&t0, t1, t2])?,
            None => t0,
        };
        Ok(Self {
            classes: ck.classes.clone(),
            config: ck.config.clone(),
            model: ck.state.model.clone(),
            image_encoder: ImageEncoder::new(&ck.encoder),
            class_vectors,
        })
    }

    pub fn k(&self) -> usize {
        self.classes.len()
    }

    pub fn d_in(&self) -> usize {
        self.image_encoder.d_in()
    }

    pub fn d_joint(&self) -> usize {
        self.image_encoder.d_joint()
    }

    pub fn class_vectors(&self) -> &Tensor2 {
        &self.class_vectors
    }

    /// Frozen image embeddings for raw feature rows.
    pub fn encode_images(&self, raw: &Tensor2) -> Result<Tensor2> {
        if raw.cols() != self.d_in() {
            return Err(Error::Validation(format!(
                "feature dimension {} does not match checkpoint input dimension {}",
                raw.cols(),
                self.d_in()
            )));
        }
        Ok(self.image_encoder.encode_batch(raw)?.out)
    }

    /// The vector scored against the class vectors, one row per image
    /// embedding: `x` for the fused variants, `[I0, I1, I2]` for CoKnowLE.
    pub fn fused(&self, i0: &Tensor2) -> Result<Tensor2> {
        if i0.cols() != self.d_joint() {
            return Err(Error::Validation(format!(
                "embedding dimension {} does not match checkpoint dimension {}",
                i0.cols(),
                self.d_joint()
            )));
        }
        let x1 = self.model.knowledge_mapper.forward(i0)?.out.out;
        let x2 = self.model.template_mapper.forward(i0)?.out.out;
        let x0 = match (&self.model.image_mapper, self.config.variant) {
            (Some(m), Variant::CoKnowI) => m.forward(i0)?.out.out,
            _ => i0.clone(),
        };
        if self.config.variant == Variant::CoKnowLE {
            return Tensor2::hstack(&[&x0, &x1, &x2]);
        }
        let mut rows = Vec::with_capacity(i0.rows());
        for r in 0..i0.rows() {
            rows.push(fuse(x0.row(r), x1.row(r), x2.row(r), self.config.beta)?);
        }
        Tensor2::from_rows(&rows)
    }

    pub fn predict_embeddings(&self, i0: &Tensor2) -> Result<Vec<Prediction>> {
        let x = self.fused(i0)?;
        x.iter_rows()
            .map(|row| {
                let sims: Vec<f64> = self
                    .class_vectors
                    .iter_rows()
                    .map(|w| cosine(w, row))
                    .collect();
                Prediction::from_similarities(&sims, self.config.tau)
            })
            .collect()
    }

    pub fn predict_raw(&self, raw: &Tensor2) -> Result<Vec<Prediction>> {
        self.predict_embeddings(&self.encode_images(raw)?)
    }

    pub fn record(&self, p: &Prediction) -> PredictionRecord {
        PredictionRecord {
            class: self.classes[p.top1].clone(),
            confidence: p.top1_conf,
            probs: p.probs.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnowledgeStrategy {
    /// The true class's knowledge. Not deployable; reproduces the figures.
    Oracle,
    /// Mean of every class's knowledge embedding.
    Avg,
    None,
}

impl fmt::Display for KnowledgeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KnowledgeStrategy::Oracle => "oracle",
            KnowledgeStrategy::Avg => "avg",
            KnowledgeStrategy::None => "none",
        })
    }
}

impl FromStr for KnowledgeStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(KnowledgeStrategy::Oracle),
            "avg" | "average" => Ok(KnowledgeStrategy::Avg),
            "none" => Ok(KnowledgeStrategy::None),
            other => Err(Error::Input(format!(
                "unknown strategy {other:?} (oracle|avg|none)"
            ))),
        }
    }
}

/// Knowledge vector chosen by `strategy`; `label` is only read for the oracle.
pub fn select_knowledge(
    strategy: KnowledgeStrategy,
    knowledge: &Tensor2,
    label: usize,
) -> Result<Vec<f64>> {
    match strategy {
        KnowledgeStrategy::Oracle => {
            if label >= knowledge.rows() {
                return Err(Error::Index {
                    what: "classes",
                    index: label,
                    len: knowledge.rows(),
                });
            }
            Ok(knowledge.row(label).to_vec())
        }
        KnowledgeStrategy::Avg => {
            let mut mean = knowledge.sum_rows().into_data();
            let n = knowledge.rows().max(1) as f64;
            mean.iter_mut().for_each(|v| *v /= n);
            Ok(mean)
        }
        KnowledgeStrategy::None => Ok(vec![0.0; knowledge.cols()]),
    }
}

/// Zero-shot scoring of `normalize(image + knowledge)` against class text
/// embeddings.
pub fn zeroshot_knowledge_fusion(
    image: &[f64],
    knowledge: &[f64],
    class_embs: &Tensor2,
    tau: f64,
) -> Result<Prediction> {
    if image.len() != class_embs.cols() || knowledge.len() != image.len() {
        return Err(Error::dim(
            "zeroshot_fusion",
            (1, image.len()),
            class_embs.shape(),
        ));
    }
    let sum: Vec<f64> = image.iter().zip(knowledge).map(|(a, b)| a + b).collect();
    let fused = l2_normalize_rows(&Tensor2::row_vector(&sum), DEFAULT_EPS)
        .out
        .into_data();
    let sims: Vec<f64> = class_embs.iter_rows().map(|w| cosine(w, &fused)).collect();
    Prediction::from_similarities(&sims, tau)
}

/// Writes `label,f0..f{d-1}` then one row per vector. Floats use Rust's
/// shortest round-trip formatting.
pub fn write_vectors_csv(mut w: impl Write, labels: &[usize], vectors: &Tensor2) -> Result<()> {
    if labels.len() != vectors.rows() {
        return Err(Error::dim("export", (labels.len(), 1), vectors.shape()));
    }
    let header: Vec<String> = std::iter::once("label".to_string())
        .chain((0..vectors.cols()).map(|i| format!("f{i}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (label, row) in labels.iter().zip(vectors.iter_rows()) {
        write!(w, "{label}")?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Fused vectors of `raw` rows under `predictor`, exported as CSV.
pub fn export_embeddings(
    predictor: &Predictor,
    raw: &Tensor2,
    labels: &[usize],
    path: &Path,
) -> Result<usize> {
    let fused = predictor.fused(&predictor.encode_images(raw)?)?;
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_vectors_csv(file, labels, &fused)?;
    Ok(fused.rows())
}

/// Parses the CSV written by [`write_vectors_csv`].
pub fn read_vectors_csv(text: &str) -> Result<(Vec<usize>, Tensor2)> {
    let bad = |detail: String| Error::Format {
        what: "embedding csv",
        detail,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let d = header
        .split(',')
        .count()
        .checked_sub(1)
        .filter(|_| header.starts_with("label"))
        .ok_or_else(|| bad("missing label header".into()))?;
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let mut fields = line.split(',');
        let label = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| bad(format!("row {}: bad label", n + 1)))?;
        let row: Vec<f64> = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(format!("row {}: {e}", n + 1)))?;
        if row.len() != d {
            return Err(bad(format!(
                "row {}: {} values, expected {d}",
                n + 1,
                row.len()
            )));
        }
        labels.push(label);
        data.extend(row);
    }
    Ok((labels.clone(), Tensor2::from_vec(labels.len(), d, data)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fuse_examples() {
        assert_eq!(
            fuse(&[1.0, 0.0], &[0.0, 1.0], &[0.0, 1.0], 0.6).unwrap(),
            vec![0.6, 0.4]
        );
        assert_eq!(
            fuse(&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0], 1.0).unwrap(),
            vec![1.0, 2.0]
        );
        assert_eq!(
            fuse(&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0], 0.0).unwrap(),
            vec![4.0, 5.0]
        );
        assert!(fuse(&[1.0], &[1.0], &[1.0], 1.5).is_err());
    }

    #[test]
    fn sharp_temperature_matches_closed_form() {
        let p = Prediction::from_similarities(&[1.0, 0.0, 0.0], 0.01).unwrap();
        // 50-digit reference: p1 = 0.99999...99992559848, p2 = p3 = 3.72007597602083596e-44.
        assert_eq!(p.probs[0], 1.0);
        for q in &p.probs[1..] {
            assert!(
                (q - 3.720_075_976_020_836e-44).abs() / 3.72e-44 < 1e-14,
                "{q:e}"
            );
        }
        assert_eq!(p.top1, 0);
    }

    #[test]
    fn ties_go_to_the_lowest_index() {
        let p = Prediction::from_similarities(&[0.2, 0.5, 0.5], 1.0).unwrap();
        assert_eq!(p.top1, 1);
        let u = Prediction::from_similarities(&[0.3; 4], 0.01).unwrap();
        assert_eq!(u.top1, 0);
        assert!(u.probs.iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn large_temperature_tends_to_uniform() {
        let p = Prediction::from_similarities(&[1.0, -1.0, 0.3], 1e12).unwrap();
        assert!(p.probs.iter().all(|&q| (q - 1.0 / 3.0).abs() < 1e-11));
    }

    #[test]
    fn strategies() {
        let k = Tensor2::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(
            select_knowledge(KnowledgeStrategy::Oracle, &k, 1).unwrap(),
            vec![0.0, 1.0]
        );
        assert_eq!(
            select_knowledge(KnowledgeStrategy::Avg, &k, 1).unwrap(),
            vec![0.5, 0.5]
        );
        assert_eq!(
            select_knowledge(KnowledgeStrategy::None, &k, 1).unwrap(),
            vec![0.0, 0.0]
        );
        assert!(select_knowledge(KnowledgeStrategy::Oracle, &k, 2).is_err());
        for s in ["oracle", "avg", "none"] {
            assert_eq!(s.parse::<KnowledgeStrategy>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let v = Tensor2::from_rows(&[vec![0.1 + 0.2, -1e-300], vec![std::f64::consts::PI, 5e-324]])
            .unwrap();
        let mut buf = Vec::new();
        write_vectors_csv(&mut buf, &[3, 0], &v).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("label,f0,f1\n"));
        let (labels, back) = read_vectors_csv(&text).unwrap();
        assert_eq!(labels, vec![3, 0]);
        assert_eq!(back, v);
    }
}
