use serde::{Deserialize, Serialize};

use super::protocol::Experiment;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::inference::{
    cosine, select_knowledge, zeroshot_knowledge_fusion, KnowledgeStrategy, Prediction,
};
use crate::knowledge::{embed_bank, KnowledgeKind};
use crate::numerics::Tensor2;
use crate::rng::{derive_seed, SeededRng};

/// A test image that plain zero-shot gets wrong and oracle knowledge
/// fusion gets right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankFlip {
    /// Index into the test split.
    pub item: usize,
    pub label: usize,
    pub plain: Prediction,
    pub fused: Prediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotReport {
    pub strategy: KnowledgeStrategy,
    pub knowledge_kind: KnowledgeKind,
    pub n: usize,
    pub top1_plain: f64,
    pub top1_fused: f64,
    pub rank_flip: Option<RankFlip>,
}

impl ZeroShotReport {
    pub fn summary(&self) -> String {
        let mut s = format!(
            "zero-shot {} fusion ({}): plain {:.2}% -> fused {:.2}% over {} images",
            self.strategy,
            self.knowledge_kind,
            100.0 * self.top1_plain,
            100.0 * self.top1_fused,
            self.n
        );
        if let Some(f) = &self.rank_flip {
            s.push_str(&format!(
                "\nrank flip on item {} (class {}): plain says class {} at {:.4}, oracle fusion says class {} at {:.4}",
                f.item, f.label, f.plain.top1, f.plain.top1_conf, f.fused.top1, f.fused.top1_conf
            ));
        }
        s
    }
}

/// Frozen pieces of the zero-shot setting: test image embeddings, class
/// text embeddings (hand-crafted template) and knowledge embeddings.
pub struct ZeroShotWorld {
    pub images: Tensor2,
    pub labels: Vec<usize>,
    pub class_embs: Tensor2,
    pub knowledge: Tensor2,
    pub tau: f64,
}

impl ZeroShotWorld {
    pub fn new(exp: &Experiment, cfg: &RunConfig) -> Result<Self> {
        let enc = exp.encoders(cfg)?;
        let vocab = exp.vocabulary(cfg);
        let targets = exp.targets(cfg, &enc, &vocab)?;
        let knowledge = embed_bank(
            &exp.bank,
            cfg.model.knowledge_kind,
            &exp.dataset.classes,
            &enc.text,
            &vocab,
        )?
        .matrix;
        Ok(Self {
            images: exp.dataset.embed(&exp.dataset.test, &enc.image)?,
            labels: exp.dataset.test.labels.clone(),
            class_embs: targets.t2,
            knowledge,
            tau: cfg.model.tau,
        })
    }

    pub fn plain(&self, item: usize) -> Result<Prediction> {
        let sims: Vec<f64> = self
            .class_embs
            .iter_rows()
            .map(|t| cosine(t, self.images.row(item)))
            .collect();
        Prediction::from_similarities(&sims, self.tau)
    }

    pub fn fused(&self, item: usize, strategy: KnowledgeStrategy) -> Result<Prediction> {
        let k = select_knowledge(strategy, &self.knowledge, self.labels[item])?;
        zeroshot_knowledge_fusion(self.images.row(item), &k, &self.class_embs, self.tau)
    }

    /// Visits test items in an order shuffled by `seed` and returns the
    /// first rank flip, preferring confident ones (plain >= 0.5 on the wrong
    /// class, fused >= 0.9 on the right one).
    pub fn find_rank_flip(&self, seed: u64) -> Result<Option<RankFlip>> {
        let mut order: Vec<usize> = (0..self.labels.len()).collect();
        SeededRng::new(derive_seed(seed, "rank-flip")).shuffle(&mut order);
        let mut fallback = None;
        for &item in &order {
            let label = self.labels[item];
            let plain = self.plain(item)?;
            if plain.top1 == label {
                continue;
            }
            let fused = self.fused(item, KnowledgeStrategy::Oracle)?;
            if fused.top1 != label {
                continue;
            }
            let confident = plain.top1_conf >= 0.5 && fused.top1_conf >= 0.9;
            let flip = RankFlip {
                item,
                label,
                plain,
                fused,
            };
            if confident {
                return Ok(Some(flip));
            }
            fallback.get_or_insert(flip);
        }
        Ok(fallback)
    }
}

/// Zero-shot accuracy with and without `strategy` knowledge over the test
/// split, plus the frozen rank-flip example.
pub fn zeroshot_demo(
    exp: &Experiment,
    cfg: &RunConfig,
    strategy: KnowledgeStrategy,
) -> Result<ZeroShotReport> {
    let world = ZeroShotWorld::new(exp, cfg)?;
    let n = world.labels.len();
    if n == 0 {
        return Err(Error::Protocol("zero-shot demo needs test images".into()));
    }
    let (mut plain, mut fused) = (0usize, 0usize);
    for i in 0..n {
        plain += usize::from(world.plain(i)?.top1 == world.labels[i]);
        fused += usize::from(world.fused(i, strategy)?.top1 == world.labels[i]);
    }
    Ok(ZeroShotReport {
        strategy,
        knowledge_kind: cfg.model.knowledge_kind,
        n,
        top1_plain: plain as f64 / n as f64,
        top1_fused: fused as f64 / n as f64,
        rank_flip: world.find_rank_flip(cfg.data.seed)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{l2_normalize_rows, DEFAULT_EPS};

    #[test]
    fn own_text_as_knowledge_raises_its_score() {
        let mut rng = SeededRng::new(11);
        for _ in 0..1000 {
            let v = l2_normalize_rows(&Tensor2::randn(2, 16, 1.0, &mut rng), DEFAULT_EPS).out;
            let (x, t) = (v.row(0), v.row(1));
            let sum: Vec<f64> = x.iter().zip(t).map(|(a, b)| a + b).collect();
            assert!(cosine(&sum, t) > cosine(x, t));
        }
    }

    #[test]
    fn no_knowledge_is_plain_zero_shot() {
        let cfg = RunConfig::default();
        let exp = Experiment::synthetic(&cfg).unwrap();
        let world = ZeroShotWorld::new(&exp, &cfg).unwrap();
        for i in 0..10 {
            let (a, b) = (
                world.plain(i).unwrap(),
                world.fused(i, KnowledgeStrategy::None).unwrap(),
            );
            assert_eq!(a.top1, b.top1);
            for (x, y) in a.probs.iter().zip(&b.probs) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn frozen_rank_flip_on_default_benchmark() {
        let cfg = RunConfig::default();
        let exp = Experiment::synthetic(&cfg).unwrap();
        let r = zeroshot_demo(&exp, &cfg, KnowledgeStrategy::Oracle).unwrap();
        assert_eq!((r.n, r.top1_plain, r.top1_fused), (160, 0.5375, 0.7125));
        let f = r.rank_flip.unwrap();
        assert_eq!((f.item, f.label, f.plain.top1, f.fused.top1), (31, 1, 6, 1));
        for (got, want) in [
            (f.plain.top1_conf, 0.8298241376189602),
            (f.plain.probs[1], 0.07139643987670011),
            (f.fused.top1_conf, 0.9597631440972936),
        ] {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }
}
