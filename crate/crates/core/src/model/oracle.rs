use super::forward::{forward_train, loss_and_backward};
use super::targets::compute_targets;
use super::{CoKnowConfig, CoKnowModel, Variant};
use crate::encoders::{EncoderConfig, TextEncoder, Vocabulary};
use crate::error::Result;
use crate::knowledge::{EntrySource, KnowledgeBank, KnowledgeEntry, KnowledgeKind};
use crate::numerics::{finite_diff_check, GradCheckReport, Param, Tensor2};
use crate::prompting::{ClassPosition, HandcraftedTemplate};
use crate::rng::{derive_seed, SeededRng};

/// One small end-to-end configuration for the full-loss gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckCase {
    pub d: usize,
    pub k: usize,
    pub beta: f64,
    pub position: ClassPosition,
    pub variant: Variant,
    pub context_len: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for GradCheckCase {
    fn default() -> Self {
        Self {
            d: 8,
            k: 2,
            beta: 0.6,
            position: ClassPosition::End,
            variant: Variant::Standard,
            context_len: 2,
            batch: 2,
            seed: 0,
        }
    }
}

impl GradCheckCase {
    /// The 20 configurations cycling through d, k, β and class position.
    pub fn sweep() -> Vec<Self> {
        let mut out = Vec::new();
        let mut i = 0u64;
        'outer: for &position in &[ClassPosition::End, ClassPosition::Middle] {
            for &d in &[8, 16] {
                for &k in &[2, 5] {
                    for &beta in &[0.0, 0.6, 1.0] {
                        out.push(Self {
                            d,
                            k,
                            beta,
                            position,
                            context_len: 2 + (i as usize % 3),
                            batch: 2 + (i as usize % 2),
                            seed: i,
                            ..Self::default()
                        });
                        i += 1;
                        if out.len() == 20 {
                            break 'outer;
                        }
                    }
                }
            }
        }
        out
    }
}

/// Builds a random model for `case`, takes analytic gradients of the summed
/// loss, and compares every trainable scalar against central differences.
/// Context values are drawn at unit scale so the check is not dominated by
/// the near-zero default initialization.
pub fn full_gradient_check(case: &GradCheckCase, h: f64, tol: f64) -> Result<GradCheckReport> {
    let enc_cfg = EncoderConfig {
        d_model: case.d,
        d_joint: case.d,
        d_in: case.d,
        max_len: case.context_len + 4,
        vocab_size: 64,
        pos_scale: 1.0,
        seed: case.seed,
    };
    let encoder = TextEncoder::new(&enc_cfg);
    let classes: Vec<String> = (0..case.k).map(|i| format!("class_{i}")).collect();
    let mut bank = KnowledgeBank::new("gradcheck", "fixture");
    for (i, c) in classes.iter().enumerate() {
        let text = format!("{c} shape tone mark_{i}");
        bank.entries.insert(
            c.clone(),
            KnowledgeEntry {
                vk: text.clone(),
                nvk: text.clone(),
                pk: text,
                source: EntrySource::Manual,
            },
        );
    }
    let mut texts: Vec<String> = bank.entries.values().map(|e| e.pk.clone()).collect();
    texts.push("a photo of".into());
    let vocab = Vocabulary::build(texts.iter().map(String::as_str), enc_cfg.vocab_size);
    let targets = compute_targets(
        &classes,
        &bank,
        KnowledgeKind::Pk,
        &HandcraftedTemplate::default(),
        &encoder,
        &vocab,
    )?;

    let cfg = CoKnowConfig {
        beta: case.beta,
        lambda_scale: 5.0,
        context_len: case.context_len,
        class_position: case.position,
        variant: case.variant,
        ..CoKnowConfig::default()
    };
    let mut model = CoKnowModel::new(&cfg, case.d, case.d, case.seed)?;
    let mut rng = SeededRng::new(derive_seed(case.seed, "gradcheck"));
    for p in model.params_mut() {
        p.value = Tensor2::randn(p.value.rows(), p.value.cols(), 0.5, &mut rng);
    }
    let i0 = crate::numerics::l2_normalize_rows(
        &Tensor2::randn(case.batch, case.d, 1.0, &mut rng),
        crate::numerics::DEFAULT_EPS,
    )
    .out;
    let labels: Vec<usize> = (0..case.batch).map(|i| i % case.k).collect();

    model.zero_grads();
    let out = forward_train(&model, &encoder, &targets, &i0, &cfg)?;
    loss_and_backward(&mut model, &encoder, &targets, &out, &labels, &cfg)?;

    let mut params: Vec<Param> = model.params().into_iter().cloned().collect();
    let mut probe = model.clone();
    let report = finite_diff_check(
        |ps| {
            for (dst, src) in probe.params_mut().into_iter().zip(ps) {
                dst.value.clone_from(&src.value);
            }
            let out = forward_train(&probe, &encoder, &targets, &i0, &cfg).expect("shapes fixed");
            probe.zero_grads();
            loss_and_backward(&mut probe, &encoder, &targets, &out, &labels, &cfg)
                .expect("labels valid")
                .total
        },
        &mut params,
        h,
        tol,
    );
    Ok(report)
}
