use super::mapper::MapperForward;
use super::targets::{encode_context_targets, ContextForward, TextTargets};
use super::{CoKnowConfig, CoKnowModel, Variant};
use crate::encoders::TextEncoder;
use crate::error::{Error, Result};
use crate::numerics::{
    cross_entropy, l2_normalize_rows, l2_normalize_rows_backward, matmul, matmul_nt, matmul_tn,
    Normalized, Tensor2, DEFAULT_EPS,
};

/// `(β, (1-β)/2, (1-β)/2)`; sums to one for every β.
pub fn fusion_weights(beta: f64) -> [f64; 3] {
    let side = (1.0 - beta) / 2.0;
    [beta, side, side]
}

/// Activations of one training forward pass.
#[derive(Debug, Clone)]
pub struct BranchOutputs {
    /// Frozen image embeddings as given.
    pub i0: Tensor2,
    /// `I0` as used for fusion (re-mapped in the CoKnowI variant).
    pub i0_eff: Tensor2,
    pub i1: Tensor2,
    pub i2: Tensor2,
    /// `I'` (or the concatenation `[I0, I1, I2]` for CoKnowLE).
    pub i_fused: Tensor2,
    pub logits0: Tensor2,
    pub logits1: Tensor2,
    pub logits2: Tensor2,
    pub context: ContextForward,
    image_fwd: Option<MapperForward>,
    knowledge_fwd: MapperForward,
    template_fwd: MapperForward,
    fused_norm: Option<Normalized>,
}

pub fn forward_train(
    model: &CoKnowModel,
    encoder: &TextEncoder,
    targets: &TextTargets,
    i0: &Tensor2,
    cfg: &CoKnowConfig,
) -> Result<BranchOutputs> {
    let d = targets.t1.cols();
    if i0.cols() != d {
        return Err(Error::dim("forward_train", i0.shape(), targets.t1.shape()));
    }
    let lambda = cfg.lambda_scale;
    let context = encode_context_targets(&model.prompt, encoder, &targets.class_tokens)?;
    let t0 = &context.t0;

    let knowledge_fwd = model.knowledge_mapper.forward(i0)?;
    let template_fwd = model.template_mapper.forward(i0)?;
    let i1 = knowledge_fwd.out.out.clone();
    let i2 = template_fwd.out.out.clone();
    let logits1 = matmul_nt(&i1, &targets.t1)?.scale(lambda);
    let logits2 = matmul_nt(&i2, &targets.t2)?.scale(lambda);

    let (image_fwd, i0_eff) = match (&model.image_mapper, cfg.variant) {
        (Some(m), Variant::CoKnowI) => {
            let f = m.forward(i0)?;
            let out = f.out.out.clone();
            (Some(f), out)
        }
        (None, Variant::CoKnowI) => {
            return Err(Error::Config(
                "CoKnowI variant needs an image mapper".into(),
            ))
        }
        _ => (None, i0.clone()),
    };

    let (i_fused, fused_norm, logits0) = match cfg.variant {
        Variant::CoKnowLE => {
            let cat = Tensor2::hstack(&[&i0_eff, &i1, &i2])?;
            let mut logits = matmul_nt(&i0_eff, t0)?;
            logits.axpy(1.0, &matmul_nt(&i1, &targets.t1)?)?;
            logits.axpy(1.0, &matmul_nt(&i2, &targets.t2)?)?;
            (cat, None, logits.scale(lambda))
        }
        Variant::Standard | Variant::CoKnowI => {
            let [w0, w1, w2] = fusion_weights(cfg.beta);
            let mut fused = i0_eff.scale(w0);
            fused.axpy(w1, &i1)?;
            fused.axpy(w2, &i2)?;
            let (fused, norm) = if cfg.renormalize_fused {
                let n = l2_normalize_rows(&fused, DEFAULT_EPS);
                (n.out.clone(), Some(n))
            } else {
                (fused, None)
            };
            let logits = matmul_nt(&fused, t0)?.scale(lambda);
            (fused, norm, logits)
        }
    };

    Ok(BranchOutputs {
        i0: i0.clone(),
        i0_eff,
        i1,
        i2,
        i_fused,
        logits0,
        logits1,
        logits2,
        context,
        image_fwd,
        knowledge_fwd,
        template_fwd,
        fused_norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// Cross-entropy of the `T0` logits.
    pub main: f64,
    pub knowledge: f64,
    pub template: f64,
}

/// Summed cross-entropy and its gradients, accumulated into `model`'s
/// parameter grads (callers zero them first). The `T0` gradient is carried
/// through the frozen text encoder into the context vectors.
pub fn loss_and_backward(
    model: &mut CoKnowModel,
    encoder: &TextEncoder,
    targets: &TextTargets,
    out: &BranchOutputs,
    labels: &[usize],
    cfg: &CoKnowConfig,
) -> Result<LossBreakdown> {
    let lambda = cfg.lambda_scale;
    let (main, g0) = cross_entropy(&out.logits0, labels)?;
    let (knowledge, mut g1) = cross_entropy(&out.logits1, labels)?;
    let (template, mut g2) = cross_entropy(&out.logits2, labels)?;
    let total = if cfg.mapper_losses {
        main + knowledge + template
    } else {
        g1.fill(0.0);
        g2.fill(0.0);
        main
    };

    let t0 = &out.context.t0;
    // dL/dI1 and dL/dI2 from their own branches.
    let mut d_i1 = matmul(&g1, &targets.t1)?.scale(lambda);
    let mut d_i2 = matmul(&g2, &targets.t2)?.scale(lambda);
    let (d_i0_eff, d_t0) = match cfg.variant {
        Variant::CoKnowLE => {
            d_i1.axpy(lambda, &matmul(&g0, &targets.t1)?)?;
            d_i2.axpy(lambda, &matmul(&g0, &targets.t2)?)?;
            let d_i0 = matmul(&g0, t0)?.scale(lambda);
            let d_t0 = matmul_tn(&g0, &out.i0_eff)?.scale(lambda);
            (d_i0, d_t0)
        }
        Variant::Standard | Variant::CoKnowI => {
            let d_t0 = matmul_tn(&g0, &out.i_fused)?.scale(lambda);
            let mut d_fused = matmul(&g0, t0)?.scale(lambda);
            if let Some(n) = &out.fused_norm {
                d_fused = l2_normalize_rows_backward(n, &d_fused)?;
            }
            let [w0, w1, w2] = fusion_weights(cfg.beta);
            d_i1.axpy(w1, &d_fused)?;
            d_i2.axpy(w2, &d_fused)?;
            (d_fused.scale(w0), d_t0)
        }
    };

    model
        .knowledge_mapper
        .backward(&out.i0, &out.knowledge_fwd, &d_i1)?;
    model
        .template_mapper
        .backward(&out.i0, &out.template_fwd, &d_i2)?;
    if let (Some(m), Some(f)) = (model.image_mapper.as_mut(), out.image_fwd.as_ref()) {
        m.backward(&out.i0, f, &d_i0_eff)?;
    }
    out.context
        .backward(encoder, &d_t0, &mut model.prompt.context.grad)?;

    Ok(LossBreakdown {
        total,
        main,
        knowledge,
        template,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fusion_weights_sum_to_one() {
        for i in 0..=100 {
            let b = i as f64 / 100.0;
            let [a, c, d] = fusion_weights(b);
            assert!((a + c + d - 1.0).abs() < 1e-15);
            assert_eq!(c, d);
        }
        assert_eq!(fusion_weights(1.0), [1.0, 0.0, 0.0]);
        assert_eq!(fusion_weights(0.0), [0.0, 0.5, 0.5]);
    }
}
