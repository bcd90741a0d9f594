use serde::{Deserialize, Serialize};

use super::tensor::{Param, Tensor2};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdCosineConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: usize,
    pub momentum: f64,
}

impl Default for SgdCosineConfig {
    fn default() -> Self {
        Self {
            lr_max: 0.002,
            lr_min: 0.0,
            total_steps: 1,
            momentum: 0.9,
        }
    }
}

impl SgdCosineConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr_max >= 0.0
            && self.lr_min >= 0.0
            && self.lr_min <= self.lr_max
            && self.total_steps > 0
            && (0.0..1.0).contains(&self.momentum);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid optimizer settings {self:?}"
            )))
        }
    }
}

/// `lr_min + (lr_max - lr_min) (1 + cos(pi step / total)) / 2`, clamped to
/// `lr_min` past the end of the schedule.
pub fn cosine_lr(cfg: &SgdCosineConfig, step: usize) -> f64 {
    if step >= cfg.total_steps {
        return cfg.lr_min;
    }
    let progress = step as f64 / cfg.total_steps as f64;
    cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Momentum SGD. Velocity buffers are lazily shaped on the first step and
/// are part of the training state (checkpointed alongside the params).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub velocity: Vec<Tensor2>,
}

impl Sgd {
    /// `v <- momentum v + grad; value <- value - lr(step) v`. Grads are left
    /// in place; callers zero them.
    pub fn step(&mut self, params: &mut [&mut Param], cfg: &SgdCosineConfig, step: usize) {
        if self.velocity.len() != params.len() {
            self.velocity = params
                .iter()
                .map(|p| Tensor2::zeros(p.value.rows(), p.value.cols()))
                .collect();
        }
        let lr = cosine_lr(cfg, step);
        for (p, v) in params.iter_mut().zip(self.velocity.iter_mut()) {
            for ((x, g), vel) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(v.data_mut().iter_mut())
            {
                *vel = cfg.momentum * *vel + g;
                *x -= lr * *vel;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(momentum: f64) -> SgdCosineConfig {
        SgdCosineConfig {
            lr_max: 0.1,
            lr_min: 0.0,
            total_steps: 100,
            momentum,
        }
    }

    #[test]
    fn schedule_endpoints() {
        let c = cfg(0.0);
        assert_eq!(cosine_lr(&c, 0), 0.1);
        assert_eq!(cosine_lr(&c, 100), 0.0);
        assert_eq!(cosine_lr(&c, 1000), 0.0);
        assert!((cosine_lr(&c, 50) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn schedule_monotone() {
        let c = SgdCosineConfig {
            lr_min: 0.001,
            total_steps: 37,
            ..cfg(0.9)
        };
        let lrs: Vec<f64> = (0..=37).map(|s| cosine_lr(&c, s)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(lrs[37], 0.001);
    }

    #[test]
    fn vanilla_and_zero_grad() {
        let mut p = Param::new(Tensor2::row_vector(&[1.0, 2.0]));
        p.grad = Tensor2::row_vector(&[0.5, -1.0]);
        let mut c = cfg(0.0);
        c.total_steps = 10;
        let mut sgd = Sgd::default();
        sgd.step(&mut [&mut p], &c, 0);
        assert!((p.value.get(0, 0) - (1.0 - 0.1 * 0.5)).abs() < 1e-15);
        assert!((p.value.get(0, 1) - (2.0 + 0.1)).abs() < 1e-15);

        let mut q = Param::new(Tensor2::row_vector(&[4.0]));
        sgd = Sgd::default();
        sgd.step(&mut [&mut q], &c, 0);
        assert_eq!(q.value.get(0, 0), 4.0);
    }

    #[test]
    fn two_momentum_steps_match_unrolled_recurrence() {
        let c = SgdCosineConfig {
            lr_max: 0.1,
            lr_min: 0.01,
            total_steps: 4,
            momentum: 0.9,
        };
        let mut p = Param::new(Tensor2::row_vector(&[1.0]));
        let mut sgd = Sgd::default();
        p.grad = Tensor2::row_vector(&[2.0]);
        sgd.step(&mut [&mut p], &c, 0);
        p.grad = Tensor2::row_vector(&[-1.0]);
        sgd.step(&mut [&mut p], &c, 1);

        // v1 = 2, x1 = 1 - lr0*2; v2 = 0.9*2 - 1 = 0.8, x2 = x1 - lr1*0.8
        let lr0 = 0.1;
        let lr1 = 0.01 + 0.5 * 0.09 * (1.0 + (std::f64::consts::PI / 4.0).cos());
        let expected = 1.0 - lr0 * 2.0 - lr1 * 0.8;
        assert!((p.value.get(0, 0) - expected).abs() < 1e-15);
    }
}
