use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    l2_normalize_rows, l2_normalize_rows_backward, matmul, matmul_nt, matmul_tn, relu,
    relu_backward, Normalized, Param, Tensor2, DEFAULT_EPS,
};
use crate::rng::SeededRng;

/// Semantic knowledge mapper: `d -> d/4 -> d` with a ReLU on the hidden
/// layer, followed by row L2 normalization. There is no output ReLU: it
/// would confine embeddings to the positive orthant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mapper {
    pub w_a: Param,
    pub b_a: Param,
    pub w_b: Param,
    pub b_b: Param,
}

#[derive(Debug, Clone)]
pub struct MapperForward {
    hidden_pre: Tensor2,
    hidden: Tensor2,
    pub out: Normalized,
}

impl Mapper {
    /// Weights `N(0, 1/fan_in)`, biases zero.
    pub fn new(d: usize, rng: &mut SeededRng) -> Result<Self> {
        if d == 0 || !d.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "mapper width must be a positive multiple of 4, got {d}"
            )));
        }
        let h = d / 4;
        Ok(Self {
            w_a: Param::new(Tensor2::randn(d, h, 1.0 / (d as f64).sqrt(), rng)),
            b_a: Param::new(Tensor2::zeros(1, h)),
            w_b: Param::new(Tensor2::randn(h, d, 1.0 / (h as f64).sqrt(), rng)),
            b_b: Param::new(Tensor2::zeros(1, d)),
        })
    }

    pub fn dim(&self) -> usize {
        self.w_a.value.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_a.value.cols()
    }

    pub fn params_mut(&mut self) -> [&mut Param; 4] {
        [&mut self.w_a, &mut self.b_a, &mut self.w_b, &mut self.b_b]
    }

    pub fn params(&self) -> [&Param; 4] {
        [&self.w_a, &self.b_a, &self.w_b, &self.b_b]
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn forward(&self, x: &Tensor2) -> Result<MapperForward> {
        if x.cols() != self.dim() {
            return Err(Error::dim(
                "mapper_forward",
                x.shape(),
                self.w_a.value.shape(),
            ));
        }
        let hidden_pre = matmul(x, &self.w_a.value)?.add_row_bias(self.b_a.value.data())?;
        let hidden = relu(&hidden_pre);
        let out_pre = matmul(&hidden, &self.w_b.value)?.add_row_bias(self.b_b.value.data())?;
        Ok(MapperForward {
            hidden_pre,
            hidden,
            out: l2_normalize_rows(&out_pre, DEFAULT_EPS),
        })
    }

    /// Accumulates parameter gradients for `upstream` = dL/d(normalized output).
    /// The input is frozen, so no input gradient is produced.
    pub fn backward(&mut self, x: &Tensor2, fwd: &MapperForward, upstream: &Tensor2) -> Result<()> {
        let g_out = l2_normalize_rows_backward(&fwd.out, upstream)?;
        self.w_b.grad.axpy(1.0, &matmul_tn(&fwd.hidden, &g_out)?)?;
        self.b_b.grad.axpy(1.0, &g_out.sum_rows())?;
        let g_hidden = relu_backward(&fwd.hidden_pre, &matmul_nt(&g_out, &self.w_b.value)?)?;
        self.w_a.grad.axpy(1.0, &matmul_tn(x, &g_hidden)?)?;
        self.b_a.grad.axpy(1.0, &g_hidden.sum_rows())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{dot, finite_diff_check, zero_grads};

    #[test]
    fn shapes_follow_quarter_width() {
        let mut rng = SeededRng::new(0);
        let m = Mapper::new(1024, &mut rng).unwrap();
        assert_eq!(m.hidden_dim(), 256);
        let y = m.forward(&Tensor2::randn(2, 1024, 1.0, &mut rng)).unwrap();
        assert_eq!(y.out.out.shape(), (2, 1024));
        assert!(Mapper::new(10, &mut rng).is_err());
        assert!(m.forward(&Tensor2::zeros(1, 8)).is_err());
    }

    #[test]
    fn zero_input_zero_bias_is_degenerate() {
        let m = Mapper::new(8, &mut SeededRng::new(1)).unwrap();
        let y = m.forward(&Tensor2::zeros(3, 8)).unwrap();
        assert!(y.out.degenerate.iter().all(|&d| d));
        assert_eq!(y.out.out, Tensor2::zeros(3, 8));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SeededRng::new(7);
        let mut m = Mapper::new(8, &mut rng).unwrap();
        for p in m.params_mut() {
            p.value = Tensor2::randn(p.value.rows(), p.value.cols(), 0.5, &mut rng);
        }
        let x = Tensor2::randn(3, 8, 1.0, &mut rng);
        let probe = Tensor2::randn(3, 8, 1.0, &mut rng);
        let objective = |m: &Mapper| dot(m.forward(&x).unwrap().out.out.data(), probe.data());

        zero_grads(m.params_mut());
        let fwd = m.forward(&x).unwrap();
        m.backward(&x, &fwd, &probe).unwrap();

        let mut params: Vec<Param> = m.params().iter().map(|p| (*p).clone()).collect();
        let report = finite_diff_check(
            |ps| {
                let mm = Mapper {
                    w_a: ps[0].clone(),
                    b_a: ps[1].clone(),
                    w_b: ps[2].clone(),
                    b_b: ps[3].clone(),
                };
                objective(&mm)
            },
            &mut params,
            1e-5,
            1e-4,
        );
        assert!(report.passed(), "{report:?}");
    }
}
