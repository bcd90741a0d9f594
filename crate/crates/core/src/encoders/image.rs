use super::text::vec_mat;
use super::EncoderConfig;
use crate::error::{Error, Result};
use crate::numerics::{l2_normalize_rows, matmul, Normalized, Tensor2, DEFAULT_EPS};
use crate::rng::{derive_seed, SeededRng};

/// Frozen toy image tower: one linear projection followed by L2 normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEncoder {
    pub proj: Tensor2,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageEmbedding {
    pub values: Vec<f64>,
    /// Input projected to (near) zero; `values` is then the unnormalized projection.
    pub degenerate: bool,
}

impl ImageEncoder {
    pub fn new(config: &EncoderConfig) -> Self {
        let mut rng = SeededRng::new(derive_seed(config.seed, "image-encoder"));
        let std = 1.0 / (config.d_in as f64).sqrt();
        Self {
            proj: Tensor2::randn(config.d_in, config.d_joint, std, &mut rng),
            seed: config.seed,
        }
    }

    pub fn d_in(&self) -> usize {
        self.proj.rows()
    }

    pub fn d_joint(&self) -> usize {
        self.proj.cols()
    }

    pub fn encode(&self, x: &[f64]) -> Result<ImageEmbedding> {
        if x.len() != self.d_in() {
            return Err(Error::dim("encode_image", (1, x.len()), (1, self.d_in())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite image feature".into()));
        }
        let y = Tensor2::row_vector(&vec_mat(x, &self.proj));
        let n = l2_normalize_rows(&y, DEFAULT_EPS);
        Ok(ImageEmbedding {
            degenerate: n.degenerate[0],
            values: n.out.into_data(),
        })
    }

    /// Encodes every row of `raw` (n x d_in).
    pub fn encode_batch(&self, raw: &Tensor2) -> Result<Normalized> {
        if raw.cols() != self.d_in() {
            return Err(Error::dim("encode_image", raw.shape(), self.proj.shape()));
        }
        Ok(l2_normalize_rows(&matmul(raw, &self.proj)?, DEFAULT_EPS))
    }
}
