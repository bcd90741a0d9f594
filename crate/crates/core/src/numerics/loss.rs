use super::ops::softmax_rows;
use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// Mean cross-entropy over rows plus its gradient w.r.t. the logits,
/// `(softmax - onehot) / batch`.
pub fn cross_entropy(logits: &Tensor2, labels: &[usize]) -> Result<(f64, Tensor2)> {
    if labels.len() != logits.rows() {
        return Err(Error::dim(
            "cross_entropy",
            logits.shape(),
            (labels.len(), 1),
        ));
    }
    let k = logits.cols();
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Index {
            what: "classes",
            index: bad,
            len: k,
        });
    }
    let n = logits.rows();
    if n == 0 {
        return Ok((0.0, logits.clone()));
    }
    let mut grad = softmax_rows(logits);
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        grad.row_mut(r)[y] -= 1.0;
    }
    let inv = 1.0 / n as f64;
    grad.data_mut().iter_mut().for_each(|g| *g *= inv);
    Ok((loss * inv, grad))
}
