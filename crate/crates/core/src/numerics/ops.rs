//! Differentiable primitives. Each forward has a matching `*_backward` that
//! maps an upstream gradient to the gradient w.r.t. the forward's input.

use super::tensor::{dot, Tensor2};
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-12;

pub fn matmul(a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    if a.cols() != b.rows() {
        return Err(Error::dim("matmul", a.shape(), b.shape()));
    }
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor2::zeros(n, m);
    let bd = b.data();
    for i in 0..n {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (p, &av) in arow.iter().enumerate().take(k) {
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(out)
}

/// `a · bᵀ`
pub fn matmul_nt(a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    if a.cols() != b.cols() {
        return Err(Error::dim("matmul_nt", a.shape(), b.shape()));
    }
    let mut out = Tensor2::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            out.set(i, j, dot(a.row(i), b.row(j)));
        }
    }
    Ok(out)
}

/// `aᵀ · b`
pub fn matmul_tn(a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    if a.rows() != b.rows() {
        return Err(Error::dim("matmul_tn", a.shape(), b.shape()));
    }
    let mut out = Tensor2::zeros(a.cols(), b.cols());
    for r in 0..a.rows() {
        let arow = a.row(r);
        let brow = b.row(r);
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out.row_mut(i).iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(out)
}

/// Output of [`l2_normalize_rows`]; keeps what the backward pass needs.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub out: Tensor2,
    pub norms: Vec<f64>,
    /// Rows whose norm was below `eps`; they are passed through unchanged.
    pub degenerate: Vec<bool>,
}

impl Normalized {
    pub fn any_degenerate(&self) -> bool {
        self.degenerate.iter().any(|&d| d)
    }
}

pub fn l2_normalize_rows(a: &Tensor2, eps: f64) -> Normalized {
    let mut out = a.clone();
    let mut norms = Vec::with_capacity(a.rows());
    let mut degenerate = Vec::with_capacity(a.rows());
    for r in 0..a.rows() {
        let row = out.row_mut(r);
        let n = dot(row, row).sqrt();
        norms.push(n);
        if n < eps {
            degenerate.push(true);
        } else {
            degenerate.push(false);
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    Normalized {
        out,
        norms,
        degenerate,
    }
}

/// For `y = x / |x|`: `dx = (g - y (y·g)) / |x|`. Degenerate rows pass the
/// gradient through, matching their identity forward.
pub fn l2_normalize_rows_backward(fwd: &Normalized, upstream: &Tensor2) -> Result<Tensor2> {
    if upstream.shape() != fwd.out.shape() {
        return Err(Error::dim(
            "l2_normalize_backward",
            fwd.out.shape(),
            upstream.shape(),
        ));
    }
    let mut grad = upstream.clone();
    for r in 0..grad.rows() {
        if fwd.degenerate[r] {
            continue;
        }
        let y = fwd.out.row(r);
        let proj = dot(y, upstream.row(r));
        let n = fwd.norms[r];
        for (g, &yv) in grad.row_mut(r).iter_mut().zip(y) {
            *g = (*g - yv * proj) / n;
        }
    }
    Ok(grad)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Tensor2) -> Tensor2 {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

pub fn relu(a: &Tensor2) -> Tensor2 {
    a.map(|v| v.max(0.0))
}

/// Gradient passes where the forward input was strictly positive; at exactly
/// zero the derivative is taken as 0.
pub fn relu_backward(input: &Tensor2, upstream: &Tensor2) -> Result<Tensor2> {
    if input.shape() != upstream.shape() {
        return Err(Error::dim("relu_backward", input.shape(), upstream.shape()));
    }
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor2::from_vec(input.rows(), input.cols(), data)
}

pub fn tanh(a: &Tensor2) -> Tensor2 {
    a.map(f64::tanh)
}

/// `output` is the forward result `tanh(x)`.
pub fn tanh_backward(output: &Tensor2, upstream: &Tensor2) -> Result<Tensor2> {
    if output.shape() != upstream.shape() {
        return Err(Error::dim(
            "tanh_backward",
            output.shape(),
            upstream.shape(),
        ));
    }
    let data = output
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&y, &g)| g * (1.0 - y * y))
        .collect();
    Tensor2::from_vec(output.rows(), output.cols(), data)
}
