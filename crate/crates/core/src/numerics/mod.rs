//! Dense linear algebra, differentiable primitives with manual backward
//! rules, losses, and the momentum-SGD / cosine-schedule optimizer.

pub mod gradcheck;
pub mod loss;
pub mod ops;
pub mod optim;
pub mod tensor;

pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use loss::cross_entropy;
pub use ops::{
    l2_normalize_rows, l2_normalize_rows_backward, matmul, matmul_nt, matmul_tn, relu,
    relu_backward, softmax_in_place, softmax_rows, Normalized, DEFAULT_EPS,
};
pub use optim::{cosine_lr, Sgd, SgdCosineConfig};
pub use tensor::{dot, norm, zero_grads, Param, Tensor2};
