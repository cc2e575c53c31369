//! Dense and sparse numeric kernels with hand-written backward passes.

mod activation;
pub mod checkpoint;
mod grad_check;
mod params;
mod sparse;
mod tensor;

use thiserror::Error;

pub use activation::{
    leaky_relu, leaky_relu_backward, leaky_relu_grad_scalar, leaky_relu_scalar, sigmoid,
    sigmoid_backward, sigmoid_scalar, softplus, Activation, LEAKY_SLOPE,
};
pub use grad_check::{grad_check, Coordinates, GradCheckReport};
pub use params::{
    adam_step, xavier_init, Optimizer, OptimizerConfig, OptimizerKind, Param, ParamStore,
};
pub use sparse::{masked_row_softmax, masked_row_softmax_backward, Csr};
pub use tensor::{dot, matmul, matmul_a_bt, matmul_at_b, matmul_backward, Tensor};

pub(crate) use tensor::{axpy, for_each_row_mut};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("row {0} has no entries to normalize over")]
    EmptyRow(usize),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("parameter {0} registered twice")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("objective failed: {0}")]
    Callback(String),
}
