//! Small reverse-mode autodiff over 2-D tensors, generic over `f32`/`f64`.

mod checkpoint;
mod gradcheck;
mod graph;
mod optim;
mod param;
mod tensor;

use thiserror::Error;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, read_checkpoint, save_checkpoint, CHECKPOINT_VERSION,
};
pub use gradcheck::{analytic_grads, compare_gradients, grad_check, GradCheckConfig, GradCheckReport, TensorCheck};
pub use graph::{Gradients, Graph, Var};
pub use optim::{AdamW, AdamWConfig, DEFAULT_WEIGHT_DECAY};
pub use param::{Init, Param, ParamGrads, ParamId, ParamRegistry};
pub use tensor::{DType, Scalar, Tensor};

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}
