//! Dense tensors, a reverse-mode tape, and the neural-network building
//! blocks used by the decoder and the folding stack.

mod checkpoint;
mod graph;
pub mod kernels;
mod nn;
mod optim;
mod real;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use graph::{Bindings, Graph, Var};
pub use nn::{layer_norm, linear, mha, mha_with, mlp2, MhaWeights, LAYER_NORM_EPS};
pub use optim::{clip_grad_norm, Adam, AdamConfig};
pub use real::{DType, Real};
pub use tensor::{ParamStore, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("unknown parameter `{0}`")]
    MissingParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}
