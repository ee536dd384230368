//! Dense tensors, a reverse-mode tape, and the optimizer and loss used to
//! train the decoder.

mod adam;
pub(crate) mod gemm;
mod gradcheck;
mod graph;
pub mod ops;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{grad_check, GradCheck, GradCheckReport};
pub use graph::{gelu_value, huber_value, Gradients, Graph, Var, LAYER_NORM_EPS};
pub use ops::{causal_self_attention, AttentionWeights};
pub use tensor::Tensor;
