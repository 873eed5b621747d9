//! Dense tensors, reverse-mode gradients, and the Adam optimizer.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod scalar;
pub mod tensor;

pub use adam::{adam_step, adam_step_with_lr, AdamConfig, OptimizerState};
pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport, ParamCheck};
pub use graph::{
    AttentionSegment, ColSlice, EditLayout, Gelu, GatherRows, Gradients, Graph, NodeId, ParamId,
    ParamStore, Parameter, Pointwise,
};
pub use scalar::Scalar;
pub use tensor::Tensor;
