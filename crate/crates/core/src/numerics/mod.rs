//! Dense tensors, layer kernels with reverse-mode adjoints, and a
//! finite-difference gradient checker.

pub mod gradcheck;
pub mod ops;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, Stencil};
pub use ops::{cosine_sim, linear, linear_backward, sigmoid, sigmoid_backward, softmax, softmax_backward};
pub use tensor::{DualTensor, ParamSet, Tensor};
