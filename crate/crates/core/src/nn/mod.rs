//! From-scratch convolutional network: tensors, layers, softmax heads, loss,
//! reverse-mode gradients, Adam and checkpoints.

pub mod adam;
pub mod arch;
pub mod checkpoint;
pub mod gemm;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod real;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use arch::{Architecture, LayerSpec, Width, DEFAULT_ARCH};
pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, grad_check_against, GradCheckOptions, GradCheckReport};
pub use loss::{nll_loss, ProbabilityHeads, PROB_FLOOR};
pub use model::{Gradients, Model};
pub use real::Real;
pub use tensor::{Param, Tensor};
