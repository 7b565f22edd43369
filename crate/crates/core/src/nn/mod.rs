//! Real-valued tensors with hand-written forward and backward passes for the
//! three layer types the denoiser uses, plus a finite-difference checker and
//! an Adam optimizer.

mod batchnorm;
mod conv;
mod gradcheck;
mod optim;
mod relu;
mod tensor;

pub use batchnorm::{BatchNormLayer, BnCache, BnGrads, Mode, BN_EPSILON, BN_MOMENTUM};
pub use conv::{ConvCache, ConvGrads, ConvLayer};
pub use gradcheck::{finite_difference_check, GradCheck};
pub use optim::{AdamConfig, OptimizerState};
pub use relu::{relu_backward, relu_forward};
pub use tensor::RealTensor;
