//! Small dense/convolutional network engine with exact reverse-mode
//! gradients, inverted dropout, Adam and a finite-difference checker.

mod adam;
pub mod gradcheck;
mod layers;
mod network;
mod tensor;

pub use adam::{AdamConfig, OptimizerState};
pub use gradcheck::{grad_check, grad_check_with, micro_network, GradCheckReport, MicroNet, Stencil};
pub use layers::{
    conv2d_forward, cross_entropy_loss, dense_forward, dropout, relu, softmax, DropoutMode, LayerSpec, LOSS_CLAMP,
};
pub use network::{Gradients, LayerParams, Mode, ModelSpec, Network, ParamIndex, ParamSet, ParamTensor};
pub use tensor::{Scalar, Tensor};
