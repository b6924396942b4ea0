//! Reverse-mode differentiation engine: channels-last tensors, the layer set
//! the models need, losses, Adam and finite-difference checks.

mod adam;
pub mod gradcheck;
mod kernels;
mod layer;
mod loss;
mod stack;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use layer::{
    Activation, BatchNorm, Conv, Dense, Layer, LayerSpec, Mode, Param, Pool, BATCHNORM_EPS,
    BATCHNORM_MOMENTUM,
};
pub use loss::{bce_loss, cce_loss, mse_loss, one_hot, LossKind};
pub use stack::{LayerStack, Src, StackBuilder};
pub use tensor::{Scalar, Tensor};
