//! Dense numeric kernel for the autoencoder: tensors, same-padded
//! convolution with hand-derived gradients, MSE, and Adam.

mod adam;
mod conv;
mod loss;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use conv::{Activation, ConvGrads, ConvLayer, ConvShape};
pub use loss::mse_loss;
pub use tensor::{concat_channels, Tensor};
