//! Forward and backward kernels for every layer type in the network:
//! convolution and its transpose, max-pooling with switch recording,
//! unpooling, ReLU, inner product and the two losses.
//!
//! Kernels are pure functions of their arguments.

mod activation;
mod conv;
mod dense;
mod loss;
mod pool;

use crate::tensor::Tensor;

pub use activation::{relu_backward, relu_forward};
pub use conv::{conv2d_backward, conv2d_forward, deconv2d_backward, deconv2d_forward, ConvSpec};
pub use dense::{inner_product_backward, inner_product_forward};
pub use loss::{softmax_xent, weighted_l2_loss};
pub use pool::{
    maxpool_backward, maxpool_forward, unpool_backward, unpool_fixed_forward, unpool_forward,
    unpool_known_forward, PoolSpec, SwitchMap, Switches,
};

/// Gradients of a layer with respect to its input and parameters. Shapes
/// match the forward arguments exactly.
#[derive(Debug, Clone)]
pub struct LayerGrad<T> {
    pub grad_input: Tensor<T>,
    pub grad_weights: Option<Tensor<T>>,
    pub grad_bias: Option<Tensor<T>>,
}
