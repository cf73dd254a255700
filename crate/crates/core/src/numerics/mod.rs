//! Differentiable computation core: dense tensors, weight-normalized affine
//! layers, activations, dropout, Adam, and a finite-difference gradient checker.
//!
//! Gradients are derived by hand per layer rather than taped: every layer
//! returns a cache from `forward` and consumes it in `backward`.

mod gradcheck;
mod layers;
mod network;
mod params;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use layers::{
    affine_backward, affine_forward, dropout_apply, leaky_relu, leaky_relu_backward, sigmoid,
    sigmoid_backward, softmax, softmax_backward, tanh, tanh_backward, weight_norm_apply,
    weight_norm_backward, AffineGrads,
};
pub use network::{Activation, Dense, DenseCache, Mlp, MlpTrace};
pub use params::{AdamConfig, ParamId, ParamStore};
pub use tensor::{matmul, matmul_acc, Tensor};
