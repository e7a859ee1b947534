//! Minimal convolutional network with exact backpropagation.
//!
//! Tensors are `f64` throughout. A [`Model`] is an ordered list of layers from
//! a small grammar (3×3 convolution, 2×2 max pooling, dropout, dense, ReLU,
//! softmax). [`Model::forward`] records what [`Model::backward`] needs, and
//! [`gradient_check`] verifies the two against central differences.

pub mod arch;
mod gradcheck;
mod layer;
mod model;
mod optim;
mod tensor;

pub use arch::{build_toy, build_vgg13, vgg13_specs, ToyArch, VGG13_INPUT};
pub use gradcheck::{
    check_logit_gradient, gradient_check, relative_error, GradCheckOptions, GradCheckReport,
    FD_STEP, REL_ERROR_FLOOR,
};
pub use layer::LayerSpec;
pub use model::{ForwardCache, Gradients, Layer, Mode, Model, ParamKind, ParamRef};
pub use optim::Sgd;
pub use tensor::Tensor;
