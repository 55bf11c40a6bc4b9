//! Functional forward/backward kernels. [`crate::Graph`] wires these together.

mod activation;
mod conv;
mod norm;
mod pad;

pub use activation::{leaky_relu, leaky_relu_backward, relu, unit_tanh, unit_tanh_backward};
pub use conv::{
    conv2d, conv2d_backward, conv2d_naive, conv2d_output_dim, conv_transpose2d, conv_transpose2d_backward,
    conv_transpose2d_output_dim, ConvGrads, ConvSpec,
};
pub use norm::{instance_norm, instance_norm_backward, InstanceNormOutput};
pub use pad::{reflection_pad2d, reflection_pad2d_backward};
