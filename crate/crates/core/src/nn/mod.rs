//! Differentiable layers with hand-written backward passes.
//!
//! Every forward returns a [`LayerGrad`]: the output plus a closure mapping an
//! output gradient to the input and parameter gradients.

mod activation;
mod conv;
mod dense;
mod dropout;
mod norm;

pub use activation::{activation, relu, sigmoid, softmax_channel, Activation};
pub use conv::{
    conv3d_forward, conv_output_extent, deconv3d_forward, deconv_output_extent,
    transpose_kernel_channels, Conv3dParams, ConvGrads, Deconv3dParams,
};
pub use dense::{dense, DenseGrads, DenseParams};
pub use dropout::dropout;
pub use norm::{instance_norm, InstanceNormParams, NormGrads};

use crate::rng::Rng;
use crate::tensor::{Shape5, Tensor5};

type BackwardFn<G> = Box<dyn Fn(&Tensor5) -> G + Send + Sync>;

/// Output of a differentiable operation together with its backward map.
pub struct LayerGrad<G> {
    pub output: Tensor5,
    backward: BackwardFn<G>,
}

impl<G> LayerGrad<G> {
    pub fn new(output: Tensor5, backward: impl Fn(&Tensor5) -> G + Send + Sync + 'static) -> Self {
        Self {
            output,
            backward: Box::new(backward),
        }
    }

    /// Panics if `grad_output` does not have the output's shape.
    pub fn backward(&self, grad_output: &Tensor5) -> G {
        assert_eq!(
            grad_output.shape(),
            self.output.shape(),
            "backward: gradient shape must match the forward output"
        );
        (self.backward)(grad_output)
    }
}

impl<G> std::fmt::Debug for LayerGrad<G> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LayerGrad").field("output", &self.output.shape()).finish()
    }
}

/// He-normal initialisation: N(0, 2 / fan_in).
pub fn he_normal(shape: Shape5, fan_in: usize, rng: &mut Rng) -> Tensor5 {
    Tensor5::normal(shape, (2.0 / fan_in as f64).sqrt(), rng)
}
