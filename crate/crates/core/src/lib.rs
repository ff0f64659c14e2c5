//! Volumetric segmentation kit: a V-Net style encoder/decoder with
//! squeeze-and-excitation encoders and attention guided filter decoders,
//! trained with a weighted soft Dice loss and evaluated with Dice,
//! sensitivity, specificity and Hausdorff95 over nested tumour regions.
//!
//! Everything is `f64` and every differentiable operation carries an explicit
//! analytic backward pass.

pub mod ag;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod net;
pub mod npy;
pub mod rng;
pub mod se;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Shape5, Tensor5};
