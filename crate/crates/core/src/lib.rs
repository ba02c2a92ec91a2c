//! Novel view synthesis from a single image.
//!
//! The pipeline inverts an input image into the latent space of a small
//! 3D-aware generator, renders a depth map from the recovered latent,
//! forward-warps the input to a target camera with softmax splatting, and
//! fills the disoccluded regions with a style-modulated inpainting network
//! that also sees the horizontally mirrored warp. A separate optimization
//! path refines latents and fine-tunes the generator against pseudo ground
//! truth rendered from several poses, which makes attribute edits hold up
//! under viewpoint changes.
//!
//! Everything is generic over the scalar type; `f32` is the training
//! default and `f64` is used where tests need tight tolerances.

pub mod scalar;
pub mod tensor;
pub mod geometry;
pub mod nn;
pub mod optim;
pub mod generator;
pub mod encoder;
pub mod warping;
pub mod inpaint;
pub mod losses;
pub mod training;
pub mod editing;
pub mod app;

pub use scalar::Scalar;
pub use tensor::{Tape, Tensor, Var};

/// Error type for fallible library entry points. Tape-level shape mismatches
/// are programming errors and panic instead.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("optimization failed: {0}")]
    Optimization(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
