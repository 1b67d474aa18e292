//! Affine convolution and the pieces around it: a small reverse-mode tensor
//! engine, the AffUNet family of networks, face-reconstruction losses, UV
//! position-map geometry and a texel renderer.

pub mod affconv;
pub mod atsr;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod image_io;
pub mod loss;
pub mod networks;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod render;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{DType, Scalar, Tensor};
