//! Affine convolution: a convolution whose sampling window is warped at
//! every output location by a predicted 3x2 affine matrix.

mod field;
mod grid;
mod layer;
mod op;

pub use field::{identity_predictor, predict_affine_field, AffineField};
pub use grid::{matrix_from_encoding, transform_kernel_coords, AffineMatrix, KernelGrid, IDENTITY_ENCODING};
pub use layer::AffineConvLayer;
