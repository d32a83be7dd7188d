//! Dense tensors and tape-based reverse-mode automatic differentiation.
//!
//! Values live in [`Tensor`]; differentiable computation is recorded on a
//! [`Graph`] and differentiated with [`Graph::backward`]. All kernels are
//! generic over [`Scalar`] so the same code runs in `f32` for training and in
//! `f64` for gradient checking.

mod backward;
pub mod error;
pub mod fpu;
pub mod gradcheck;
mod graph;
pub mod image;
pub mod io;
mod kernels;
mod ops;
mod scalar;
mod tensor;

pub use error::{Result, TensorError};
pub use fpu::flush_subnormals;
pub use graph::{BackwardFault, BnMode, BranchRecord, Graph, RunningStats, Var};
pub use kernels::ConvParams;
pub use ops::{BN_EPS, BN_MOMENTUM, P_CLAMP};
pub use scalar::{DType, Precision, Scalar};
pub use tensor::Tensor;
