//! Training dynamics of classifiers under temperature-scaled softmax cross-entropy.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the experiments use.

// Negated comparisons are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod datasets;
pub mod dynamics;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod ode;
pub mod rescale;
pub mod scalar;
pub mod timescales;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type MatrixF64 = linalg::Matrix<f64>;
pub type MatrixF32 = linalg::Matrix<f32>;
pub type KernelF64 = kernel::KernelTensor<f64>;
pub type KernelF32 = kernel::KernelTensor<f32>;
pub type ParamsF64 = model::ParamVector<f64>;
pub type LabelsF64 = loss::LabelMatrix<f64>;
pub type DatasetF64 = datasets::Dataset<f64>;
pub type TrajectoryF64 = dynamics::Trajectory<f64>;
pub type CorrelatedModelF64 = model::CorrelatedModel<f64>;
