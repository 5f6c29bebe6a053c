//! Convolution-operator engine and analytic cost model.
//!
//! Five operator families — standard, depthwise-separable, group,
//! heterogeneous, and dual (a grouped K x K branch summed with a full
//! 1 x 1 branch) — with forward and backward passes lowered onto
//! im2col + GEMM, an independent direct-loop oracle, exact FLOP/parameter
//! counting, declarative model configurations with replacement policies,
//! a desk-scale training loop, and single-threaded micro-benchmarks.
//!
//! Numeric code is generic over the scalar type ([`Element`], implemented
//! for `f32` and `f64`); the cost model works in exact integers and
//! rationals.

pub mod bench;
pub mod conv;
pub mod cost;
pub mod error;
pub mod io;
pub mod matrix;
pub mod report;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod verify;
pub mod zoo;

pub use error::{Error, Result};
pub use scalar::Element;

/// Concrete single-precision aliases.
pub type Tensor32 = tensor::Tensor<f32>;
pub type Matrix32 = matrix::Matrix<f32>;
pub type FilterBank32 = conv::FilterBank<f32>;
pub type Model32 = zoo::Model<f32>;

/// Concrete double-precision aliases.
pub type Tensor64 = tensor::Tensor<f64>;
pub type Matrix64 = matrix::Matrix<f64>;
pub type FilterBank64 = conv::FilterBank<f64>;
pub type Model64 = zoo::Model<f64>;
