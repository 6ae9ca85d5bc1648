//! Temporal Linear Network (TLN) forecasting.
//!
//! A TLN stacks strictly linear layers: a [`SequentialDense`] block that mixes
//! features position-wise and then positions feature-wise, optionally followed
//! by a causal, dilated, depthwise convolution. Because every stage is affine,
//! a trained network collapses into one affine map ([`LinearEquivalent`]) that
//! reproduces its outputs to rounding error and can be inspected as a weight
//! table.
//!
//! The numeric core is generic over the [`Scalar`] trait (implemented for
//! `f32` and `f64`). The aliases at the crate root fix the scalar to [`Real`],
//! which is `f64` unless the `single-precision` feature is enabled.
//!
//! Module map:
//! - [`tensor`]: dense 2-D arrays.
//! - [`layers`]: forward/backward of the two layer kinds.
//! - [`model`]: layer stacks, initialization, parameter counting, JSON files.
//! - [`train`]: Adam mini-batch training and gradient checking.
//! - [`equivalence`]: extraction of the equivalent affine map.
//! - [`baselines`]: OLS, ridge, lasso and elastic net on flattened windows.
//! - [`data`]: CSV ingestion, scaling, time features, windowing, splits.
//! - [`metrics`]: R² and MSE.
//! - [`harness`]: configuration-driven benchmark sweeps.

pub mod baselines;
pub mod data;
pub mod equivalence;
mod error;
pub mod harness;
pub mod layers;
pub mod linalg;
pub mod metrics;
pub mod model;
mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use baselines::{FlatLinear, FlatRegression, Regularization};
pub use equivalence::LinearEquivalent;
pub use layers::{DepthwiseConv, SequentialDense};
pub use model::{Layer, Tln, TlnConfig};
pub use tensor::{Axis, Tensor};
pub use train::{TrainConfig, TrainReport};

/// Scalar used by the concrete aliases below.
#[cfg(not(feature = "single-precision"))]
pub type Real = f64;
/// Scalar used by the concrete aliases below.
#[cfg(feature = "single-precision")]
pub type Real = f32;

/// A `(sequence_length × features)` array.
pub type SequenceTensor = Tensor<Real>;
pub type SequentialDenseParams = SequentialDense<Real>;
pub type DepthwiseConvParams = DepthwiseConv<Real>;
pub type TlnModel = Tln<Real>;
pub type EquivalentLinear = LinearEquivalent<Real>;
pub type FlatLinearModel = FlatLinear<Real>;
pub type FlatRegressionProblem = FlatRegression<Real>;
