//! Kalman-filter fusion of crowd judgments.
//!
//! The numerical core ([`aq`], [`fusion`], [`theory`]) is generic over the
//! floating-point [`Scalar`]; the survey pipeline ([`aggregation`],
//! [`data`], [`eval`]) works in `f64`. Aliases for the common `f64`
//! instantiations live at the crate root.

pub mod aggregation;
pub mod aq;
pub mod data;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod theory;

pub use error::{Error, Result};
pub use rng::RandomStream;
pub use scalar::Scalar;

pub type Environment = aq::Environment<f64>;
pub type JudgeParams = aq::JudgeParams<f64>;
pub type Moments = aq::Moments<f64>;
pub type Belief = fusion::Belief<f64>;
pub type WeightPair = fusion::WeightPair<f64>;
pub type Truth = fusion::Truth<f64>;
pub type Judgment = fusion::Judgment<f64>;
pub type SampleVariance = theory::SampleVariance<f64>;
pub type GapEstimate = theory::GapEstimate<f64>;
pub type GridCell = theory::GridCell<f64>;

pub type Environment32 = aq::Environment<f32>;
pub type JudgeParams32 = aq::JudgeParams<f32>;
pub type Belief32 = fusion::Belief<f32>;
pub type Judgment32 = fusion::Judgment<f32>;
