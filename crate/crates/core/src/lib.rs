//! Stochastic and deterministic reduced models for the slow variables of the
//! rescaled two-scale Lorenz 96 system.
//!
//! Every numerical routine is generic over [`Real`] (`f32` or `f64`). The
//! aliases at the crate root fix the scalar to `f64`, which is what the
//! command-line harness uses.

pub mod calibration;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod reduced;
pub mod scalar;
pub mod series;
mod serde_matrix;
pub mod stats;

pub use error::{Error, Result};
pub use reduced::{Integrator, ModelKind};
pub use scalar::Real;

pub type LorenzParams = dynamics::LorenzParams<f64>;
pub type SlowState = dynamics::SlowState<f64>;
pub type FastState = dynamics::FastState<f64>;
pub type CouplingOperators = dynamics::CouplingOperators<f64>;
pub type TimeSeries = series::TimeSeries<f64>;
pub type Climatology = calibration::Climatology<f64>;
pub type CalibrationOptions = calibration::CalibrationOptions<f64>;
pub type CalibrationArtifact = calibration::CalibrationArtifact<f64>;
pub type ReducedModel = reduced::ReducedModel<f64>;
pub type SimulationOptions = reduced::SimulationOptions<f64>;
pub type DensityEstimate = stats::DensityEstimate<f64>;
pub type CorrelationCurve = stats::CorrelationCurve<f64>;
pub type ErrorReport = stats::ErrorReport<f64>;
