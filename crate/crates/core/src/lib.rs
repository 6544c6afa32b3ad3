//! Height-free multiple-bounce Smith microfacet BRDF.
//!
//! The library is organized around a position-free path formulation: a light
//! path is just an ordered list of directions, the local interaction at each
//! bounce is a vertex term, and the shadowing-masking of the whole path is a
//! single recursively defined segment term. On top of that sit unbiased
//! Monte Carlo estimators (`estimators`) and an independent deterministic
//! fixed-point reference solver plus measurement tooling (`validation`).

pub mod estimators;
pub mod fresnel;
pub mod geom;
pub mod microfacet;
pub mod pathsm;
pub mod validation;

pub use estimators::{EstimatorConfig, EvalResult, RngStream, SampleResult};
pub use fresnel::FresnelSpec;
pub use geom::{Direction, Spectrum};
pub use microfacet::{MicrosurfaceParams, NdfKind};
pub use pathsm::{PathDirections, SegmentTable};
pub use validation::{DirectionGrid, RhoTable};

/// Library-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// The fixed-point iteration did not reach the requested tolerance.
    #[error("fixed-point solver did not converge: residual {residual} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },
    /// Two reports cannot be compared (e.g. different binning).
    #[error("mismatched inputs: {0}")]
    Mismatch(String),
    /// Malformed input data (fixture files, etc).
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
