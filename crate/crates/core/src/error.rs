use alloc::string::String;
use core::fmt;

/// Everything that can go wrong in the engine.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    InvalidTorus(String),
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    InvalidConfig(String),
    UnknownLabel(String),
    /// A simulated state left the finite reals.
    NonFinite { path: usize, step: u64 },
    /// A field does not match itself across the seam of the fundamental cell.
    NonPeriodic {
        field: &'static str,
        axis: usize,
        jump: f64,
    },
    DriftNotZeroMean { axis: usize, mean: f64 },
    DriftDependsOnOwnAxis { axis: usize, variation: f64 },
    EmptySample,
    RateUnresolvable,
    Unresolvable { stderr: f64, tolerance: f64 },
    MissingMixingEstimate,
    MissingJacobian,
    MissingDelta,
    StencilTooCoarse { ratio: f64, error_estimate: f64 },
    NotPsd { min_eigenvalue: f64 },
    OutsideDomain,
    /// The killing rate `e` is not bounded above by a negative constant.
    KillingBound { max_e: f64 },
    NonPositiveTime(f64),
    NotZeroMean { what: &'static str, mean: f64 },
    MissingParabolicFields,
    GrowthEnvelope { value: f64, bound: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidTorus(msg) => write!(f, "invalid torus: {msg}"),
            Error::DimensionMismatch {
                what,
                expected,
                got,
            } => write!(f, "{what}: expected dimension {expected}, got {got}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::UnknownLabel(label) => write!(f, "unknown coefficient set `{label}`"),
            Error::NonFinite { path, step } => {
                write!(f, "non-finite state on path {path} at step {step}")
            }
            Error::NonPeriodic { field, axis, jump } => write!(
                f,
                "field `{field}` is not periodic along axis {axis} (seam jump {jump:e})"
            ),
            Error::DriftNotZeroMean { axis, mean } => {
                write!(f, "b_bar component {axis} has cell mean {mean:e}, expected 0")
            }
            Error::DriftDependsOnOwnAxis { axis, variation } => write!(
                f,
                "b_bar component {axis} varies by {variation:e} along its own axis"
            ),
            Error::EmptySample => write!(f, "no samples left after burn-in"),
            Error::RateUnresolvable => write!(f, "mixing rate unresolvable: all estimates below the noise floor"),
            Error::Unresolvable { stderr, tolerance } => write!(
                f,
                "estimate unresolvable: stderr {stderr:e} exceeds tolerance {tolerance:e}"
            ),
            Error::MissingMixingEstimate => write!(f, "a mixing-rate estimate is required"),
            Error::MissingJacobian => write!(f, "corrector jacobian has not been computed"),
            Error::MissingDelta => write!(f, "a scalar corrector for d is required"),
            Error::StencilTooCoarse {
                ratio,
                error_estimate,
            } => write!(
                f,
                "finite-difference stencil does not resolve the field (Richardson ratio {ratio:.3}, error estimate {error_estimate:e})"
            ),
            Error::NotPsd { min_eigenvalue } => {
                write!(f, "matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")
            }
            Error::OutsideDomain => write!(f, "starting point lies outside the domain"),
            Error::KillingBound { max_e } => write!(
                f,
                "killing rate must satisfy e <= -alpha < 0, but max e = {max_e:e}"
            ),
            Error::NonPositiveTime(t) => write!(f, "time must be positive, got {t}"),
            Error::NotZeroMean { what, mean } => {
                write!(f, "{what} must have zero invariant mean, got {mean:e}")
            }
            Error::MissingParabolicFields => {
                write!(f, "effective model lacks the parabolic drift/potential")
            }
            Error::GrowthEnvelope { value, bound } => write!(
                f,
                "|g| = {value:e} at a path endpoint exceeds the growth envelope {bound:e}"
            ),
        }
    }
}

impl core::error::Error for Error {}

impl Error {
    /// True for errors caused by the inputs (bad configuration, invalid
    /// coefficients or data) rather than by the numerics of a valid run.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidTorus(_)
                | Error::DimensionMismatch { .. }
                | Error::InvalidConfig(_)
                | Error::UnknownLabel(_)
                | Error::NonPeriodic { .. }
                | Error::DriftNotZeroMean { .. }
                | Error::DriftDependsOnOwnAxis { .. }
                | Error::MissingMixingEstimate
                | Error::MissingJacobian
                | Error::MissingDelta
                | Error::OutsideDomain
                | Error::KillingBound { .. }
                | Error::NonPositiveTime(_)
                | Error::NotZeroMean { .. }
                | Error::MissingParabolicFields
        )
    }
}
