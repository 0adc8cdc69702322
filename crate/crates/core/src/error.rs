use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::diff::DiffError;

#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    DimensionMismatch { expected: usize, got: usize },
    /// `log` requested between (nearly) antipodal points.
    CutLocus,
    OffManifold(String),
    PointOutsideChart,
    /// Gradient of the Lyapunov function is undefined at the point.
    DegeneratePoint,
    NonFinite(String),
    InvalidConfig(String),
    /// Demonstrations that do not share the goal, with each demo's distance.
    GoalMismatch(Vec<f64>),
    InvalidDataset(String),
    Diff(DiffError),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Error::CutLocus => f.write_str("point lies in the cut locus of the base point"),
            Error::OffManifold(msg) => write!(f, "point is off the manifold: {msg}"),
            Error::PointOutsideChart => f.write_str("point left the chart domain"),
            Error::DegeneratePoint => f.write_str("Lyapunov gradient is degenerate at this point"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::GoalMismatch(d) => write!(f, "demonstrations do not share a goal; distances to the first goal: {d:?}"),
            Error::InvalidDataset(msg) => write!(f, "invalid dataset: {msg}"),
            Error::Diff(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for Error {}

impl From<DiffError> for Error {
    fn from(e: DiffError) -> Self {
        Error::Diff(e)
    }
}

pub type Result<T> = core::result::Result<T, Error>;
