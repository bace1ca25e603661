//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Two points that must be distinct coincide (zero-length direction).
    #[error("coincident points: {0}")]
    CoincidentPoints(&'static str),

    /// Rotation matrix fails the orthogonality / right-handedness checks.
    #[error("invalid rotation matrix: {0}")]
    InvalidRotation(String),

    /// Geometry puts the problem on a singular configuration (e.g. UE on the
    /// RIS pole axis, where the azimuth derivative is undefined).
    #[error("singular geometry: {0}")]
    SingularGeometry(&'static str),

    /// Matrix/vector dimensions do not agree with the configuration.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A configuration value violates its invariant.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Candidate-AoD grid is empty after removing invalid bins.
    #[error("empty AoD grid after removing bins outside the unit disk")]
    EmptyGrid,

    /// The UE (or a beam target) lies behind the RIS plane.
    #[error("target behind RIS plane (cos(alpha) = {0:.4})")]
    BehindRis(f64),

    /// FIM inversion refused: singular or ill-conditioned matrix.
    #[error("singular FIM (condition number {0:.3e})")]
    SingularFim(f64),

    /// A small linear system has (numerically) dependent rows.
    #[error("singular linear system: {0}")]
    SingularSystem(&'static str),

    /// Scalar minimization found no interior minimum.
    #[error("no minimum found: {0}")]
    NoMinimum(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
