//! Error type shared across the engine.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape list is empty, has a zero extent, or does not match the data length.
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    /// Two tensors that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Empty or inverted numeric range.
    #[error("invalid range: {0}")]
    InvalidRange(String),

    /// Layer geometry produces an output extent < 1 or channels disagree.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Configuration value outside its legal domain.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Class label outside the declared range.
    #[error("label error: {0}")]
    Label(String),

    /// An operation that needs at least one element received none.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Descriptor aggregation hit a zero mean vector.
    #[error("degenerate descriptor: mean vector has zero norm")]
    DegenerateDescriptor,

    /// Training set does not contain both classes.
    #[error("degenerate training set: {0}")]
    DegenerateTraining(String),

    /// A class has fewer members than the number of folds.
    #[error("stratification error: {0}")]
    Stratification(String),

    /// Not enough samples for the requested analysis.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Malformed file contents (magic bytes, manifest rows, image headers).
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
