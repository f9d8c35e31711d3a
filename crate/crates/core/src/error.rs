use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

/// Errors raised by the scoring kernels.
#[derive(Debug, Clone, PartialEq)]
#[non_exhaustive]
pub enum Error {
    /// A split with zero samples was passed where at least one is required.
    EmptySplit,
    /// A labeled operation met the `-1` unlabeled sentinel.
    UnlabeledData,
    LabelOutOfRange { label: i64, classes: usize },
    /// Temperature must be strictly positive and finite.
    InvalidTemperature(f64),
    NonFinite(&'static str),
    /// One side of a detection task has no samples.
    EmptyClass,
    /// Reference performance is zero, so a ratio score is undefined.
    DegeneratePerformance,
    EceOutOfRange { ece: f64, max: f64 },
    EmptyList,
    WeightError { sum: f64 },
    ShapeMismatch { what: &'static str, expected: usize, found: usize },
    ZeroVariance,
    LengthMismatch { left: usize, right: usize },
    EmptyTable,
    DuplicateModel(String),
    MissingGroup(String),
    PoolTooSmall { pool: usize, k: usize },
    /// ODIN needs input gradients, which a logits-only run cannot provide.
    NoGradientOracle,
    InvalidConfig(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptySplit => f.write_str("split has no samples"),
            Error::UnlabeledData => f.write_str("split contains unlabeled samples (label -1)"),
            Error::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} outside [-1, {}]", *classes as i64 - 1)
            }
            Error::InvalidTemperature(t) => write!(f, "temperature must be positive and finite, got {t}"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::EmptyClass => f.write_str("AUROC needs at least one ID and one OOD score"),
            Error::DegeneratePerformance => f.write_str("in-distribution performance is zero"),
            Error::EceOutOfRange { ece, max } => write!(f, "ECE {ece} exceeds ECE_max {max}"),
            Error::EmptyList => f.write_str("empty list"),
            Error::WeightError { sum } => write!(f, "weights must be nonnegative and sum to 1 (sum = {sum})"),
            Error::ShapeMismatch { what, expected, found } => {
                write!(f, "shape mismatch in {what}: expected {expected}, found {found}")
            }
            Error::ZeroVariance => f.write_str("zero variance"),
            Error::LengthMismatch { left, right } => write!(f, "length mismatch: {left} vs {right}"),
            Error::EmptyTable => f.write_str("metric table has no rows"),
            Error::DuplicateModel(id) => write!(f, "duplicate model id `{id}`"),
            Error::MissingGroup(g) => write!(f, "group `{g}` not present"),
            Error::PoolTooSmall { pool, k } => write!(f, "pool of {pool} models cannot form ensembles of {k}"),
            Error::NoGradientOracle => f.write_str("ODIN requires a gradient-capable model and raw inputs"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
