use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("coordinates contain non-finite values")]
    NonFinite,
    #[error("configuration is rank deficient (singular value ratio {ratio:.3e} below tolerance {tol:.3e})")]
    RankDeficient { ratio: f64, tol: f64 },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("closed-form distance requires d = 2 (got d = {0})")]
    DimensionError(usize),
    #[error("matrix is not positive semi-definite (min eigenvalue {min:.3e}, max eigenvalue {max:.3e})")]
    NotPsd { min: f64, max: f64 },
    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("tangent vector is anchored at a different base point")]
    ForeignTangent,
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("time {t} outside the curve domain [{start}, {end}]")]
    OutOfDomain { t: f64, start: f64, end: f64 },
    #[error("linear system is singular")]
    SingularSystem,
    #[error("sequence is empty")]
    EmptySequence,
    #[error("brute-force enumeration too large ({0} cells, limit 36)")]
    TooLarge(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("pair ({i}, {j}): {source}")]
    Pair {
        i: usize,
        j: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("class {0:?} has no training samples")]
    DegenerateClass(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("leave-one-actor-out requires subject ids on every trajectory (missing at index {0})")]
    MissingSubjectIds(usize),
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("wrong joint count: expected {expected}, got {got}")]
    WrongJointCount { expected: usize, got: usize },
    #[error("ragged rows: {0}")]
    RaggedRows(String),
    #[error("non-contiguous joints in frame {frame}: {detail}")]
    NonContiguousJoints { frame: f64, detail: String },
    #[error("all frames were dropped by cleaning")]
    AllFramesDropped,
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
    #[error("{0} file(s) failed to load: {1}")]
    Dataset(usize, String),
    #[error("malformed model file: {0}")]
    MalformedModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether this error stems from bad input data, as opposed to a numeric failure.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::RankDeficient { .. }
            | Error::NotPsd { .. }
            | Error::NotSymmetric(_)
            | Error::SingularSystem
            | Error::ForeignTangent => false,
            Error::Pair { source, .. } => source.is_data_error(),
            _ => true,
        }
    }

    pub(crate) fn in_file(self, path: impl Into<PathBuf>) -> Error {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
