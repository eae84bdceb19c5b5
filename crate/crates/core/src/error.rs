use std::path::PathBuf;

/// Everything that can go wrong inside the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("all points are identical; the median heuristic has no scale to work with")]
    AllPointsIdentical,

    #[error("the {quantile} quantile of pairwise squared distances is zero")]
    DegenerateQuantile { quantile: f64 },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("factorization failed in {context} even after jitter")]
    FactorizationFailed { context: &'static str },

    #[error("hat matrix diagonal is degenerate at lambda = {lambda:e}")]
    DegenerateDiagonal { lambda: f64 },

    #[error("matrix is not symmetric (max asymmetry {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },

    #[error("need at least {needed} samples, got {found}")]
    TooFewSamples { needed: usize, found: usize },

    #[error("treatment bridge needs at least 2 second-stage samples, got {0}")]
    TooFewStage2Samples(usize),

    #[error("bridge system is singular for this world; regenerate with the next seed")]
    SingularBridgeSystem,

    #[error("dose grid does not match truth grid")]
    GridMismatch,

    #[error("treatment is multi-dimensional; supply an explicit dose grid")]
    MultiDimTreatmentNeedsExplicitGrid,

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-numeric cell at row {row}, column `{column}`")]
    NonNumericCell { row: usize, column: String },

    #[error("file has no data rows")]
    EmptyFile,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures that come from the numerics rather than the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::AllPointsIdentical
                | Error::DegenerateQuantile { .. }
                | Error::FactorizationFailed { .. }
                | Error::DegenerateDiagonal { .. }
                | Error::NotSymmetric { .. }
                | Error::SingularBridgeSystem
        )
    }

    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::InvalidArgument(_)
                | Error::InvalidKernel(_)
                | Error::MissingColumn(_)
                | Error::NonNumericCell { .. }
                | Error::EmptyFile
                | Error::TooFewSamples { .. }
                | Error::TooFewStage2Samples(_)
                | Error::MultiDimTreatmentNeedsExplicitGrid
                | Error::GridMismatch
                | Error::DimensionMismatch { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
