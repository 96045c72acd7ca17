use std::path::PathBuf;

/// Errors produced anywhere in the reconstruction pipeline.
#[derive(Debug, thiserror::Error)]
pub enum QpatError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Coefficients outside the admissible box `0 <= mu <= mu_max`, `0 <= sigma <= sigma_max`.
    #[error("inadmissible coefficients: {0}")]
    Domain(String),

    #[error("assembly failed: {0}")]
    Assembly(String),

    /// Iterative solve did not reach the requested tolerance.
    #[error("linear solve failed after {iterations} iterations (relative residual {residual:.3e}): {context}")]
    Solver {
        context: String,
        iterations: usize,
        residual: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("config {path}:{line}: {message}")]
    ConfigLine {
        path: String,
        line: usize,
        message: String,
    },

    #[error("data integrity: {0}")]
    Integrity(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = QpatError> = std::result::Result<T, E>;

impl QpatError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        QpatError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            QpatError::InvalidArgument(_) | QpatError::Config(_) | QpatError::ConfigLine { .. } => 1,
            QpatError::Integrity(_) | QpatError::Io { .. } => 2,
            QpatError::Domain(_)
            | QpatError::Assembly(_)
            | QpatError::Solver { .. }
            | QpatError::Numerical(_) => 3,
        }
    }
}

macro_rules! ensure_arg {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err($crate::error::QpatError::InvalidArgument(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure_arg;
