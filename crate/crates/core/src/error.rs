use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure at iteration {iteration}{}: {reason}", run.map(|r| format!(" of run {r}")).unwrap_or_default())]
    Numerical {
        iteration: u64,
        run: Option<usize>,
        reason: String,
    },

    #[error("linear solve failed at iteration {iteration}: {reason}")]
    LinearSolve { iteration: u64, reason: String },

    #[error("sign moment failed at entry ({i}, {j}): {source}")]
    Moment {
        i: usize,
        j: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Input(String),

    #[error("plot rendering failed: {0}")]
    Plot(String),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Input(_) => 2,
            _ => 3,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
