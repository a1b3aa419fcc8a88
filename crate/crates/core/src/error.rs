use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
///
/// Variants are grouped so the command line can map them onto exit codes:
/// validation problems, backend failures and I/O failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("missing template for relation `{0}`")]
    MissingTemplate(String),

    #[error("negative sampling exhausted for ({head}, {relation}, {tail}) after {attempts} draws")]
    NegativesExhausted {
        head: String,
        relation: String,
        tail: String,
        attempts: usize,
    },

    #[error("unknown fact id `{0}`")]
    UnknownId(String),

    #[error("{count} fact ids not covered: {preview}")]
    Coverage { count: usize, preview: String },

    #[error("AUC undefined: scores need both a positive and a negative label")]
    AucUndefined,

    #[error("backend: {0}")]
    Backend(String),

    #[error("probe run failed: {failed} of {total} records are backend errors")]
    ProbeRunFailed { failed: usize, total: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn coverage(missing: &[String]) -> Self {
        let mut preview = missing.iter().take(5).cloned().collect::<Vec<_>>().join(", ");
        if missing.len() > 5 {
            preview.push_str(", ...");
        }
        Error::Coverage {
            count: missing.len(),
            preview,
        }
    }

    /// Process exit code for this error: 1 validation, 2 backend, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Backend(_) | Error::ProbeRunFailed { .. } => 2,
            Error::Io { .. } => 3,
            _ => 1,
        }
    }
}
