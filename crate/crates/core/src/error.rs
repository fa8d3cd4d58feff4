use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the search pipeline.
///
/// The CLI maps the variants onto process exit codes through
/// [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("numeric domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("incomplete latency table: missing {missing:?}")]
    IncompleteTable { missing: Vec<(usize, u8, u8, f64)> },

    #[error("latency table not monotone: {0}")]
    NonMonotone(String),

    #[error("format error at byte offset {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("search diverged at step {step} (last good step {last_good_step}){}", checkpoint_note(.checkpoint))]
    Diverged {
        step: usize,
        last_good_step: usize,
        checkpoint: Option<PathBuf>,
    },

    #[error("{0}")]
    Empty(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn checkpoint_note(path: &Option<PathBuf>) -> String {
    match path {
        Some(p) => format!("; last good checkpoint at {}", p.display()),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line driver: 2 for configuration
    /// and input problems, 3 for numeric failures, 4 for infeasibility.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite { .. } | Error::Domain(_) | Error::Diverged { .. } => 3,
            Error::Infeasible(_) => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
