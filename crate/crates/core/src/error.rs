use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot split domain '{domain}': it has {count} record(s), need at least 2")]
    Split { domain: String, count: usize },

    #[error("link domain violated: b*x + c = {arg} <= 0 for rating {rating}")]
    LinkDomain { rating: f64, arg: f64 },

    #[error("non-finite value in objective term '{term}'")]
    NonFinite { term: &'static str },

    #[error("linear algebra failure: {0}")]
    Numeric(String),

    #[error("unknown domain '{0}'")]
    UnknownDomain(String),

    #[error("model format: {0}")]
    Format(String),

    #[error(
        "training diverged at sweep {sweep}: non-finite objective term '{term}' (last finite state retained)"
    )]
    Diverged {
        sweep: usize,
        term: &'static str,
        last_state: Box<crate::model::ModelState>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
