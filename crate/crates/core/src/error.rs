use thiserror::Error;

pub type Result<T> = std::result::Result<T, NoradError>;

#[derive(Debug, Error)]
pub enum NoradError {
    #[error("dimension error: {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("capacity error: {0}")]
    Capacity(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("compatibility error: {0}")]
    Compatibility(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl NoradError {
    pub fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        NoradError::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        NoradError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
