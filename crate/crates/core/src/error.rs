use thiserror::Error;
use tqr_tensor::TensorError;

#[derive(Debug, Error)]
pub enum TqrError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown {kind} id {id}")]
    UnknownId { kind: &'static str, id: u32 },
    #[error("unknown {kind} `{name}`")]
    UnknownName { kind: &'static str, name: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("embedding store is frozen")]
    Frozen,
    #[error("cannot generate {qtype}: {msg}")]
    Unsatisfiable { qtype: String, msg: String },
    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },
    #[error("id-space mismatch: {0}")]
    IdSpace(String),
    #[error("inconsistent model variant: {0}")]
    Variant(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = TqrError> = std::result::Result<T, E>;

impl TqrError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        TqrError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        TqrError::InvalidArgument(msg.into())
    }
}
