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

    #[error("record {index}: field `{field}`: {message}")]
    Record {
        index: usize,
        field: String,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("template set mismatch: {0}")]
    Templates(String),

    #[error("relations {first:?} and {second:?} have identical token sequences")]
    AmbiguousTemplates { first: String, second: String },

    #[error("unknown relation {0:?}")]
    UnknownRelation(String),

    #[error("allowed relation set is empty")]
    EmptyAllowedSet,

    #[error("scheme `{scheme}` needs entity types, but instance {id:?} has none")]
    SchemeInapplicable { scheme: String, id: String },

    #[error("sibling probabilities sum to zero at trie node {node} (prefix {prefix:?})")]
    DegenerateDistribution { node: usize, prefix: Vec<u32> },

    #[error("backend lacks capability `{0}`")]
    Capability(&'static str),

    #[error("backend error at prefix {prefix:?}: {message}")]
    Backend { prefix: Vec<u32>, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("instance {id:?}: {source}")]
    Instance {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("length mismatch: {predictions} predictions vs {golds} gold labels")]
    LengthMismatch { predictions: usize, golds: usize },

    #[error("cannot parse directed label {0:?}")]
    InvalidLabel(String),

    #[error("development set is empty")]
    EmptyDevSet,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn for_instance(self, id: &str) -> Self {
        Error::Instance {
            id: id.to_string(),
            source: Box::new(self),
        }
    }

    /// True for failures that originate in a scorer backend or its wire protocol.
    pub fn is_backend(&self) -> bool {
        match self {
            Error::Backend { .. } | Error::Protocol(_) | Error::Capability(_) => true,
            Error::Instance { source, .. } => source.is_backend(),
            _ => false,
        }
    }
}
