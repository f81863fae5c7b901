use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed robot description: {0}")]
    Xml(String),
    #[error("joint `{joint}`: {reason}")]
    InvalidJoint { joint: String, reason: String },
    #[error("joint `{joint}` has unsupported kind `{kind}`")]
    UnsupportedJointKind { joint: String, kind: String },
    #[error("kinematic graph contains a cycle (link `{0}` is unreachable from the root)")]
    Cycle(String),
    #[error("kinematic graph has multiple roots: {0:?}")]
    MultipleRoots(Vec<String>),
    #[error("link `{link}` has more than one parent joint (`{first}`, `{second}`)")]
    MultipleParents {
        link: String,
        first: String,
        second: String,
    },
    #[error("unknown link `{0}`")]
    UnknownLink(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("{what}: expected length {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("unknown frame convention `{0}`")]
    UnknownConvention(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("under-constrained: {weighted} weighted points, at least {required} required")]
    UnderConstrained { weighted: usize, required: usize },
    #[error("points are collinear")]
    Collinear,
    #[error("non-finite value in {stage} at iteration {iteration}")]
    NonFinite { stage: &'static str, iteration: usize },
    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid motion file: {0}")]
    Motion(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of a numerical stage (divergence, non-finite values,
    /// degenerate geometry) as opposed to malformed input.
    pub fn is_numeric(&self) -> bool {
        if let Error::Stage { source, .. } = self {
            return source.is_numeric();
        }
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::Diverged { .. }
                | Error::Degenerate(_)
                | Error::Collinear
                | Error::UnderConstrained { .. }
        )
    }

    /// Wraps the error with the pipeline stage that produced it.
    pub fn at(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
