use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown set `{0}`")]
    UnknownSet(String),

    #[error("malformed set definition: {0}")]
    MalformedSet(String),

    #[error("invalid set: {0}")]
    InvalidSet(String),

    #[error("vertex {0} cannot be placed in any complete orthogonal basis")]
    UncoveredVertex(usize),

    #[error("missing value for edge {0}-{1}")]
    MissingEdge(usize, usize),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("vector {index} is not unit-normalized (norm {norm})")]
    NotNormalized { index: usize, norm: f64 },

    #[error("matrix is not Hermitian (max asymmetry {0:e})")]
    NotHermitian(f64),

    #[error("invalid noise parameters: {0}")]
    InvalidNoise(String),

    #[error("SDP solver failed for pair {pair:?} at witness {witness}: {status}")]
    Solver {
        pair: Option<(usize, usize)>,
        witness: f64,
        status: String,
    },

    #[error("optimizer did not converge (best residual {0:e})")]
    NoConvergence(f64),

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
    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
