use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{source_name}: {message}")]
    Parse { source_name: String, message: String },

    #[error("edge {edge} references node index {index}, but the graph has {node_count} nodes")]
    NodeOutOfRange {
        edge: usize,
        index: usize,
        node_count: usize,
    },

    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),

    #[error("edge {0} is a self-loop")]
    SelfLoop(usize),

    #[error("node `{0}` is isolated (zero degree); the normalized Laplacian is undefined")]
    IsolatedNode(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("Gram-Schmidt breakdown at column {column}: residual norm {norm:e} after projection")]
    Breakdown { column: usize, norm: f64 },

    #[error("degenerate operator: {0}")]
    DegenerateOperator(String),

    #[error("ill-conditioned sampling matrix: sigma_min {sigma_min:e} < 1e-10 * sigma_max ({sigma_max:e})")]
    IllConditioned { sigma_min: f64, sigma_max: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn parse(source_name: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            message: message.into(),
        }
    }

    /// True for failures of the numerics rather than of the input files.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Breakdown { .. }
                | Error::DegenerateOperator(_)
                | Error::IllConditioned { .. }
                | Error::NonFinite(_)
                | Error::Degenerate(_)
        )
    }
}
