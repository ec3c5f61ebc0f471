use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// The MDP (or data derived from it) is malformed.
    #[error("invalid model: {0}")]
    Model(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("singular matrix in {context}; null direction {direction:?}")]
    Singular { context: String, direction: Vec<f64> },

    #[error("design atoms do not span R^{dim} (rank {rank}); use a positive ridge")]
    Span { dim: usize, rank: usize },

    #[error("estimation failed at layer {layer}: {reason}")]
    Estimation { layer: usize, reason: String },

    #[error(
        "exploration objective infeasible at layer {layer}: best lambda_min {best_lambda_min:.3e} < threshold {threshold:.3e}"
    )]
    Infeasible {
        layer: usize,
        best_lambda_min: f64,
        threshold: f64,
    },

    #[error("size limit exceeded: {0}")]
    Size(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn model(msg: impl Into<String>) -> Self {
        Error::Model(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Infeasible { .. } => 2,
            _ => 1,
        }
    }
}
