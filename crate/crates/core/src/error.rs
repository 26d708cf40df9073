use thiserror::Error;

/// Errors produced anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("degenerate parameters: {0}")]
    DegenerateParameters(String),

    #[error(
        "integration became unstable at observation step {step} (t = {time}); \
         try a larger number of substeps (currently {substeps})"
    )]
    Instability {
        step: usize,
        time: f64,
        substeps: usize,
    },

    #[error("Gram matrix is not positive definite after ridge: pivot {index} = {pivot:e}")]
    Conditioning { index: usize, pivot: f64 },

    #[error("reference row has zero norm (sample {sample}, compartment {compartment})")]
    SingularReference { sample: usize, compartment: usize },

    #[error("no eradication within the horizon for any switching time")]
    NoEradication,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by user input rather than by the numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self.root(),
            Error::Config(_) | Error::Json(_) | Error::Domain(_) | Error::DegenerateParameters(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
