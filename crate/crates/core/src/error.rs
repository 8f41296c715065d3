use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite drift")]
    NonFiniteDrift,

    #[error("non-finite state at particle {index}")]
    NonFiniteState { index: usize },

    #[error("at t = {time}: {source}")]
    AtTime {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("not PSD: minimum eigenvalue {min_eigenvalue:e} below tolerance {tolerance:e}")]
    NotPsd { min_eigenvalue: f64, tolerance: f64 },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("degenerate regression: {0}")]
    DegenerateRegression(String),

    #[error(
        "Q2 numerically singular (eigenvalue {min_eigenvalue:e} < floor {floor:e}); \
         the slow diffusion must be uniformly non-degenerate"
    )]
    SingularDiffusion { min_eigenvalue: f64, floor: f64 },

    #[error("control not admissible: integral of |h|^2 is {value}, bound is {bound}")]
    Inadmissible { value: f64, bound: f64 },

    #[error("invariant-measure solver did not converge (best residual {residual})")]
    NotConverged { residual: f64 },

    #[error("replay mismatch in {file}: {detail}")]
    ReplayMismatch { file: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at(self, time: f64) -> Self {
        match self {
            e @ Error::AtTime { .. } => e,
            e => Error::AtTime {
                time,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Strips [`Error::AtTime`] wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtTime { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for errors that come from bad input rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self.root(),
            Error::Config(_) | Error::DimensionMismatch { .. } | Error::EmptyEnsemble | Error::Json(_)
        )
    }
}
