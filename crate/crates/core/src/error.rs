//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input violated a structural or domain precondition.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Monotone partial likelihood: a coefficient ran away during iteration.
    #[error("separation detected for `{term}`: |coefficient| exceeded {bound}")]
    Separation { term: String, bound: f64 },

    #[error("singular information matrix in Newton step")]
    SingularHessian,

    #[error("{what} did not converge within {iterations} iterations")]
    NotConverged { what: String, iterations: usize },

    #[error("no {kind} events in the data")]
    NoEvents { kind: String },

    /// Target moments lie outside the convex hull of the source balance
    /// function values; no tilting parameter can match them.
    #[error("infeasible target moments for: {}", components.join(", "))]
    InfeasibleTarget { components: Vec<String> },

    #[error("balance design is rank deficient: {0}")]
    RankDeficient(String),

    #[error("weights were already truncated (threshold {threshold})")]
    AlreadyTruncated { threshold: f64 },

    #[error("weight shape mismatch: {0}")]
    WeightShapeMismatch(String),

    #[error("{failed} of {total} bootstrap resamples failed")]
    BootstrapFailure { failed: usize, total: usize },

    /// A pipeline stage failed; wraps the underlying error with a stage label.
    #[error("{stage}: {source}")]
    Pipeline {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    /// Attach a pipeline stage label.
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Pipeline { stage, source: Box::new(self) }
    }

    /// Unwrap pipeline wrappers down to the root cause.
    pub fn root(&self) -> &Error {
        match self {
            Error::Pipeline { source, .. } => source.root(),
            other => other,
        }
    }
}

/// Extension adding `.at_stage("label")` to results flowing through the pipeline.
pub(crate) trait StageExt<T> {
    fn at_stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn at_stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at_stage(stage))
    }
}
