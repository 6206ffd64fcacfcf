use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad error family, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorFamily {
    Config,
    Infeasible,
    IllPosed,
    Numerical,
    Data,
    Io,
    Validation,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("eliminated block is numerically singular (condition number {cond:.3e})")]
    SingularBlock { cond: f64 },
    #[error("matrix is numerically singular: {0}")]
    SingularMatrix(String),
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:.3e})")]
    NotPsd { min_eig: f64 },
    #[error("information matrix is not positive definite")]
    SingularInfo,
    #[error("regressors are rank deficient (rank {rank} of {needed}); input is not persistently exciting")]
    RankDeficient { rank: usize, needed: usize },
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("no disturbance energy in any trajectory")]
    ZeroDisturbance,
    #[error("assignment is missing variable `{0}`")]
    MissingVariable(String),
    #[error("program is infeasible")]
    Infeasible,
    #[error("numerical failure in conic solver: {0}")]
    NumericalFailure(String),
    #[error("no hyperparameter grid point was feasible ({points} points tried)")]
    AllInfeasible { points: usize },
    #[error("gain-scheduled law is ill-posed: {0}")]
    IllPosed(String),
    #[error("analysis certification disagrees with synthesis: {0}")]
    CertificationFailed(String),
    #[error("quadratic performance violated: {0}")]
    PerformanceViolation(String),
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("stage `{stage}` requires missing artifact {artifact}")]
    MissingArtifact { stage: String, artifact: String },
    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { field: field.into(), message: message.into() }
    }

    /// Wraps `self` with a pipeline stage label.
    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage: stage.to_string(), source: Box::new(e) },
        }
    }

    pub fn stage(&self) -> Option<&str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }

    /// The innermost error, with stage labels stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn family(&self) -> ErrorFamily {
        match self.root() {
            Error::Config { .. } => ErrorFamily::Config,
            Error::Infeasible | Error::AllInfeasible { .. } => ErrorFamily::Infeasible,
            Error::IllPosed(_) => ErrorFamily::IllPosed,
            Error::RankDeficient { .. } | Error::ZeroDisturbance => ErrorFamily::Data,
            Error::CertificationFailed(_) | Error::PerformanceViolation(_) => ErrorFamily::Validation,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::MissingArtifact { .. } => ErrorFamily::Io,
            _ => ErrorFamily::Numerical,
        }
    }
}
