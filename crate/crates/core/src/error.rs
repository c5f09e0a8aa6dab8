use std::fmt;

use thiserror::Error;

/// Pipeline stage a failure originated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Split,
    Lasso,
    Linearize,
    ThetaFit,
    PiFit,
    Statistic,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Split => "split",
            Stage::Lasso => "lasso",
            Stage::Linearize => "linearize",
            Stage::ThetaFit => "theta-fit",
            Stage::PiFit => "pi-fit",
            Stage::Statistic => "statistic",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("matrix is not positive definite (pivot {index} = {pivot:e})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("degenerate normalization: {0}")]
    DegenerateNormalization(String),

    #[error("{stage} stage failed: {source}")]
    AtStage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn at(self, stage: Stage) -> Error {
        Error::AtStage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping stage labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStage { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::AtStage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(self.root(), Error::Infeasible)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
