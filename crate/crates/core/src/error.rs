use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("export contains no messages")]
    EmptyExport,
    #[error("empty sender label")]
    EmptySenderLabel,
    #[error("no message files found under {0}")]
    MissingMessageFile(PathBuf),
    #[error("donation {0} has no donation date and no records to derive one from")]
    MissingDonationDate(String),
    #[error("sample is empty")]
    EmptySample,
    #[error("response time must be at least one minute, got {0}")]
    InvalidResponseTime(u64),
    #[error("series is empty")]
    EmptySeries,
    #[error("design matrix is singular: predictor has no variance")]
    SingularDesign,
    #[error("need at least 2 groups, found {0}")]
    TooFewGroups(usize),
    #[error("need at least {needed} observations, found {found}")]
    TooFewObservations { needed: usize, found: usize },
    #[error("optimizer did not converge: {0}")]
    NonConvergence(String),
    #[error("no month-chat has at least {0} records per side")]
    NoQualifyingMonths(usize),
    #[error("input corpus is empty")]
    EmptyCorpus,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}
