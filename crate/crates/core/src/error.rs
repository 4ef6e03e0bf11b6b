use std::path::PathBuf;

use thiserror::Error;

/// Broad failure category; the CLI maps these onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    EmptyData,
    Numeric,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    FileUnreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema version mismatch: {0}")]
    SchemaVersionMismatch(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dataset is empty after {stage}")]
    EmptyDataset { stage: String },
    #[error("need at least two vessels to split, found {0}")]
    FewerThanTwoVessels(usize),
    #[error("standard deviation is zero along {axis}")]
    DegenerateSpread { axis: &'static str },
    #[error("heading unavailable (511)")]
    HeadingUnavailable,
    #[error("{points} points cannot support {components} components")]
    TooFewPoints { points: usize, components: usize },
    #[error("mixture component {component} collapsed")]
    DegenerateFit { component: usize },
    #[error("no candidate component count could be fitted")]
    NoCandidateFitted,
    #[error("models use different standardization transforms")]
    MismatchedTransforms,
    #[error("every Monte Carlo rerun produced an infinite distance")]
    AllRerunsInfinite,
    #[error("every tuning trial failed")]
    AllTrialsFailed,
    #[error("baseline clustering found no clusters")]
    NoClusters,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("no tuned parameters available")]
    MissingTuning,
    #[error("invalid synthetic port: {0}")]
    InvalidSpec(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidSpec(_) | Error::MissingTuning => ErrorKind::Config,
            Error::EmptyDataset { .. }
            | Error::FewerThanTwoVessels(_)
            | Error::EmptyCloud
            | Error::NoClusters
            | Error::TooFewPoints { .. }
            | Error::AllTrialsFailed => ErrorKind::EmptyData,
            Error::DegenerateSpread { .. }
            | Error::DegenerateFit { .. }
            | Error::NoCandidateFitted
            | Error::MismatchedTransforms
            | Error::AllRerunsInfinite
            | Error::HeadingUnavailable => ErrorKind::Numeric,
            Error::FileUnreadable { .. }
            | Error::Io(_)
            | Error::SchemaVersionMismatch(_)
            | Error::InvalidInput(_) => ErrorKind::Io,
        }
    }

    pub(crate) fn empty(stage: impl Into<String>) -> Self {
        Error::EmptyDataset {
            stage: stage.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
