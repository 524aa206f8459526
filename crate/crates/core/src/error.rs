use thiserror::Error;

/// Errors surfaced by the scene generator and its training machinery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("simulation diverged at step {step} (body {body})")]
    SimulationDiverged { body: usize, step: u64 },

    #[error("unknown body id {0}")]
    UnknownBody(usize),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid region change: {0}")]
    InvalidChange(String),

    #[error("invalid region: {0}")]
    InvalidRegion(String),

    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("attempt history is full ({0} slots)")]
    HistoryFull(usize),

    #[error("non-finite observation component at index {0}")]
    NonFiniteObservation(usize),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("episode already finished")]
    EpisodeDone,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Stable snake_case name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::SimulationDiverged { .. } => "simulation_diverged",
            Error::UnknownBody(_) => "unknown_body",
            Error::InvalidShape(_) => "invalid_shape",
            Error::InvalidChange(_) => "invalid_change",
            Error::InvalidRegion(_) => "invalid_region",
            Error::Parse { .. } => "parse",
            Error::SchemaVersion { .. } => "schema_version",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::Domain(_) => "domain",
            Error::HistoryFull(_) => "history_full",
            Error::NonFiniteObservation(_) => "non_finite_observation",
            Error::LengthMismatch(_) => "length_mismatch",
            Error::NonFiniteLoss(_) => "non_finite_loss",
            Error::InvalidConfig(_) => "invalid_config",
            Error::EpisodeDone => "episode_done",
            Error::EmptyDataset => "empty_dataset",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn parse(err: serde_path_to_error::Error<serde_json::Error>) -> Self {
        let path = err.path().to_string();
        Error::Parse {
            path,
            message: err.into_inner().to_string(),
        }
    }
}
