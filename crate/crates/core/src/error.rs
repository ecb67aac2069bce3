use thiserror::Error;

use crate::model::ModelParams;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("signal of {len} samples is shorter than one {window}-sample window")]
    EmptySignal { len: usize, window: usize },
    #[error("unsupported audio: {0}")]
    UnsupportedRate(String),
    #[error("invalid Mel band edges: {0}")]
    BadBandEdges(String),
    #[error("cannot keep {keep} cepstral coefficients from {bands} bands")]
    BadOrder { keep: usize, bands: usize },
    #[error("cannot compute SNR: {0}")]
    CannotComputeSnr(String),
    #[error("noise pool has {pool} clips but {needed} are drawn per utterance")]
    PoolTooSmall { pool: usize, needed: usize },
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("invalid layer spec: {0}")]
    Spec(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("backward called without a matching forward cache")]
    StaleCache,
    #[error("partition error: {0}")]
    Partition(String),
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged {
        epoch: usize,
        last_finite: Box<ModelParams>,
    },
    #[error("metric error: {0}")]
    Metric(String),
    #[error("probe error: {0}")]
    Probe(String),
    #[error("inter-cluster inertia is zero; rho is infinite")]
    InfiniteRho,
    #[error("LDA error: {0}")]
    Lda(String),
    #[error("missing required config key `{0}`")]
    MissingKey(String),
    #[error("config error: key `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptySignal { .. } => "EmptySignal",
            Error::UnsupportedRate(_) => "UnsupportedRate",
            Error::BadBandEdges(_) => "BadBandEdges",
            Error::BadOrder { .. } => "BadOrder",
            Error::CannotComputeSnr(_) => "CannotComputeSNR",
            Error::PoolTooSmall { .. } => "PoolTooSmall",
            Error::Geometry(_) => "GeometryError",
            Error::Spec(_) => "SpecError",
            Error::Shape(_) => "ShapeError",
            Error::StaleCache => "StaleCache",
            Error::Partition(_) => "PartitionError",
            Error::Diverged { .. } => "DivergedError",
            Error::Metric(_) => "MetricError",
            Error::Probe(_) => "ProbeError",
            Error::InfiniteRho => "InfiniteRho",
            Error::Lda(_) => "LDAError",
            Error::MissingKey(_) => "MissingKey",
            Error::Config { .. } => "ConfigError",
            Error::Format(_) => "FormatError",
            Error::Io(_) => "IoError",
            Error::Wav(_) => "WavError",
            Error::Csv(_) => "CsvError",
        }
    }

    pub(crate) fn config(key: &str, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.to_string(),
            message: message.into(),
        }
    }
}
