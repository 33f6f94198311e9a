use ddup_core::synth::SynthError;
use ddup_core::{DeciderError, ImageError, IvfError, KMeansError, PcaError, VectorError};
use thiserror::Error;

use crate::snapshot::SnapshotError;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown product id `{0}`")]
    UnknownId(String),
    #[error("index has not been built")]
    IndexNotBuilt,
    #[error("no decider model loaded")]
    NoDecider,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid vector: {0}")]
    InvalidVector(String),
    #[error("index: {0}")]
    Ivf(#[from] IvfError),
    #[error("k-means: {0}")]
    KMeans(#[from] KMeansError),
    #[error("pca: {0}")]
    Pca(#[from] PcaError),
    #[error("decider: {0}")]
    Decider(#[from] DeciderError),
    #[error("vector: {0}")]
    Vector(#[from] VectorError),
    #[error("synthetic data: {0}")]
    Synth(#[from] SynthError),
    #[error("image: {0}")]
    Image(#[from] ImageError),
    #[error("snapshot: {0}")]
    Snapshot(#[from] SnapshotError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownId(_) => "unknown_id",
            ServiceError::IndexNotBuilt => "index_not_built",
            ServiceError::NoDecider => "no_decider",
            ServiceError::InvalidRequest(_) => "invalid_request",
            ServiceError::InvalidVector(_) | ServiceError::Ivf(IvfError::DimensionMismatch { .. }) | ServiceError::Vector(_) => "invalid_vector",
            ServiceError::Ivf(IvfError::InvalidNprobe { .. } | IvfError::ZeroTopN) => "invalid_request",
            ServiceError::Ivf(_) => "index_error",
            ServiceError::KMeans(_) => "index_error",
            ServiceError::Pca(_) => "pca_error",
            ServiceError::Decider(DeciderError::InvalidThreshold(_)) => "invalid_request",
            ServiceError::Decider(_) => "decider_error",
            ServiceError::Synth(_) => "invalid_request",
            ServiceError::Image(_) => "image_error",
            ServiceError::Snapshot(_) => "snapshot_error",
            ServiceError::Io(_) => "io_error",
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        ServiceError::InvalidRequest(msg.into())
    }
}
