// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
///
/// Display strings start with the variant name so that operators (and the
/// CLI's violation lists) can grep for them.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("IoFailure: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("EmptyStore: an activation store needs at least one record")]
    EmptyStore,
    #[error("DimensionMismatch: {0}")]
    DimensionMismatch(String),
    #[error("DuplicateRecordId: {0}")]
    DuplicateRecordId(String),
    #[error("BadMagic: expected \"ACTS\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("VersionUnsupported: {0}")]
    VersionUnsupported(u16),
    #[error("CorruptManifest: {0}")]
    CorruptManifest(String),
    #[error("TruncatedBlob: {0}")]
    TruncatedBlob(String),
    #[error("InvalidRecord: {record_id}: {reason}")]
    InvalidRecord { record_id: String, reason: String },
    #[error("UnpairedRecord: task {0} has a fit record without its opposite")]
    UnpairedRecord(String),
    #[error("AmbiguousPairing: task {0} has more than one incorrect fit record")]
    AmbiguousPairing(String),
    #[error("InvalidDataset: {0}")]
    InvalidDataset(String),
    #[error("EmptyField: {0}")]
    EmptyField(&'static str),
    #[error("InvalidTemplate: {0}")]
    InvalidTemplate(String),
    #[error("TooFewPairs: need at least {needed}, got {got}")]
    TooFewPairs { needed: usize, got: usize },
    #[error("DegenerateFit: {0}")]
    DegenerateFit(String),
    #[error("NonFinite: {0}")]
    NonFinite(String),
    #[error("FitFailed: every layer is degenerate")]
    FitFailed,
    #[error("UnusableLayer: {0}")]
    UnusableLayer(usize),
    #[error("NoUsableLayer")]
    NoUsableLayer,
    #[error("EmptyValidation")]
    EmptyValidation,
    #[error("EmptySequence")]
    EmptySequence,
    #[error("BadShape: {0}")]
    BadShape(String),
    #[error("OutOfRange: {0}")]
    OutOfRange(String),
    #[error("TooFewTasks: {0}")]
    TooFewTasks(String),
    #[error("TooFewStimuli: {0}")]
    TooFewStimuli(String),
    #[error("MissingActivations: {0}")]
    MissingActivations(String),
    #[error("MissingPayload: {0}")]
    MissingPayload(String),
    #[error("LengthMismatch: {0}")]
    LengthMismatch(String),
    #[error("BadK: {0}")]
    BadK(String),
    #[error("BadConfig: {0}")]
    BadConfig(String),
    #[error("BadReader: {0}")]
    BadReader(String),
    #[error("Json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine name of the variant (the prefix of the Display string).
    pub fn kind(&self) -> String {
        let s = self.to_string();
        s.split(':').next().unwrap_or_default().to_owned()
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
