//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by model construction, estimation and file ingestion.
#[derive(Debug, Error)]
pub enum Error {
    /// A spectrogram cell was negative. Magnitudes are counts of "sound
    /// quanta" and must be nonnegative.
    #[error("negative spectrogram entry {value} at bin {bin}, frame {frame}")]
    NegativeEntry {
        /// Frequency bin index of the offending entry.
        bin: usize,
        /// Frame index of the offending entry.
        frame: usize,
        /// The offending value.
        value: f64,
    },

    /// Shapes of two inputs do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A scalar or structural argument is out of its valid range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Prior training requires at least one piece with note events.
    #[error("training corpus is empty")]
    EmptyCorpus,

    /// Resampling requires weights that already form a simplex.
    #[error("particle weights are not normalized (sum = {0})")]
    UnnormalizedWeights(f64),

    /// Smoothing requires the filter to have kept its per-frame ensembles.
    #[error("filter output has no stored ensembles; rerun with store_ensembles enabled")]
    MissingEnsembles,

    /// A text file failed to parse; carries the file and 1-based line number.
    #[error("{path}:{line}: {message}")]
    Parse {
        /// Path of the offending file.
        path: String,
        /// 1-based line number.
        line: usize,
        /// What went wrong.
        message: String,
    },

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failure.
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    /// An error tagged with the pipeline stage it occurred in.
    #[error("stage {stage}: {source}")]
    Stage {
        /// Pipeline stage name (e.g. "load-input", "estimate").
        stage: &'static str,
        /// The underlying error.
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
