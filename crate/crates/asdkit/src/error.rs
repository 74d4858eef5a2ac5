//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

/// Errors produced anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Audio file does not exist on disk.
    #[error("audio file not found: {0}")]
    FileNotFound(PathBuf),

    /// The file is not a parsable RIFF/WAVE container.
    #[error("malformed WAV file {path}: {reason}")]
    MalformedWav { path: PathBuf, reason: String },

    /// The WAV container is valid but the sample encoding is not integer PCM.
    #[error("unsupported WAV encoding in {path}: format tag {format_tag}, {bits} bits")]
    UnsupportedWavEncoding {
        path: PathBuf,
        format_tag: u16,
        bits: u16,
    },

    /// Clip has fewer samples than one analysis frame.
    #[error("clip too short: {samples} samples, need at least {frame_size}")]
    ClipTooShort { samples: usize, frame_size: usize },

    /// A matrix/vector dimension did not match what the operation requires.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// Too many Mel filters for the FFT resolution: some filter would be all-zero.
    #[error("mel filterbank too fine: filter {filter} has no positive weight (n_mels {n_mels}, n_fft {n_fft})")]
    FilterbankTooFine {
        filter: usize,
        n_mels: usize,
        n_fft: usize,
    },

    /// Spectrogram has fewer frames than the window length.
    #[error("spectrogram too short: {frames} frames, window needs {n}")]
    SpectrogramTooShort { frames: usize, n: usize },

    /// Center-frame interpolation needs an odd window length.
    #[error("interpolation regime requires odd window length, got n = {0}")]
    EvenInterpolationWindow(usize),

    /// Normalization statistics need at least two windows.
    #[error("too few windows to fit normalization stats: {0}")]
    TooFewWindows(usize),

    /// A window set and model disagree on the windowing regime.
    #[error("regime mismatch: model expects {expected}, window set is {actual}")]
    RegimeMismatch { expected: String, actual: String },

    /// Training requires a normalized window set.
    #[error("window set is not normalized; fit and apply stats before training")]
    NotNormalized,

    /// No windows to train or score on.
    #[error("empty window set")]
    EmptyWindowSet,

    /// Gradients contained NaN or infinity; the optimizer step was skipped.
    #[error("non-finite gradient encountered at step {step}")]
    NonFiniteGradient { step: u64 },

    /// Checkpoint bytes do not start with the expected magic string.
    #[error("not a checkpoint file: bad magic")]
    BadCheckpointMagic,

    /// Checkpoint format version is newer than this build understands.
    #[error("unsupported checkpoint version {0}")]
    BadCheckpointVersion(u32),

    /// Checkpoint ended early or contains inconsistent sizes.
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    /// Cached window blob ended early or contains inconsistent sizes.
    #[error("corrupt window blob: {0}")]
    CorruptBlob(String),

    /// ROC-AUC needs at least one record of each label.
    #[error("AUC requires both labels: got {normal} normal and {anomalous} anomalous records")]
    SingleClassInput { normal: usize, anomalous: usize },

    /// Training or scoring failed inside one experiment cell.
    #[error("experiment cell {kind} at {snr_db} dB, trial {trial}: {source}")]
    ExperimentCell {
        kind: String,
        snr_db: i32,
        trial: usize,
        #[source]
        source: Box<Error>,
    },

    /// A sound profile is internally inconsistent.
    #[error("invalid sound profile: {0}")]
    InvalidProfile(String),

    /// SNR mixing with a silent signal or silent noise is undefined.
    #[error("cannot mix at SNR: {0} has zero power")]
    ZeroPower(&'static str),

    /// SNR mixing requires equal-length clips at equal sample rates.
    #[error("clip mismatch for mixing: {0}")]
    ClipMismatch(String),

    /// Manifest CSV line did not parse.
    #[error("bad manifest {path} line {line}: {reason}")]
    BadManifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    /// Corpus directory exists but contains no readable WAV entries.
    #[error("empty corpus under {0}")]
    EmptyCorpus(PathBuf),

    /// A path inside a corpus tree did not match the expected hierarchy.
    #[error("unrecognized corpus layout at {0}")]
    UnrecognizedLayout(PathBuf),

    /// Key=value config file problem.
    #[error("bad config {path}: {reason}")]
    BadConfig { path: PathBuf, reason: String },

    /// Underlying I/O failure.
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
