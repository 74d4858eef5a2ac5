//! Unsupervised anomalous machine-sound detection at desk scale.
//!
//! The pipeline turns WAV audio into log-Mel spectrograms, slices them into
//! windowed (input, target) pairs under one of three regimes — reconstruct
//! all frames, interpolate a removed center frame, or predict the next frame
//! — and trains small dense networks (plain or variational) on normal sound
//! only. The anomaly score of a segment is its mean windowed squared error,
//! and detectors are compared by ROC-AUC over labeled test segments.
//!
//! A synthetic machine-sound generator provides labeled corpora for the whole
//! experiment loop, and a directory scanner ingests user-supplied real
//! corpora arranged as `<snr>/<machine-type>/<machine-id>/{normal,abnormal}`.

pub mod audio;
pub mod cli;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod mimii;
pub mod model;
pub mod nn;
pub mod seeding;
pub mod synth;
pub mod windowing;

pub use audio::AudioClip;
pub use dsp::{FeatureParams, Spectrogram};
pub use error::{Error, Result};
pub use manifest::{DatasetManifest, Label, Split};
pub use model::{ModelKind, ModelSpec, TrainConfig, TrainedModel};
pub use windowing::{NormStats, Regime, WindowSet};
