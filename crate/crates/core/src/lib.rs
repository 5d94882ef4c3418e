//! # nsk-core
//!
//! Resting-state EEG and fMRI classification pipeline for tinnitus studies.
//!
//! ```text
//! EegRecording ─ segment ─ bandpass 0.5–50 Hz ─ artifact gate ─ z-score
//!      │
//!      └─ band_decompose (delta..gamma)
//!            ├─ gfp ─ peaks ─ polarity-invariant k-means (k = 4..7) ─ backfit
//!            │        └─ duration / occurrence / coverage / mean GFP  → 440 features
//!            └─ gfp ─ smooth ─ z-score ─ Morlet CWT (127 scales) ─ 128×128 image
//!
//! FmriSeries ─ /255 ─ 3×3 median ─ CLAHE (3×3 tiles)
//!      └─ max |I_t − I_0| difference maps ─ per-slice mean / SD
//!
//! FeatureMatrix ─ subject-level stratified folds ─ DT / RF / SVM / MLP
//!      └─ EvalReport (confusion, metrics, ROC/AUC, DeLong, Cohen's d, power)
//! ```
//!
//! Every stage is a plain function over owned data; the [`pipeline`] module
//! strings them together and [`synth`] produces labelled recordings with a
//! known effect for end-to-end checks.

pub mod dataio;
pub mod error;
pub mod eval;
pub mod fmriprep;
pub mod learn;
pub mod microstate;
pub mod pipeline;
pub mod preprocess;
pub mod report;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod timefreq;

pub use dataio::{EegRecording, FeatureMatrix, FmriSeries, Label, PipelineConfig};
pub use error::{Error, Result};
