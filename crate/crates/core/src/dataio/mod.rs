//! On-disk formats: EEG recordings, fMRI volume series, feature matrices,
//! PGM slices and the JSON pipeline configuration.
//!
//! Every recording or series carries a JSON sidecar `<stem>.meta.json`
//! holding subject metadata. Readers reject non-finite values so nothing
//! downstream ever sees NaN or Inf.

mod config;
mod eeg;
mod features;
mod fmri;
pub mod pgm;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use config::{BandSpec, DecompositionMethod, FitScope, LearnerKind, PipelineConfig, PrefilterSpec};
pub use eeg::{read_recording, recording_format, write_recording, EegFormat, EegRecording};
pub use features::{
    read_feature_matrix, write_feature_matrix, ColumnKey, FeatureKind, FeatureMatrix, FeatureRow,
};
pub use fmri::{read_volume_series, write_volume_series, FmriSeries};

/// Binary class label. `Healthy` encodes as 0, `Tinnitus` as 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Healthy,
    Tinnitus,
}

impl Label {
    pub fn as_class(self) -> u8 {
        match self {
            Label::Healthy => 0,
            Label::Tinnitus => 1,
        }
    }

    pub fn from_class(c: u8) -> Label {
        if c == 0 {
            Label::Healthy
        } else {
            Label::Tinnitus
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Healthy => "healthy",
            Label::Tinnitus => "tinnitus",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Label> {
        match s {
            "healthy" => Ok(Label::Healthy),
            "tinnitus" => Ok(Label::Tinnitus),
            other => Err(Error::MalformedInput(format!("unknown label `{other}`"))),
        }
    }
}

/// `dir/name.ext` -> `dir/name.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}
