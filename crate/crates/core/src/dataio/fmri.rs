use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{sidecar_path, Label};
use crate::error::{Error, Result};

/// A 4-D functional series stored as `[t][slice][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FmriSeries {
    pub subject_id: String,
    pub label: Label,
    pub width: usize,
    pub height: usize,
    pub slices: usize,
    pub timepoints: usize,
    pub voxels: Vec<f64>,
    pub normalized: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    subject_id: String,
    label: Label,
    width: usize,
    height: usize,
    slices: usize,
    timepoints: usize,
    normalized: bool,
}

impl FmriSeries {
    pub fn new(
        subject_id: impl Into<String>,
        label: Label,
        (width, height, slices, timepoints): (usize, usize, usize, usize),
        voxels: Vec<f64>,
        normalized: bool,
    ) -> Result<Self> {
        let s = FmriSeries {
            subject_id: subject_id.into(),
            label,
            width,
            height,
            slices,
            timepoints,
            voxels,
            normalized,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.slices == 0 || self.timepoints == 0 {
            return Err(Error::Data("fMRI dimensions must all be >= 1".into()));
        }
        let expected = self.width * self.height * self.slices * self.timepoints;
        if self.voxels.len() != expected {
            return Err(Error::MalformedInput(format!(
                "series holds {} voxels, dimensions imply {expected}",
                self.voxels.len()
            )));
        }
        if let Some(v) = self.voxels.iter().find(|v| !v.is_finite()) {
            return Err(Error::MalformedInput(format!("non-finite voxel {v}")));
        }
        if self.normalized && self.voxels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("normalized series has voxels outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Number of 2-D images (`slices * timepoints`).
    pub fn n_images(&self) -> usize {
        self.slices * self.timepoints
    }

    fn image_len(&self) -> usize {
        self.width * self.height
    }

    /// Row-major pixels of one slice at one time point.
    pub fn image(&self, t: usize, slice: usize) -> &[f64] {
        let len = self.image_len();
        let start = (t * self.slices + slice) * len;
        &self.voxels[start..start + len]
    }

    pub fn image_mut(&mut self, t: usize, slice: usize) -> &mut [f64] {
        let len = self.image_len();
        let start = (t * self.slices + slice) * len;
        &mut self.voxels[start..start + len]
    }
}

pub fn write_volume_series(series: &FmriSeries, path: &Path) -> Result<()> {
    series.validate()?;
    let mut bytes = Vec::with_capacity(series.voxels.len() * 4);
    for v in &series.voxels {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    let meta = Sidecar {
        subject_id: series.subject_id.clone(),
        label: series.label,
        width: series.width,
        height: series.height,
        slices: series.slices,
        timepoints: series.timepoints,
        normalized: series.normalized,
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

pub fn read_volume_series(path: &Path) -> Result<FmriSeries> {
    let meta_path = sidecar_path(path);
    let meta: Sidecar = match fs::read(&meta_path) {
        Ok(b) => serde_json::from_slice(&b)?,
        Err(_) => {
            return Err(Error::MalformedInput(format!("{}: missing sidecar", meta_path.display())));
        }
    };
    let bytes = fs::read(path)?;
    let expected = meta.width * meta.height * meta.slices * meta.timepoints;
    if bytes.len() != expected * 4 {
        return Err(Error::MalformedInput(format!(
            "{}: payload is {} bytes, descriptor implies {}",
            path.display(),
            bytes.len(),
            expected * 4
        )));
    }
    let voxels = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    FmriSeries::new(
        meta.subject_id,
        meta.label,
        (meta.width, meta.height, meta.slices, meta.timepoints),
        voxels,
        meta.normalized,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_scale_descriptor() {
        let (w, h, s, t) = (64, 64, 32, 400);
        let series = FmriSeries::new("s", Label::Healthy, (w, h, s, t), vec![0.0; w * h * s * t], false).unwrap();
        assert_eq!(series.n_images(), 12_800);
    }

    #[test]
    fn short_payload_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.f32");
        let series = FmriSeries::new("s", Label::Healthy, (2, 2, 1, 2), vec![1.0; 8], false).unwrap();
        write_volume_series(&series, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(read_volume_series(&p), Err(Error::MalformedInput(_))));
    }

    #[test]
    fn missing_sidecar_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.f32");
        fs::write(&p, [0u8; 4]).unwrap();
        assert!(matches!(read_volume_series(&p), Err(Error::MalformedInput(_))));
    }

    #[test]
    fn unit_series_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.f32");
        let series = FmriSeries::new("s9", Label::Tinnitus, (1, 1, 1, 1), vec![0.25], true).unwrap();
        write_volume_series(&series, &p).unwrap();
        assert_eq!(read_volume_series(&p).unwrap(), series);
    }

    #[test]
    fn image_indexing() {
        let voxels: Vec<f64> = (0..24).map(|v| v as f64).collect();
        let s = FmriSeries::new("s", Label::Healthy, (3, 2, 2, 2), voxels, false).unwrap();
        assert_eq!(s.image(1, 0), &[12.0, 13.0, 14.0, 15.0, 16.0, 17.0]);
        assert_eq!(s.image(0, 1)[0], 6.0);
    }
}
