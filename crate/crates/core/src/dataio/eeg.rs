use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{sidecar_path, Label};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EEGR";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 8;

/// A multichannel EEG recording in microvolts.
#[derive(Debug, Clone, PartialEq)]
pub struct EegRecording {
    pub subject_id: String,
    pub label: Label,
    pub fs_hz: f64,
    /// `[n_samples, n_channels]`
    pub samples: Array2<f64>,
}

impl EegRecording {
    pub fn new(subject_id: impl Into<String>, label: Label, fs_hz: f64, samples: Array2<f64>) -> Result<Self> {
        let rec = EegRecording { subject_id: subject_id.into(), label, fs_hz, samples };
        rec.validate()?;
        Ok(rec)
    }

    pub fn n_samples(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.samples.ncols()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.fs_hz
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs_hz.is_finite() && self.fs_hz > 0.0) {
            return Err(Error::Data(format!("sampling rate must be positive, got {}", self.fs_hz)));
        }
        if self.n_channels() == 0 {
            return Err(Error::Data("recording has zero channels".into()));
        }
        if self.n_samples() == 0 {
            return Err(Error::Data("recording has zero samples".into()));
        }
        if let Some(v) = self.samples.iter().find(|v| !v.is_finite()) {
            return Err(Error::MalformedInput(format!("non-finite sample value {v}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EegFormat {
    Csv,
    Eegr,
}

/// Infer the format from the file extension.
pub fn recording_format(path: &Path) -> Option<EegFormat> {
    match path.extension()?.to_str()? {
        "eegr" => Some(EegFormat::Eegr),
        "csv" => Some(EegFormat::Csv),
        _ => None,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    subject_id: String,
    label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fs_hz: Option<f64>,
}

pub fn write_recording(rec: &EegRecording, path: &Path, format: EegFormat) -> Result<()> {
    rec.validate()?;
    let sidecar = match format {
        EegFormat::Eegr => {
            fs::write(path, encode_eegr(rec))?;
            Sidecar { subject_id: rec.subject_id.clone(), label: rec.label, fs_hz: None }
        }
        EegFormat::Csv => {
            fs::write(path, encode_csv(rec))?;
            Sidecar { subject_id: rec.subject_id.clone(), label: rec.label, fs_hz: Some(rec.fs_hz) }
        }
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)? + "\n")?;
    Ok(())
}

pub fn read_recording(path: &Path, format: EegFormat) -> Result<EegRecording> {
    let bytes = fs::read(path)?;
    if bytes.is_empty() {
        return Err(Error::MalformedInput(format!("{}: empty file", path.display())));
    }
    let meta_path = sidecar_path(path);
    let meta: Sidecar = match fs::read(&meta_path) {
        Ok(b) => serde_json::from_slice(&b)?,
        Err(_) => {
            return Err(Error::MalformedInput(format!("{}: missing sidecar", meta_path.display())));
        }
    };
    let (fs_hz, samples) = match format {
        EegFormat::Eegr => decode_eegr(&bytes)?,
        EegFormat::Csv => {
            let fs_hz = meta
                .fs_hz
                .ok_or_else(|| Error::MalformedInput("csv sidecar lacks fs_hz".into()))?;
            (fs_hz, decode_csv(&bytes)?)
        }
    };
    EegRecording::new(meta.subject_id, meta.label, fs_hz, samples)
}

fn encode_eegr(rec: &EegRecording) -> Vec<u8> {
    let (n, c) = rec.samples.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * n * c);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(c as u32).to_le_bytes());
    out.extend_from_slice(&rec.fs_hz.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for ch in 0..c {
        for t in 0..n {
            out.extend_from_slice(&(rec.samples[[t, ch]] as f32).to_le_bytes());
        }
    }
    out
}

fn decode_eegr(bytes: &[u8]) -> Result<(f64, Array2<f64>)> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::MalformedInput("bad EEGR magic or truncated header".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::MalformedInput(format!("unsupported EEGR version {version}")));
    }
    let n_channels = u32_at(8) as usize;
    let fs_hz = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let n_samples = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
    if !(fs_hz.is_finite() && fs_hz > 0.0) {
        return Err(Error::Data(format!("sampling rate must be positive, got {fs_hz}")));
    }
    if n_channels == 0 {
        return Err(Error::Data("recording has zero channels".into()));
    }
    let expected = n_channels
        .checked_mul(n_samples)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::MalformedInput("EEGR dimensions overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::MalformedInput(format!(
            "EEGR payload is {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let mut samples = Array2::zeros((n_samples, n_channels));
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::MalformedInput(format!("non-finite sample at offset {i}")));
        }
        samples[[i % n_samples, i / n_samples]] = v as f64;
    }
    Ok((fs_hz, samples))
}

fn encode_csv(rec: &EegRecording) -> Vec<u8> {
    let (n, c) = rec.samples.dim();
    let mut out = String::new();
    let header: Vec<String> = (1..=c).map(|i| format!("ch{i}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for t in 0..n {
        let row: Vec<String> = (0..c).map(|ch| rec.samples[[t, ch]].to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

fn decode_csv(bytes: &[u8]) -> Result<Array2<f64>> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::MalformedInput("csv is not utf-8".into()))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::MalformedInput("csv has no header".into()))?;
    let n_channels = header.split(',').count();
    for (i, name) in header.split(',').enumerate() {
        if name.trim() != format!("ch{}", i + 1) {
            return Err(Error::MalformedInput(format!("unexpected csv column `{name}`")));
        }
    }
    let mut values = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<&str> = line.split(',').collect();
        if row.len() != n_channels {
            return Err(Error::MalformedInput(format!(
                "csv row {} has {} fields, expected {n_channels}",
                lineno + 2,
                row.len()
            )));
        }
        for field in row {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::MalformedInput(format!("bad number `{field}`")))?;
            if !v.is_finite() {
                return Err(Error::MalformedInput(format!("non-finite sample `{field}`")));
            }
            values.push(v);
        }
    }
    let n = values.len() / n_channels;
    Array2::from_shape_vec((n, n_channels), values).map_err(|e| Error::MalformedInput(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(n: usize, c: usize) -> EegRecording {
        let samples = Array2::from_shape_fn((n, c), |(t, ch)| ((t * 7 + ch * 3) % 11) as f64 * 0.5 - 2.0);
        EegRecording::new("s01", Label::Tinnitus, 1200.0, samples).unwrap()
    }

    #[test]
    fn empty_file_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.eegr");
        fs::write(&p, b"").unwrap();
        assert!(matches!(read_recording(&p, EegFormat::Eegr), Err(Error::MalformedInput(_))));
        assert!(matches!(read_recording(&p, EegFormat::Csv), Err(Error::MalformedInput(_))));
    }

    #[test]
    fn eegr_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let rec = synthetic(10, 2);
        let p = dir.path().join("r.eegr");
        write_recording(&rec, &p, EegFormat::Eegr).unwrap();
        let back = read_recording(&p, EegFormat::Eegr).unwrap();
        assert_eq!(back, rec);
        let p2 = dir.path().join("r2.eegr");
        write_recording(&back, &p2, EegFormat::Eegr).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = synthetic(10, 2);
        rec.samples[[3, 1]] = 0.1 + 0.2;
        let p = dir.path().join("r.csv");
        write_recording(&rec, &p, EegFormat::Csv).unwrap();
        assert_eq!(read_recording(&p, EegFormat::Csv).unwrap(), rec);
    }

    #[test]
    fn header_fs_validation() {
        let rec = EegRecording::new("s", Label::Healthy, 1200.0, Array2::zeros((5, 64))).unwrap();
        assert_eq!(rec.n_channels(), 64);
        let mut bytes = encode_eegr(&rec);
        bytes[12..20].copy_from_slice(&0.0f64.to_le_bytes());
        assert!(matches!(decode_eegr(&bytes), Err(Error::Data(_))));
        let mut bytes = encode_eegr(&rec);
        bytes[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_eegr(&bytes), Err(Error::Data(_))));
    }

    #[test]
    fn rejects_bad_magic_and_nan() {
        let rec = synthetic(4, 2);
        let mut bytes = encode_eegr(&rec);
        bytes[0] = b'X';
        assert!(matches!(decode_eegr(&bytes), Err(Error::MalformedInput(_))));
        let mut bytes = encode_eegr(&rec);
        bytes[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_eegr(&bytes), Err(Error::MalformedInput(_))));
        assert!(matches!(decode_csv(b"ch1,ch2\n1,NaN\n"), Err(Error::MalformedInput(_))));
        assert!(matches!(decode_csv(b"ch1,ch2\n1,inf\n"), Err(Error::MalformedInput(_))));
    }

    #[test]
    fn truncated_payload_rejected() {
        let rec = synthetic(4, 2);
        let bytes = encode_eegr(&rec);
        assert!(matches!(decode_eegr(&bytes[..bytes.len() - 4]), Err(Error::MalformedInput(_))));
    }
}
