//! EEG preprocessing: fixed-length segmentation, Butterworth band-pass,
//! per-channel z-scoring with DC removal, amplitude-based artifact rejection
//! and decomposition into the canonical frequency bands.

pub mod filter;
pub mod wavelet;

use ndarray::{Array2, Axis};

use crate::dataio::{BandSpec, DecompositionMethod, EegRecording};
use crate::error::{Error, Result};
pub use filter::{butter_bandpass, Biquad, Sos};

/// A contiguous window of one recording, `[n_samples, n_channels]` microvolts.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub subject_id: String,
    pub window_index: usize,
    pub fs_hz: f64,
    pub samples: Array2<f64>,
}

impl Epoch {
    pub fn n_samples(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.samples.ncols()
    }

    /// Same provenance, new sample matrix.
    pub fn with_samples(&self, samples: Array2<f64>) -> Epoch {
        Epoch {
            subject_id: self.subject_id.clone(),
            window_index: self.window_index,
            fs_hz: self.fs_hz,
            samples,
        }
    }

    fn map_channels(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Epoch {
        let mut out = Array2::zeros(self.samples.dim());
        for (ch, col) in self.samples.axis_iter(Axis(1)).enumerate() {
            let y = f(&col.to_vec());
            out.column_mut(ch).iter_mut().zip(y).for_each(|(o, v)| *o = v);
        }
        self.with_samples(out)
    }
}

/// Samples per window, `round(window_s * fs)`.
pub fn window_len(window_s: f64, fs_hz: f64) -> usize {
    (window_s * fs_hz).round().max(0.0) as usize
}

/// Non-overlapping consecutive windows; a trailing partial window is dropped.
pub fn segment(rec: &EegRecording, window_s: f64) -> Result<Vec<Epoch>> {
    if !(window_s > 0.0) {
        return Err(Error::Data(format!("window length must be positive, got {window_s}")));
    }
    let len = window_len(window_s, rec.fs_hz);
    if len == 0 {
        return Err(Error::Data(format!("{window_s} s at {} Hz rounds to zero samples", rec.fs_hz)));
    }
    let count = rec.n_samples() / len;
    Ok((0..count)
        .map(|w| Epoch {
            subject_id: rec.subject_id.clone(),
            window_index: w,
            fs_hz: rec.fs_hz,
            samples: rec.samples.slice(ndarray::s![w * len..(w + 1) * len, ..]).to_owned(),
        })
        .collect())
}

/// Per-channel Butterworth band-pass, single causal pass or forward–backward.
pub fn butterworth_bandpass(e: &Epoch, lo_hz: f64, hi_hz: f64, order: usize, zero_phase: bool) -> Result<Epoch> {
    let sos = butter_bandpass(lo_hz, hi_hz, e.fs_hz, order)?;
    Ok(e.map_channels(|x| if zero_phase { sos.filtfilt(x) } else { sos.filter(x) }))
}

/// Result of z-scoring: the data plus the indices of constant inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized<T> {
    pub data: T,
    /// Channels whose standard deviation was zero; they are emitted as zeros.
    pub degenerate: Vec<usize>,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Subtract the mean and divide by the population standard deviation.
/// Returns `None` for a constant (or empty) input.
pub fn zscore_slice(x: &[f64]) -> Option<Vec<f64>> {
    if x.is_empty() {
        return None;
    }
    let m = mean(x);
    let mut centered: Vec<f64> = x.iter().map(|v| v - m).collect();
    // second pass removes the rounding residue of the first mean
    let m2 = mean(&centered);
    centered.iter_mut().for_each(|v| *v -= m2);
    let var = centered.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let sd = var.sqrt();
    if !(sd > f64::EPSILON * (1.0 + m.abs())) {
        return None;
    }
    centered.iter_mut().for_each(|v| *v /= sd);
    Some(centered)
}

/// Per-channel DC removal and unit-variance scaling.
pub fn normalize_epoch(e: &Epoch) -> Normalized<Epoch> {
    let mut degenerate = Vec::new();
    let mut ch = 0;
    let data = e.map_channels(|x| {
        let out = zscore_slice(x).unwrap_or_else(|| {
            degenerate.push(ch);
            vec![0.0; x.len()]
        });
        ch += 1;
        out
    });
    Normalized { data, degenerate }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactDecision {
    Keep,
    Drop,
}

/// Drop the epoch iff some sample lies strictly outside `[-limit, limit]`.
pub fn reject_artifacts(e: &Epoch, limit_uv: f64) -> ArtifactDecision {
    if e.samples.iter().any(|v| v.abs() > limit_uv) {
        ArtifactDecision::Drop
    } else {
        ArtifactDecision::Keep
    }
}

/// One band-limited copy of an epoch per configured band.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSet {
    pub subject_id: String,
    pub window_index: usize,
    pub bands: Vec<(BandSpec, Epoch)>,
}

impl BandSet {
    pub fn get(&self, name: &str) -> Option<&Epoch> {
        self.bands.iter().find(|(b, _)| b.name == name).map(|(_, e)| e)
    }
}

pub fn band_decompose(e: &Epoch, bands: &[BandSpec], method: DecompositionMethod, order: usize) -> Result<BandSet> {
    let nyquist = e.fs_hz / 2.0;
    for b in bands {
        if !(b.lo_hz > 0.0 && b.lo_hz < b.hi_hz && b.hi_hz < nyquist) {
            return Err(Error::Data(format!(
                "band {} [{}, {}] Hz invalid at Nyquist {nyquist} Hz",
                b.name, b.lo_hz, b.hi_hz
            )));
        }
    }
    let outputs = match method {
        DecompositionMethod::Bandpass => bands
            .iter()
            .map(|b| butterworth_bandpass(e, b.lo_hz, b.hi_hz, order, true))
            .collect::<Result<Vec<_>>>()?,
        DecompositionMethod::Db4Packet => db4_packet_bands(e, bands),
    };
    Ok(BandSet {
        subject_id: e.subject_id.clone(),
        window_index: e.window_index,
        bands: bands.iter().cloned().zip(outputs).collect(),
    })
}

/// Packet depth whose leaves are at most half the narrowest band, limited so
/// the deepest leaves keep at least 8 coefficients.
pub fn packet_depth(n_samples: usize, fs_hz: f64, bands: &[BandSpec]) -> usize {
    let narrowest = bands.iter().map(|b| b.hi_hz - b.lo_hz).fold(f64::INFINITY, f64::min);
    let nyquist = fs_hz / 2.0;
    let mut depth = 1;
    while nyquist / (1u64 << depth) as f64 > narrowest / 2.0 && n_samples >> (depth + 1) >= 8 {
        depth += 1;
    }
    depth
}

fn db4_packet_bands(e: &Epoch, bands: &[BandSpec]) -> Vec<Epoch> {
    let n = e.n_samples();
    let depth = packet_depth(n, e.fs_hz, bands);
    let block = 1usize << depth;
    let padded = n.div_ceil(block) * block;
    let leaf_hz = e.fs_hz / 2.0 / block as f64;
    let mut outs: Vec<Array2<f64>> = bands.iter().map(|_| Array2::zeros(e.samples.dim())).collect();
    for (ch, col) in e.samples.axis_iter(Axis(1)).enumerate() {
        let mut x = col.to_vec();
        // symmetric extension up to a multiple of 2^depth
        for i in 0..padded - n {
            let src = n.saturating_sub(2 + i % n.max(1));
            x.push(x[src.min(n - 1)]);
        }
        let tree = wavelet::PacketTree::decompose(&x, depth);
        for (b, out) in bands.iter().zip(outs.iter_mut()) {
            let y = tree.reconstruct(|f| {
                let center = (f as f64 + 0.5) * leaf_hz;
                center >= b.lo_hz && center < b.hi_hz
            });
            out.column_mut(ch).iter_mut().zip(&y[..n]).for_each(|(o, v)| *o = *v);
        }
    }
    outs.into_iter().map(|s| e.with_samples(s)).collect()
}
