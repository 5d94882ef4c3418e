//! GFP → time–frequency image: moving-average smoothing, z-scoring,
//! complex-Morlet continuous wavelet transform, bilinear resize to 128×128
//! and min–max scaling to `[0, 1]`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dataio::pgm;
use crate::error::{Error, Result};
use crate::microstate::GfpSeries;
use crate::preprocess::{zscore_slice, Normalized};

pub const DEFAULT_SCALES: usize = 127;
pub const IMAGE_SIZE: usize = 128;

/// Centered moving average of odd width; the edges average over the
/// truncated window that fits.
pub fn smooth_moving_average(signal: &GfpSeries, w: usize) -> Result<GfpSeries> {
    if w == 0 || w % 2 == 0 {
        return Err(Error::Data(format!("moving-average width must be odd and >= 1, got {w}")));
    }
    let v = &signal.values;
    if v.len() < w {
        return Err(Error::Data(format!("signal of length {} is shorter than the window {w}", v.len())));
    }
    let half = w / 2;
    let mut prefix = vec![0.0; v.len() + 1];
    for (i, x) in v.iter().enumerate() {
        prefix[i + 1] = prefix[i] + x;
    }
    let values = (0..v.len())
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(v.len());
            // direct sum keeps constant signals bit-exact
            if hi - lo <= 16 {
                v[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
            } else {
                (prefix[hi] - prefix[lo]) / (hi - lo) as f64
            }
        })
        .collect();
    Ok(GfpSeries { fs_hz: signal.fs_hz, values })
}

/// Population z-score of one signal; a constant input yields zeros and is
/// flagged as degenerate.
pub fn zscore(signal: &[f64]) -> Normalized<Vec<f64>> {
    match zscore_slice(signal) {
        Some(data) => Normalized { data, degenerate: Vec::new() },
        None => Normalized { data: vec![0.0; signal.len()], degenerate: vec![0] },
    }
}

/// Complex Morlet `cmor{bandwidth}-{center}`:
/// `ψ(t) = (π B)^{-1/2} exp(-t²/B) exp(2πiCt)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Morlet {
    pub bandwidth: f64,
    pub center: f64,
}

impl Default for Morlet {
    fn default() -> Self {
        Morlet { bandwidth: 1.0, center: 1.0 }
    }
}

impl Morlet {
    /// Fourier transform of the mother wavelet at `nu` cycles per unit time.
    pub fn spectrum(&self, nu: f64) -> f64 {
        let d = nu - self.center;
        (-PI * PI * self.bandwidth * d * d).exp()
    }

    /// Pseudo-frequency (Hz) of a scale expressed in samples.
    pub fn scale_to_hz(&self, scale: f64, fs_hz: f64) -> f64 {
        self.center * fs_hz / scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scalogram {
    /// `[n_scales, n_samples]`, rows ordered by increasing scale.
    pub magnitudes: Array2<f64>,
    /// Scales in samples.
    pub scales: Vec<f64>,
    pub frequencies_hz: Vec<f64>,
    pub fs_hz: f64,
}

/// Geometric scale ladder whose pseudo-frequencies run from `0.45 fs` down to 0.5 Hz.
pub fn scale_ladder(fs_hz: f64, n_scales: usize, wavelet: Morlet) -> Result<(Vec<f64>, Vec<f64>)> {
    let f_hi = 0.45 * fs_hz;
    let f_lo = 0.5;
    if n_scales == 0 || !(f_hi > f_lo) {
        return Err(Error::Data(format!("cannot span [0.5, {f_hi}] Hz with {n_scales} scales")));
    }
    let freqs: Vec<f64> = (0..n_scales)
        .map(|i| {
            if n_scales == 1 {
                f_hi
            } else {
                f_hi * (f_lo / f_hi).powf(i as f64 / (n_scales - 1) as f64)
            }
        })
        .collect();
    let scales = freqs.iter().map(|f| wavelet.center * fs_hz / f).collect();
    Ok((scales, freqs))
}

/// Magnitude of the complex-Morlet CWT. Each scale correlates the signal
/// with the sampled wavelet truncated at ±5·scale·√B samples; the
/// correlation runs through a zero-padded FFT long enough to avoid wrap-around.
pub fn cwt_morlet(signal: &[f64], fs_hz: f64, n_scales: usize, wavelet: Morlet) -> Result<Scalogram> {
    let n = signal.len();
    if n < 8 {
        return Err(Error::Data(format!("CWT needs at least 8 samples, got {n}")));
    }
    let (scales, frequencies_hz) = scale_ladder(fs_hz, n_scales, wavelet)?;
    let half_width = |a: f64| (5.0 * a * wavelet.bandwidth.sqrt()).ceil() as usize;
    let a_max = scales.iter().copied().fold(0.0, f64::max);
    let len = (n + half_width(a_max) + 1).next_power_of_two();

    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let zero = Complex64::new(0.0, 0.0);
    let mut spectrum: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    spectrum.resize(len, zero);
    fwd.process(&mut spectrum);

    let norm = (PI * wavelet.bandwidth).sqrt().recip();
    let mut magnitudes = Array2::zeros((scales.len(), n));
    let mut kernel = vec![zero; len];
    for (row, &a) in scales.iter().enumerate() {
        kernel.fill(zero);
        let s = half_width(a) as isize;
        let amp = norm / a.sqrt();
        for j in -s..=s {
            // k[j] = conj(ψ_a(-j))
            let t = -(j as f64) / a;
            let envelope = amp * (-t * t / wavelet.bandwidth).exp();
            let phase = -2.0 * PI * wavelet.center * t;
            kernel[j.rem_euclid(len as isize) as usize] = Complex64::from_polar(envelope, phase);
        }
        fwd.process(&mut kernel);
        for (k, x) in kernel.iter_mut().zip(&spectrum) {
            *k *= x / len as f64;
        }
        inv.process(&mut kernel);
        for (m, c) in magnitudes.row_mut(row).iter_mut().zip(&kernel[..n]) {
            *m = c.norm();
        }
    }
    Ok(Scalogram { magnitudes, scales, frequencies_hz, fs_hz })
}

/// Bilinear resize with half-pixel centers and clamped borders.
pub fn resize_bilinear(src: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    let axis = |dst: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        let pos = ((dst as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, pos - i0 as f64)
    };
    let rows: Vec<_> = (0..out_h).map(|r| axis(r, out_h, h)).collect();
    let cols: Vec<_> = (0..out_w).map(|c| axis(c, out_w, w)).collect();
    Array2::from_shape_fn((out_h, out_w), |(r, c)| {
        let (r0, r1, fy) = rows[r];
        let (c0, c1, fx) = cols[c];
        let top = src[[r0, c0]] + fx * (src[[r0, c1]] - src[[r0, c0]]);
        let bottom = src[[r1, c0]] + fx * (src[[r1, c1]] - src[[r1, c0]]);
        top + fy * (bottom - top)
    })
}

/// 128×128 image in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TfImage {
    pub pixels: Array2<f64>,
}

/// Resize to 128×128, then min–max normalize. Constant input gives all zeros.
pub fn to_image(s: &Scalogram) -> TfImage {
    let mut pixels = resize_bilinear(&s.magnitudes, IMAGE_SIZE, IMAGE_SIZE);
    let (lo, hi) = pixels.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if range > 0.0 {
        pixels.mapv_inplace(|v| ((v - lo) / range).clamp(0.0, 1.0));
    } else {
        pixels.fill(0.0);
    }
    TfImage { pixels }
}

/// The full GFP → image chain with the default smoothing width (5),
/// scale count (127) and wavelet.
pub fn gfp_to_image(g: &GfpSeries) -> Result<TfImage> {
    let smoothed = smooth_moving_average(g, 5)?;
    let z = zscore(&smoothed.values);
    let s = cwt_morlet(&z.data, g.fs_hz, DEFAULT_SCALES, Morlet::default())?;
    Ok(to_image(&s))
}

#[derive(Debug, Serialize, Deserialize)]
struct ImageSidecar {
    width: usize,
    height: usize,
    dtype: String,
}

/// Writes `<stem>.f32` (raw little-endian), its JSON sidecar and an 8-bit `<stem>.pgm` preview.
pub fn write_image(img: &TfImage, dir: &Path, stem: &str) -> Result<()> {
    let (h, w) = img.pixels.dim();
    let raw: Vec<u8> = img.pixels.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
    let raw_path = dir.join(format!("{stem}.f32"));
    fs::write(&raw_path, raw)?;
    let meta = ImageSidecar { width: w, height: h, dtype: "f32le".into() };
    fs::write(crate::dataio::sidecar_path(&raw_path), serde_json::to_string_pretty(&meta)? + "\n")?;
    let values: Vec<f64> = img.pixels.iter().copied().collect();
    pgm::write_pgm(&dir.join(format!("{stem}.pgm")), &pgm::from_unit(w, h, &values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(values: Vec<f64>, fs: f64) -> GfpSeries {
        GfpSeries { fs_hz: fs, values }
    }

    #[test]
    fn moving_average_fixtures() {
        let c = smooth_moving_average(&series(vec![3.5; 9], 1.0), 5).unwrap();
        assert!(c.values.iter().all(|v| *v == 3.5));
        let mut impulse = vec![0.0; 11];
        impulse[5] = 1.0;
        let s = smooth_moving_average(&series(impulse, 1.0), 5).unwrap();
        let expect = [0.0, 0.0, 0.0, 0.2, 0.2, 0.2, 0.2, 0.2, 0.0, 0.0, 0.0];
        for (a, b) in s.values.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        for len in 5..40 {
            assert_eq!(smooth_moving_average(&series(vec![1.0; len], 1.0), 5).unwrap().values.len(), len);
        }
        assert!(smooth_moving_average(&series(vec![1.0; 10], 1.0), 4).is_err());
        assert!(smooth_moving_average(&series(vec![1.0; 3], 1.0), 5).is_err());
    }

    #[test]
    fn moving_average_edges_truncate() {
        let s = smooth_moving_average(&series(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 1.0), 5).unwrap();
        assert!((s.values[0] - 2.0).abs() < 1e-15); // mean of 1,2,3
        assert!((s.values[1] - 2.5).abs() < 1e-15); // mean of 1..4
        assert!((s.values[5] - 5.0).abs() < 1e-15); // mean of 4,5,6
    }

    #[test]
    fn zscore_fixtures() {
        let z = zscore(&[1.0, 2.0, 3.0, 4.0]);
        let expect = [-1.3416407864998738, -0.4472135954999579, 0.4472135954999579, 1.3416407864998738];
        for (a, b) in z.data.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let c = zscore(&[2.0; 5]);
        assert_eq!(c.degenerate, vec![0]);
        assert!(c.data.iter().all(|v| *v == 0.0));
        let again = zscore(&z.data);
        for (a, b) in again.data.iter().zip(&z.data) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn cwt_shape_and_zero_input() {
        let s = cwt_morlet(&[0.0; 64], 100.0, DEFAULT_SCALES, Morlet::default()).unwrap();
        assert_eq!(s.magnitudes.dim(), (127, 64));
        assert!(s.magnitudes.iter().all(|v| *v == 0.0));
        assert!((s.frequencies_hz[0] - 45.0).abs() < 1e-9);
        assert!((s.frequencies_hz[126] - 0.5).abs() < 1e-9);
        assert!(cwt_morlet(&[1.0; 7], 100.0, 10, Morlet::default()).is_err());
    }

    #[test]
    fn cwt_is_linear_in_amplitude() {
        let x: Vec<f64> = (0..300).map(|i| ((i * i) as f64 * 0.01).sin()).collect();
        let s1 = cwt_morlet(&x, 100.0, 32, Morlet::default()).unwrap();
        let x3: Vec<f64> = x.iter().map(|v| -3.0 * v).collect();
        let s3 = cwt_morlet(&x3, 100.0, 32, Morlet::default()).unwrap();
        let scale = s1.magnitudes.iter().copied().fold(0.0, f64::max);
        for (a, b) in s1.magnitudes.iter().zip(s3.magnitudes.iter()) {
            assert!((3.0 * a - b).abs() <= 1e-9 * scale.max(1.0));
        }
    }

    #[test]
    fn time_shift_moves_columns() {
        let fs = 100.0;
        let n = 400;
        let delta = 17;
        let base: Vec<f64> = (0..n + delta).map(|i| (i as f64 * 0.37).sin() + (i as f64 * 1.3).cos()).collect();
        let x: Vec<f64> = base[delta..].to_vec();
        let mut shifted = vec![0.0; delta];
        shifted.extend_from_slice(&x[..n - delta]);
        let s1 = cwt_morlet(&x, fs, 40, Morlet::default()).unwrap();
        let s2 = cwt_morlet(&shifted, fs, 40, Morlet::default()).unwrap();
        // scales up to ~10 samples have support well inside the interior
        for row in 0..40 {
            if s1.scales[row] > 10.0 {
                continue;
            }
            for col in 100..(n - 100) {
                let a = s1.magnitudes[[row, col]];
                let b = s2.magnitudes[[row, col + delta]];
                assert!((a - b).abs() < 1e-9, "row {row} col {col}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn image_is_128_square_in_unit_range() {
        let g = series((0..500).map(|i| (i as f64 * 0.1).sin().abs()).collect(), 100.0);
        let img = gfp_to_image(&g).unwrap();
        assert_eq!(img.pixels.dim(), (128, 128));
        let lo = img.pixels.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = img.pixels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0));
    }

    #[test]
    fn constant_scalogram_gives_zero_image() {
        let s = Scalogram { magnitudes: Array2::from_elem((3, 5), 2.5), scales: vec![1.0; 3], frequencies_hz: vec![1.0; 3], fs_hz: 1.0 };
        assert!(to_image(&s).pixels.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn image_invariant_under_positive_affine_maps() {
        let mags = Array2::from_shape_fn((20, 50), |(r, c)| ((r * 7 + c * 3) % 13) as f64 + 0.1 * r as f64);
        let s = Scalogram { magnitudes: mags.clone(), scales: vec![1.0; 20], frequencies_hz: vec![1.0; 20], fs_hz: 1.0 };
        let base = to_image(&s);
        let exact = Scalogram { magnitudes: mags.mapv(|v| 4.0 * v), ..s.clone() };
        assert_eq!(to_image(&exact), base);
        let affine = Scalogram { magnitudes: mags.mapv(|v| 2.7 * v + 11.3), ..s };
        for (a, b) in to_image(&affine).pixels.iter().zip(base.pixels.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bilinear_identity_and_upsample() {
        let src = Array2::from_shape_fn((4, 6), |(r, c)| (r * 6 + c) as f64);
        assert_eq!(resize_bilinear(&src, 4, 6), src);
        let up = resize_bilinear(&Array2::from_shape_vec((1, 2), vec![0.0, 1.0]).unwrap(), 1, 4);
        assert_eq!(up.row(0).to_vec(), vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn image_files_written() {
        let dir = tempfile::tempdir().unwrap();
        let img = TfImage { pixels: Array2::from_shape_fn((128, 128), |(r, c)| ((r + c) % 2) as f64) };
        write_image(&img, dir.path(), "x").unwrap();
        assert_eq!(fs::read(dir.path().join("x.f32")).unwrap().len(), 128 * 128 * 4);
        let p = pgm::read_pgm(&dir.path().join("x.pgm")).unwrap();
        assert_eq!((p.width, p.height), (128, 128));
        assert!(dir.path().join("x.meta.json").exists());
    }
}
