//! Two-group synthetic EEG with a known microstate effect.
//!
//! Every band carries its own state sequence: a fixed, average-referenced
//! topography per state modulated by a carrier at the band centre. Dwell
//! times are gamma distributed, the next state is drawn by weight among the
//! other states, and a per-subject lognormal rate factor shortens or
//! stretches every dwell (moving occurrence while leaving coverage alone).
//! The tinnitus group applies the configured effects on top.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::{write_recording, BandSpec, ColumnKey, EegFormat, EegRecording, FeatureKind, Label};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, substream, Rng};

/// Occurrence multiplier for state A of the gamma band that yields a
/// subject-level Cohen's d of about 2 with the default spec.
pub const CALIBRATED_OCCURRENCE_MULTIPLIER: f64 = 0.47;

/// Shifts that `SynthSpec::calibrated` adds in the alpha and beta bands.
/// One calibrated feature alone caps accuracy well below what the study
/// needs, so the tinnitus group also enters state A more often there.
/// Lowering A instead would hand its letter to B once letters follow GEV.
pub const SECONDARY_EFFECTS: [(&str, usize, FeatureKind, f64); 2] =
    [("alpha", 0, FeatureKind::OccurrencePerS, 4.0), ("beta", 0, FeatureKind::OccurrencePerS, 4.0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthEffect {
    pub band: String,
    pub state: usize,
    /// `OccurrencePerS` scales the weight of entering the state,
    /// `DurationMs` scales its mean dwell.
    pub feature: FeatureKind,
    pub multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_per_group: usize,
    pub n_channels: usize,
    pub fs_hz: f64,
    pub duration_s: f64,
    pub k_true: usize,
    pub bands: Vec<BandSpec>,
    pub amplitude_uv: f64,
    /// State `s` is scaled by `state_gain^s`, so letters follow state order.
    pub state_gain: f64,
    /// Mean dwell in carrier cycles of the band centre.
    pub cycles_per_state: f64,
    pub dwell_shape: f64,
    /// Log-SD of the per-subject, per-band rate factor.
    pub rate_sd: f64,
    pub noise_sd: f64,
    /// Shifts applied to the tinnitus group; the first is the target.
    pub effects: Vec<SynthEffect>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_per_group: 40,
            n_channels: 16,
            fs_hz: 250.0,
            duration_s: 60.0,
            k_true: 4,
            bands: BandSpec::defaults(),
            amplitude_uv: 10.0,
            state_gain: 0.6,
            cycles_per_state: 2.0,
            dwell_shape: 4.0,
            rate_sd: 0.15,
            noise_sd: 0.5,
            effects: Vec::new(),
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Default spec with the calibrated gamma-band occurrence effect as the
    /// target, followed by the secondary shifts.
    pub fn calibrated(seed: u64) -> Self {
        let primary = SynthEffect {
            band: "gamma".into(),
            state: 0,
            feature: FeatureKind::OccurrencePerS,
            multiplier: CALIBRATED_OCCURRENCE_MULTIPLIER,
        };
        let secondary = SECONDARY_EFFECTS
            .iter()
            .map(|&(band, state, feature, multiplier)| SynthEffect { band: band.into(), state, feature, multiplier });
        SynthSpec { effects: std::iter::once(primary).chain(secondary).collect(), seed, ..Default::default() }
    }

    /// Feature column the first effect should move, when the pipeline
    /// clusters with `k = k_true`.
    pub fn target_column(&self) -> Option<ColumnKey> {
        self.effects.first().map(|e| ColumnKey { band: e.band.clone(), k: self.k_true, state: e.state, feature: e.feature })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_per_group < 2 {
            return bad(format!("n_per_group must be >= 2, got {}", self.n_per_group));
        }
        if self.k_true < 2 || self.n_channels <= self.k_true {
            return bad(format!("need 2 <= k_true < n_channels, got k_true {} with {} channels", self.k_true, self.n_channels));
        }
        if !(self.fs_hz > 0.0 && self.duration_s > 0.0 && self.amplitude_uv > 0.0) {
            return bad("fs_hz, duration_s and amplitude_uv must be positive".into());
        }
        if !(self.state_gain > 0.0 && self.cycles_per_state > 0.0 && self.dwell_shape > 0.0) {
            return bad("state_gain, cycles_per_state and dwell_shape must be positive".into());
        }
        if !(self.rate_sd >= 0.0 && self.noise_sd >= 0.0) {
            return bad("rate_sd and noise_sd must be non-negative".into());
        }
        if self.bands.is_empty() || self.bands.iter().any(|b| !(b.lo_hz > 0.0 && b.lo_hz < b.hi_hz && b.hi_hz < self.fs_hz / 2.0)) {
            return bad("bands must be non-empty and lie below Nyquist".into());
        }
        for e in &self.effects {
            if !self.bands.iter().any(|b| b.name == e.band) {
                return bad(format!("effect band `{}` is not among the bands", e.band));
            }
            if e.state >= self.k_true {
                return bad(format!("effect state {} >= k_true {}", e.state, self.k_true));
            }
            if !(e.multiplier > 0.0 && e.multiplier.is_finite()) {
                return bad(format!("effect multiplier must be positive, got {}", e.multiplier));
            }
            if !matches!(e.feature, FeatureKind::OccurrencePerS | FeatureKind::DurationMs) {
                return bad(format!("effects on {} are not supported", e.feature.as_str()));
            }
        }
        Ok(())
    }
}

/// Zero-mean orthonormal topographies, one set per band: cosine patterns
/// over a shared random channel order, so energy is spread over every
/// channel and per-channel normalization leaves the state amplitudes in
/// order. Neighbouring bands draw disjoint cosine orders when the channel
/// count allows, which keeps filter leakage from one band from voting for a
/// particular state of the next.
fn templates(k: usize, n_channels: usize, n_bands: usize, rng: &mut Rng) -> Vec<Vec<Vec<f64>>> {
    let mut order: Vec<usize> = (0..n_channels).collect();
    order.shuffle(rng);
    let groups = ((n_channels - 1) / k).clamp(1, 3);
    (0..n_bands)
        .map(|b| {
            let first = (b % groups) * k + 1;
            (first..first + k)
                .map(|idx| {
                    let mut t = vec![0.0; n_channels];
                    for (pos, &ch) in order.iter().enumerate() {
                        t[ch] = (PI * idx as f64 * (pos as f64 + 0.5) / n_channels as f64).cos();
                    }
                    let norm = t.iter().map(|x| x * x).sum::<f64>().sqrt();
                    t.iter_mut().for_each(|x| *x /= norm);
                    t
                })
                .collect()
        })
        .collect()
}

/// Piecewise-constant state sequence of `n` samples.
fn state_sequence(n: usize, spec: &SynthSpec, band: &BandSpec, label: Label, rng: &mut Rng) -> Vec<usize> {
    let k = spec.k_true;
    let mut weights = vec![1.0; k];
    let mut dwell_means = vec![spec.cycles_per_state / band.center_hz(); k];
    if label == Label::Tinnitus {
        for e in spec.effects.iter().filter(|e| e.band == band.name) {
            match e.feature {
                FeatureKind::OccurrencePerS => weights[e.state] *= e.multiplier,
                _ => dwell_means[e.state] *= e.multiplier,
            }
        }
    }
    let rate = if spec.rate_sd > 0.0 { LogNormal::new(0.0, spec.rate_sd).unwrap().sample(rng) } else { 1.0 };
    let dwell: Vec<Gamma<f64>> =
        dwell_means.iter().map(|m| Gamma::new(spec.dwell_shape, m / (spec.dwell_shape * rate)).unwrap()).collect();
    let draw = |rng: &mut Rng, exclude: Option<usize>| -> usize {
        let total: f64 = (0..k).filter(|s| Some(*s) != exclude).map(|s| weights[s]).sum();
        let mut u = rng.random::<f64>() * total;
        for s in 0..k {
            if Some(s) == exclude {
                continue;
            }
            if u < weights[s] {
                return s;
            }
            u -= weights[s];
        }
        (0..k).rev().find(|s| Some(*s) != exclude).unwrap()
    };
    let mut seq = Vec::with_capacity(n);
    let mut state = draw(rng, None);
    while seq.len() < n {
        let len = ((dwell[state].sample(rng) * spec.fs_hz).round() as usize).max(1);
        seq.extend(std::iter::repeat_n(state, len.min(n - seq.len())));
        state = draw(rng, Some(state));
    }
    seq
}

/// Each band draws from its own substream of `seed`, so an effect in one
/// band leaves the others untouched.
fn subject(spec: &SynthSpec, maps: &[Vec<Vec<f64>>], id: String, label: Label, seed: u64) -> Result<EegRecording> {
    let n = (spec.duration_s * spec.fs_hz).round() as usize;
    let mut x = Array2::<f64>::zeros((n, spec.n_channels));
    for (b, (band, templates)) in spec.bands.iter().zip(maps).enumerate() {
        let rng = &mut substream(seed, 1 + b as u64);
        let seq = state_sequence(n, spec, band, label, rng);
        let phase = rng.random::<f64>() * 2.0 * PI;
        let w = 2.0 * PI * band.center_hz() / spec.fs_hz;
        let gains: Vec<f64> = (0..spec.k_true).map(|s| spec.amplitude_uv * spec.state_gain.powi(s as i32)).collect();
        for (t, &s) in seq.iter().enumerate() {
            let c = gains[s] * (w * t as f64 + phase).sin();
            for (v, tv) in x.row_mut(t).iter_mut().zip(&templates[s]) {
                *v += c * tv;
            }
        }
    }
    if spec.noise_sd > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sd).unwrap();
        let rng = &mut substream(seed, 0);
        x.iter_mut().for_each(|v| *v += noise.sample(rng));
    }
    EegRecording::new(id, label, spec.fs_hz, x)
}

/// Healthy subjects `h001..`, then tinnitus subjects `t001..`.
pub fn synth_eeg(spec: &SynthSpec) -> Result<Vec<EegRecording>> {
    spec.validate()?;
    let mut trng = substream(spec.seed, 0);
    let maps = templates(spec.k_true, spec.n_channels, spec.bands.len(), &mut trng);
    let mut out = Vec::with_capacity(2 * spec.n_per_group);
    for (g, label) in [Label::Healthy, Label::Tinnitus].into_iter().enumerate() {
        let prefix = if label == Label::Healthy { 'h' } else { 't' };
        for i in 0..spec.n_per_group {
            let seed = derive_seed(spec.seed, 1 + (g * spec.n_per_group + i) as u64);
            out.push(subject(spec, &maps, format!("{prefix}{:03}", i + 1), label, seed)?);
        }
    }
    Ok(out)
}

/// Write every recording as `<subject>.<ext>` with its sidecar.
pub fn write_study(recordings: &[EegRecording], dir: &Path, format: EegFormat) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let ext = match format {
        EegFormat::Csv => "csv",
        EegFormat::Eegr => "eegr",
    };
    for r in recordings {
        write_recording(r, &dir.join(format!("{}.{ext}", r.subject_id)), format)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec { n_per_group: 2, n_channels: 6, duration_s: 4.0, ..SynthSpec::calibrated(3) }
    }

    #[test]
    fn shapes_ids_and_labels() {
        let recs = synth_eeg(&small()).unwrap();
        assert_eq!(recs.len(), 4);
        assert_eq!(recs[0].subject_id, "h001");
        assert_eq!(recs[3].subject_id, "t002");
        assert_eq!(recs[3].label, Label::Tinnitus);
        assert_eq!(recs[0].samples.dim(), (1000, 6));
        assert!(recs[0].samples.iter().all(|v| v.abs() < 150.0));
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = synth_eeg(&small()).unwrap();
        let b = synth_eeg(&small()).unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        write_study(&a, &dir.path().join("a"), EegFormat::Eegr).unwrap();
        write_study(&b, &dir.path().join("b"), EegFormat::Eegr).unwrap();
        for r in &a {
            let f = format!("{}.eegr", r.subject_id);
            assert_eq!(std::fs::read(dir.path().join("a").join(&f)).unwrap(), std::fs::read(dir.path().join("b").join(&f)).unwrap());
        }
        let c = synth_eeg(&SynthSpec { seed: 4, ..small() }).unwrap();
        assert_ne!(a[0].samples, c[0].samples);
    }

    #[test]
    fn templates_are_orthonormal_and_referenced() {
        let t = templates(4, 16, 5, &mut crate::rng::rng_from_seed(1));
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        for band in &t {
            for i in 0..4 {
                assert!(band[i].iter().sum::<f64>().abs() < 1e-12);
                for j in 0..4 {
                    assert!((dot(&band[i], &band[j]) - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
                }
            }
        }
        for b in 1..5 {
            for i in 0..4 {
                for j in 0..4 {
                    assert!(dot(&t[b - 1][i], &t[b][j]).abs() < 1e-12, "bands {} and {b}", b - 1);
                }
            }
        }
        // too few channels for disjoint sets: every band shares one
        let shared = templates(4, 6, 3, &mut crate::rng::rng_from_seed(1));
        assert_eq!(shared[0], shared[2]);
    }

    #[test]
    fn occurrence_effect_moves_segment_counts() {
        let spec = SynthSpec { effects: vec![SynthEffect { band: "gamma".into(), state: 0, feature: FeatureKind::OccurrencePerS, multiplier: 0.3 }], ..SynthSpec::default() };
        let band = spec.bands.iter().find(|b| b.name == "gamma").unwrap().clone();
        let count = |label| {
            let mut rng = crate::rng::rng_from_seed(2);
            let seq = state_sequence(200_000, &spec, &band, label, &mut rng);
            let starts = (0..seq.len()).filter(|&t| seq[t] == 0 && (t == 0 || seq[t - 1] != 0)).count();
            let cover = seq.iter().filter(|s| **s == 0).count() as f64 / seq.len() as f64;
            (starts, cover)
        };
        let (h, hc) = count(Label::Healthy);
        let (t, tc) = count(Label::Tinnitus);
        assert!((t as f64) < 0.6 * h as f64, "{h} {t}");
        assert!(tc < hc);
        // no two consecutive segments share a state
        let mut rng = crate::rng::rng_from_seed(3);
        let seq = state_sequence(5000, &spec, &band, Label::Healthy, &mut rng);
        assert!((0..4).all(|s| seq.contains(&s)));
    }

    #[test]
    fn invalid_specs() {
        for spec in [
            SynthSpec { n_per_group: 1, ..small() },
            SynthSpec { k_true: 6, n_channels: 6, ..small() },
            SynthSpec { fs_hz: 60.0, ..small() },
            SynthSpec { effects: vec![SynthEffect { band: "kappa".into(), state: 0, feature: FeatureKind::OccurrencePerS, multiplier: 0.5 }], ..small() },
            SynthSpec { effects: vec![SynthEffect { band: "gamma".into(), state: 4, feature: FeatureKind::OccurrencePerS, multiplier: 0.5 }], ..small() },
            SynthSpec { effects: vec![SynthEffect { band: "gamma".into(), state: 0, feature: FeatureKind::CoveragePct, multiplier: 0.5 }], ..small() },
        ] {
            assert!(matches!(synth_eeg(&spec), Err(Error::Config(_))));
        }
    }
}
