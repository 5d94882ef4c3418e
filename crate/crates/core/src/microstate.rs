//! EEG microstates: global field power, polarity-invariant k-means on GFP-peak
//! topographies, sample-wise backfitting, and per-state statistics.
//!
//! Spatial correlation is taken between average-referenced (channel-mean
//! removed) maps, so both a constant offset and the sign of a map are
//! irrelevant to clustering and backfitting.

use ndarray::{Array2, ArrayView1};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::dataio::{ColumnKey, FeatureKind};
use crate::error::{Error, Result};
use crate::preprocess::{BandSet, Epoch};
use crate::rng::{derive_seed, substream};

/// Spatial standard deviation per time sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GfpSeries {
    pub fs_hz: f64,
    pub values: Vec<f64>,
}

fn gfp_of(row: ArrayView1<f64>) -> f64 {
    let n = row.len() as f64;
    let mean = row.sum() / n;
    (row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

pub fn gfp(e: &Epoch) -> Result<GfpSeries> {
    if e.n_channels() < 2 {
        return Err(Error::Data("global field power needs at least two channels".into()));
    }
    Ok(GfpSeries { fs_hz: e.fs_hz, values: e.samples.rows().into_iter().map(gfp_of).collect() })
}

/// Interior local maxima. A plateau counts once, at its first sample, when
/// both neighbours of the plateau are strictly lower.
pub fn find_gfp_peaks(g: &GfpSeries) -> Vec<usize> {
    let v = &g.values;
    let mut peaks = Vec::new();
    if v.len() < 3 {
        return peaks;
    }
    let mut t = 1;
    while t < v.len() - 1 {
        if v[t] > v[t - 1] {
            let mut end = t;
            while end + 1 < v.len() && v[end + 1] == v[t] {
                end += 1;
            }
            if end + 1 < v.len() && v[end + 1] < v[t] {
                peaks.push(t);
            }
            t = end + 1;
        } else {
            t += 1;
        }
    }
    peaks
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub n_init: usize,
    pub max_iter: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions { n_init: 20, max_iter: 100 }
    }
}

/// `k` unit-norm, zero-mean template maps labelled A, B, … in order of
/// decreasing explained variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicrostateModel {
    pub k: usize,
    pub n_channels: usize,
    pub templates: Vec<Vec<f64>>,
    pub gev: f64,
    /// Per-template share of the global explained variance.
    pub gev_per_state: Vec<f64>,
    pub seed: u64,
}

impl MicrostateModel {
    pub fn labels(&self) -> Vec<char> {
        (0..self.k).map(|i| (b'A' + i as u8) as char).collect()
    }
}

fn center_into(row: ArrayView1<f64>, out: &mut [f64]) {
    let mean = row.sum() / row.len() as f64;
    out.iter_mut().zip(row.iter()).for_each(|(o, v)| *o = v - mean);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> bool {
    let n = dot(v, v).sqrt();
    if n > 0.0 && n.is_finite() {
        v.iter_mut().for_each(|x| *x /= n);
        true
    } else {
        false
    }
}

/// Fix the sign so the largest-magnitude component is positive.
fn canonical_sign(v: &mut [f64]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Index of the template with largest squared projection; ties go to the lowest index.
fn assign(x: &[f64], templates: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, t) in templates.iter().enumerate() {
        let p = dot(x, t);
        if p * p > best.1 {
            best = (j, p * p);
        }
    }
    best
}

/// Same rule over precomputed projections.
fn best_of(proj: ArrayView1<f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, p) in proj.iter().enumerate() {
        let p2 = p * p;
        if p2 > best.1 {
            best = (j, p2);
        }
    }
    best
}

struct Restart {
    templates: Array2<f64>,
    labels: Vec<usize>,
    explained: Vec<f64>,
}

/// Leading eigenvector of the symmetric scatter matrix `s`, warm-started
/// at `start`. `None` when `s` is zero.
fn principal_direction(s: &Array2<f64>, start: ArrayView1<f64>) -> Option<Vec<f64>> {
    let mut v = start.to_vec();
    for _ in 0..200 {
        let mut next = s.dot(&ArrayView1::from(&v[..])).to_vec();
        if !normalize(&mut next) {
            return None;
        }
        // resolve the sign ambiguity before measuring the step
        if dot(&next, &v) < 0.0 {
            next.iter_mut().for_each(|x| *x = -*x);
        }
        let step: f64 = next.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
        v = next;
        if step < 1e-24 {
            break;
        }
    }
    Some(v)
}

/// `data` holds average-referenced maps as rows, `sq` their squared norms.
fn run_restart(data: &Array2<f64>, sq: &[f64], nonzero: &[usize], k: usize, opts: KMeansOptions, seed: u64) -> Restart {
    let mut rng = substream(seed, 0);
    let (n, c) = data.dim();
    let mut templates = Array2::<f64>::zeros((k, c));
    for (j, i) in sample(&mut rng, nonzero.len(), k).into_iter().enumerate() {
        let mut t = data.row(nonzero[i]).to_vec();
        normalize(&mut t);
        templates.row_mut(j).assign(&ArrayView1::from(&t[..]));
    }
    let mut labels = vec![usize::MAX; n];
    let mut fit = vec![0.0; n];
    // per-cluster scatter `Σ x xᵀ` and size, updated only for maps that move
    let mut scatter = vec![Array2::<f64>::zeros((c, c)); k];
    let mut counts = vec![0usize; k];
    let is_nonzero: Vec<bool> = sq.iter().map(|v| *v > 0.0).collect();
    let outer = |x: ArrayView1<f64>| {
        let col = x.view().insert_axis(ndarray::Axis(1));
        col.dot(&col.t())
    };
    for _ in 0..opts.max_iter {
        let proj = data.dot(&templates.t());
        let mut moved: Vec<(usize, usize, usize)> = Vec::new();
        for i in 0..n {
            let (j, p2) = best_of(proj.row(i));
            fit[i] = p2;
            if labels[i] != j {
                moved.push((i, labels[i], j));
                labels[i] = j;
            }
        }
        if moved.is_empty() {
            break;
        }
        if moved.len() * 4 > nonzero.len() {
            for j in 0..k {
                let members: Vec<usize> = nonzero.iter().copied().filter(|&i| labels[i] == j).collect();
                let xj = data.select(ndarray::Axis(0), &members);
                scatter[j] = xj.t().dot(&xj);
                counts[j] = members.len();
            }
        } else {
            for &(i, from, to) in moved.iter().filter(|m| is_nonzero[m.0]) {
                let xx = outer(data.row(i));
                if from != usize::MAX {
                    scatter[from] -= &xx;
                    counts[from] -= 1;
                }
                scatter[to] += &xx;
                counts[to] += 1;
            }
        }
        let mut reseeded: Vec<usize> = Vec::new();
        for j in 0..k {
            let updated = if counts[j] == 0 { None } else { principal_direction(&scatter[j], templates.row(j)) };
            let t = match updated {
                Some(t) => t,
                None => {
                    // empty cluster: restart it from the worst-explained map
                    let worst = nonzero
                        .iter()
                        .copied()
                        .filter(|i| !reseeded.contains(i))
                        .min_by(|&a, &b| (fit[a] / sq[a]).total_cmp(&(fit[b] / sq[b])).then(a.cmp(&b)))
                        .unwrap_or(nonzero[0]);
                    reseeded.push(worst);
                    let mut t = data.row(worst).to_vec();
                    normalize(&mut t);
                    t
                }
            };
            templates.row_mut(j).assign(&ArrayView1::from(&t[..]));
        }
    }
    let proj = data.dot(&templates.t());
    for i in 0..n {
        let (j, p2) = best_of(proj.row(i));
        labels[i] = j;
        fit[i] = p2;
    }
    let mut explained = vec![0.0; k];
    for i in 0..n {
        explained[labels[i]] += fit[i];
    }
    Restart { templates, labels, explained }
}

/// Polarity-invariant ("modified") k-means on topographic maps
/// (`maps` is `[n_maps, n_channels]`).
pub fn fit_microstates(maps: &Array2<f64>, k: usize, seed: u64, opts: KMeansOptions) -> Result<MicrostateModel> {
    let (n_maps, n_channels) = maps.dim();
    if k == 0 {
        return Err(Error::Data("k must be >= 1".into()));
    }
    if n_maps < k {
        return Err(Error::Data(format!("{n_maps} maps cannot form {k} clusters")));
    }
    let mut data = Array2::<f64>::zeros((n_maps, n_channels));
    let mut centered = vec![0.0; n_channels];
    for (row, mut out) in maps.rows().into_iter().zip(data.rows_mut()) {
        center_into(row, &mut centered);
        out.assign(&ArrayView1::from(&centered[..]));
    }
    let sq: Vec<f64> = data.rows().into_iter().map(|x| x.dot(&x)).collect();
    let total: f64 = sq.iter().sum();
    let nonzero: Vec<usize> = (0..n_maps).filter(|&i| sq[i] > 0.0).collect();
    if nonzero.is_empty() || total <= 0.0 {
        return Err(Error::Data("all maps are zero after average reference".into()));
    }
    if nonzero.len() < k {
        return Err(Error::Data(format!("only {} non-zero maps for {k} clusters", nonzero.len())));
    }

    let mut best: Option<(f64, Restart)> = None;
    for r in 0..opts.n_init.max(1) {
        let run = run_restart(&data, &sq, &nonzero, k, opts, derive_seed(seed, r as u64));
        let gev = run.explained.iter().sum::<f64>() / total;
        if best.as_ref().is_none_or(|(g, _)| gev > *g) {
            best = Some((gev, run));
        }
    }
    let (gev, run) = best.expect("at least one restart");

    let first_seen = |j: usize| run.labels.iter().position(|&l| l == j).unwrap_or(usize::MAX);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        run.explained[b].total_cmp(&run.explained[a]).then(first_seen(a).cmp(&first_seen(b)))
    });
    let templates = order
        .iter()
        .map(|&j| {
            let mut t = run.templates.row(j).to_vec();
            canonical_sign(&mut t);
            t
        })
        .collect();
    let gev_per_state = order.iter().map(|&j| run.explained[j] / total).collect();
    Ok(MicrostateModel { k, n_channels, templates, gev: gev.clamp(0.0, 1.0), gev_per_state, seed })
}

/// Per-sample state indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSequence {
    pub fs_hz: f64,
    pub labels: Vec<usize>,
}

/// Label every sample with the template of maximal absolute spatial correlation.
pub fn backfit(m: &MicrostateModel, e: &Epoch) -> Result<LabelSequence> {
    if e.n_channels() != m.n_channels {
        return Err(Error::Data(format!(
            "epoch has {} channels, model was fitted on {}",
            e.n_channels(),
            m.n_channels
        )));
    }
    let mut buf = vec![0.0; m.n_channels];
    let labels = e
        .samples
        .rows()
        .into_iter()
        .map(|row| {
            center_into(row, &mut buf);
            assign(&buf, &m.templates).0
        })
        .collect();
    Ok(LabelSequence { fs_hz: e.fs_hz, labels })
}

/// The four per-state statistics for one label sequence.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StateFeatures {
    pub duration_ms: f64,
    pub occurrence_per_s: f64,
    pub coverage_pct: f64,
    pub mean_gfp_uv: f64,
}

impl StateFeatures {
    pub fn get(&self, kind: FeatureKind) -> f64 {
        match kind {
            FeatureKind::DurationMs => self.duration_ms,
            FeatureKind::OccurrencePerS => self.occurrence_per_s,
            FeatureKind::CoveragePct => self.coverage_pct,
            FeatureKind::MeanGfpUv => self.mean_gfp_uv,
        }
    }
}

/// Duration, occurrence, coverage and mean GFP for each of `k` states.
/// Segments touching the window edges count in full; absent states are all zero.
pub fn extract_features(labels: &LabelSequence, g: &GfpSeries, k: usize) -> Result<Vec<StateFeatures>> {
    let n = labels.labels.len();
    if g.values.len() != n {
        return Err(Error::Data(format!("{n} labels but {} GFP samples", g.values.len())));
    }
    if labels.fs_hz != g.fs_hz {
        return Err(Error::Data("label and GFP sampling rates differ".into()));
    }
    if let Some(&bad) = labels.labels.iter().find(|&&l| l >= k) {
        return Err(Error::Data(format!("state {bad} out of range for k={k}")));
    }
    let fs = labels.fs_hz;
    let total_s = n as f64 / fs;
    let mut segments = vec![0usize; k];
    let mut samples = vec![0usize; k];
    let mut gfp_sum = vec![0.0; k];
    let mut prev = usize::MAX;
    for (&l, &v) in labels.labels.iter().zip(&g.values) {
        if l != prev {
            segments[l] += 1;
            prev = l;
        }
        samples[l] += 1;
        gfp_sum[l] += v;
    }
    Ok((0..k)
        .map(|s| {
            if segments[s] == 0 {
                return StateFeatures::default();
            }
            let occupied_s = samples[s] as f64 / fs;
            StateFeatures {
                duration_ms: occupied_s / segments[s] as f64 * 1000.0,
                occurrence_per_s: segments[s] as f64 / total_s,
                coverage_pct: occupied_s / total_s * 100.0,
                mean_gfp_uv: gfp_sum[s] / samples[s] as f64,
            }
        })
        .collect())
}

/// Canonical feature order: band, then k, then state, then feature.
pub fn feature_columns(band_names: &[String], ks: &[usize]) -> Vec<ColumnKey> {
    let mut cols = Vec::new();
    for band in band_names {
        for &k in ks {
            for state in 0..k {
                for feature in FeatureKind::ALL {
                    cols.push(ColumnKey { band: band.clone(), k, state, feature });
                }
            }
        }
    }
    cols
}

/// Dimension of the feature vector: `Σ_k 4·k` per band.
pub fn feature_dimension(n_bands: usize, ks: &[usize]) -> usize {
    n_bands * ks.iter().map(|k| 4 * k).sum::<usize>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub columns: Vec<ColumnKey>,
    pub values: Vec<f64>,
}

/// Topographies at the GFP peaks of a band-limited epoch. Falls back to every
/// non-zero sample when there are fewer than `min_maps` peaks.
pub fn peak_maps(e: &Epoch, min_maps: usize) -> Result<(GfpSeries, Array2<f64>)> {
    let g = gfp(e)?;
    let mut idx: Vec<usize> = find_gfp_peaks(&g).into_iter().filter(|&t| g.values[t] > 0.0).collect();
    if idx.len() < min_maps {
        idx = (0..g.values.len()).filter(|&t| g.values[t] > 0.0).collect();
    }
    let mut maps = Array2::zeros((idx.len(), e.n_channels()));
    for (r, &t) in idx.iter().enumerate() {
        maps.row_mut(r).assign(&e.samples.row(t));
    }
    Ok((g, maps))
}

/// Seed used for the model of band `band_index` with `k` states.
pub fn model_seed(seed: u64, band_index: usize, k: usize) -> u64 {
    derive_seed(derive_seed(seed, band_index as u64), k as u64)
}

/// Fit one model per k on the given maps. `None` when the maps are all zero.
pub fn fit_models(maps: &Array2<f64>, ks: &[usize], seed: u64, band_index: usize, opts: KMeansOptions) -> Result<Option<Vec<MicrostateModel>>> {
    if maps.nrows() == 0 {
        return Ok(None);
    }
    ks.iter()
        .map(|&k| fit_microstates(maps, k, model_seed(seed, band_index, k), opts))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Features of one window given fitted models, `models[band][k_index]`;
/// a `None` band (silent signal) contributes zeros.
pub fn window_features(bandset: &BandSet, ks: &[usize], models: &[Option<Vec<MicrostateModel>>]) -> Result<FeatureVector> {
    let names: Vec<String> = bandset.bands.iter().map(|(b, _)| b.name.clone()).collect();
    let columns = feature_columns(&names, ks);
    let mut values = Vec::with_capacity(columns.len());
    for ((_, epoch), band_models) in bandset.bands.iter().zip(models) {
        let g = gfp(epoch)?;
        match band_models {
            Some(ms) => {
                for (m, &k) in ms.iter().zip(ks) {
                    let labels = backfit(m, epoch)?;
                    for f in extract_features(&labels, &g, k)? {
                        values.extend(FeatureKind::ALL.iter().map(|&kind| f.get(kind)));
                    }
                }
            }
            None => values.extend(std::iter::repeat_n(0.0, feature_dimension(1, ks))),
        }
    }
    debug_assert_eq!(values.len(), columns.len());
    Ok(FeatureVector { columns, values })
}

/// Per-window pipeline: fit every (band, k) model on this window's GFP-peak
/// maps, backfit, and concatenate the statistics.
pub fn build_feature_vector(bandset: &BandSet, ks: &[usize], seed: u64, opts: KMeansOptions) -> Result<FeatureVector> {
    let max_k = ks.iter().copied().max().unwrap_or(1);
    let mut models = Vec::with_capacity(bandset.bands.len());
    for (bi, (_, epoch)) in bandset.bands.iter().enumerate() {
        let (_, maps) = peak_maps(epoch, max_k)?;
        models.push(fit_models(&maps, ks, seed, bi, opts)?);
    }
    window_features(bandset, ks, &models)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::BandSpec;
    use rand::Rng;

    fn epoch(rows: Vec<Vec<f64>>, fs: f64) -> Epoch {
        let n = rows.len();
        let c = rows[0].len();
        Epoch {
            subject_id: "s".into(),
            window_index: 0,
            fs_hz: fs,
            samples: Array2::from_shape_fn((n, c), |(t, ch)| rows[t][ch]),
        }
    }

    fn series(v: &[f64]) -> GfpSeries {
        GfpSeries { fs_hz: 1.0, values: v.to_vec() }
    }

    #[test]
    fn gfp_fixtures() {
        let e = epoch(vec![vec![3.0, 3.0, 3.0], vec![1.0, -1.0, 0.0]], 1.0);
        let g = gfp(&e).unwrap();
        assert_eq!(g.values[0], 0.0);
        let two = gfp(&epoch(vec![vec![1.0, -1.0]], 1.0)).unwrap();
        assert!((two.values[0] - 1.0).abs() < 1e-15);
        let shifted = gfp(&epoch(vec![vec![101.0, 99.0]], 1.0)).unwrap();
        assert!((shifted.values[0] - 1.0).abs() < 1e-12);
        assert!(gfp(&epoch(vec![vec![1.0]], 1.0)).is_err());
    }

    #[test]
    fn gfp_scales_with_abs_alpha() {
        let e = epoch(vec![vec![0.5, 2.0, -1.0, 4.0]], 1.0);
        let base = gfp(&e).unwrap().values[0];
        let scaled = gfp(&e.with_samples(e.samples.mapv(|v| v * -4.0))).unwrap().values[0];
        assert_eq!(scaled, 4.0 * base);
    }

    #[test]
    fn peak_fixtures() {
        assert!(find_gfp_peaks(&series(&[0.0, 1.0, 2.0, 3.0])).is_empty());
        assert_eq!(find_gfp_peaks(&series(&[0.0, 1.0, 0.0, 2.0, 0.0])), vec![1, 3]);
        assert_eq!(find_gfp_peaks(&series(&[0.0, 1.0, 1.0, 0.0])), vec![1]);
        assert!(find_gfp_peaks(&series(&[0.0, 1.0, 1.0, 2.0])).is_empty());
        assert!(find_gfp_peaks(&series(&[1.0, 0.0])).is_empty());
    }

    fn orthogonal_pair(c: usize) -> (Vec<f64>, Vec<f64>) {
        let mut a: Vec<f64> = (0..c).map(|i| if i < c / 2 { 1.0 } else { -1.0 }).collect();
        let mut b: Vec<f64> = (0..c).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        normalize(&mut a);
        normalize(&mut b);
        (a, b)
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let mut x = a.to_vec();
        let mut y = b.to_vec();
        let (mx, my) = (x.iter().sum::<f64>() / x.len() as f64, y.iter().sum::<f64>() / y.len() as f64);
        x.iter_mut().for_each(|v| *v -= mx);
        y.iter_mut().for_each(|v| *v -= my);
        dot(&x, &y) / (dot(&x, &x) * dot(&y, &y)).sqrt()
    }

    #[test]
    fn recovers_two_orthogonal_templates() {
        let (a, b) = orthogonal_pair(8);
        let mut rng = crate::rng::rng_from_seed(5);
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|i| {
                let amp = rng.random_range(-3.0..3.0);
                let t = if i % 3 == 0 { &a } else { &b };
                t.iter().map(|v| v * amp).collect()
            })
            .collect();
        let maps = Array2::from_shape_fn((60, 8), |(i, c)| rows[i][c]);
        let m = fit_microstates(&maps, 2, 1, KMeansOptions::default()).unwrap();
        for truth in [&a, &b] {
            let best = m.templates.iter().map(|t| corr(t, truth).abs()).fold(0.0, f64::max);
            assert!(best > 0.999, "{best}");
        }
        assert!(m.gev > 0.999);
        for t in &m.templates {
            assert!((dot(t, t) - 1.0).abs() < 1e-12);
        }
        assert_eq!(m.labels(), vec!['A', 'B']);
        // b is drawn twice as often, so it explains more variance and becomes A
        assert!(corr(&m.templates[0], &b).abs() > 0.999);
    }

    #[test]
    fn sign_flipped_maps_give_identical_fit() {
        let mut rng = crate::rng::rng_from_seed(11);
        let maps = Array2::from_shape_fn((40, 6), |_| rng.random_range(-1.0..1.0));
        let flipped = maps.mapv(|v| -v);
        let m1 = fit_microstates(&maps, 3, 9, KMeansOptions::default()).unwrap();
        let m2 = fit_microstates(&flipped, 3, 9, KMeansOptions::default()).unwrap();
        assert_eq!(m1, m2);
        let e1 = epoch(maps.rows().into_iter().map(|r| r.to_vec()).collect(), 1.0);
        let e2 = epoch(flipped.rows().into_iter().map(|r| r.to_vec()).collect(), 1.0);
        assert_eq!(backfit(&m1, &e1).unwrap(), backfit(&m2, &e2).unwrap());
    }

    #[test]
    fn fit_errors() {
        let maps = Array2::zeros((10, 4));
        assert!(matches!(fit_microstates(&maps, 2, 0, KMeansOptions::default()), Err(Error::Data(_))));
        let maps = Array2::from_elem((1, 4), 1.0);
        assert!(fit_microstates(&maps, 2, 0, KMeansOptions::default()).is_err());
    }

    #[test]
    fn fit_is_deterministic() {
        let mut rng = crate::rng::rng_from_seed(2);
        let maps = Array2::from_shape_fn((80, 10), |_| rng.random_range(-1.0..1.0));
        let a = fit_microstates(&maps, 4, 77, KMeansOptions::default()).unwrap();
        let b = fit_microstates(&maps, 4, 77, KMeansOptions::default()).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a.gev));
        let sum: f64 = a.gev_per_state.iter().sum();
        assert!((sum - a.gev).abs() < 1e-12);
        assert!(a.gev_per_state.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn backfit_templates_and_negations() {
        let (a, b) = orthogonal_pair(4);
        let m = MicrostateModel {
            k: 2,
            n_channels: 4,
            templates: vec![a.clone(), b.clone()],
            gev: 1.0,
            gev_per_state: vec![0.5, 0.5],
            seed: 0,
        };
        let neg_b: Vec<f64> = b.iter().map(|v| -v).collect();
        let e = epoch(vec![a.clone(), b.clone(), neg_b, vec![0.0; 4]], 1.0);
        assert_eq!(backfit(&m, &e).unwrap().labels, vec![0, 1, 1, 0]);
        assert!(backfit(&m, &epoch(vec![vec![0.0; 3]], 1.0)).is_err());
    }

    #[test]
    fn feature_fixture_from_hand_enumeration() {
        let labels = LabelSequence { fs_hz: 1.0, labels: vec![0, 0, 1, 1, 1, 0] };
        let g = series(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let f = extract_features(&labels, &g, 3).unwrap();
        assert_eq!(f[0].duration_ms, 1500.0);
        assert!((f[0].occurrence_per_s - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(f[0].coverage_pct, 50.0);
        assert_eq!(f[0].mean_gfp_uv, 3.0);
        assert_eq!(f[1].duration_ms, 3000.0);
        assert!((f[1].occurrence_per_s - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(f[1].coverage_pct, 50.0);
        assert_eq!(f[2], StateFeatures::default());
    }

    #[test]
    fn single_state_window() {
        let labels = LabelSequence { fs_hz: 250.0, labels: vec![2; 2500] };
        let g = GfpSeries { fs_hz: 250.0, values: vec![1.0; 2500] };
        let f = extract_features(&labels, &g, 4).unwrap();
        assert_eq!(f[2].duration_ms, 10_000.0);
        assert_eq!(f[2].occurrence_per_s, 0.1);
        assert_eq!(f[2].coverage_pct, 100.0);
    }

    #[test]
    fn extract_rejects_mismatch() {
        let labels = LabelSequence { fs_hz: 1.0, labels: vec![0, 1] };
        assert!(extract_features(&labels, &series(&[1.0]), 2).is_err());
        assert!(extract_features(&labels, &series(&[1.0, 1.0]), 1).is_err());
    }

    #[test]
    fn dimensions_per_k() {
        assert_eq!(feature_dimension(5, &[4, 5, 6, 7]), 440);
        for (k, d) in [(4, 80), (5, 100), (6, 120), (7, 140)] {
            assert_eq!(feature_dimension(5, &[k]), d);
        }
    }

    fn bandset_of(e: &Epoch) -> BandSet {
        BandSet {
            subject_id: e.subject_id.clone(),
            window_index: 0,
            bands: BandSpec::defaults().into_iter().map(|b| (b, e.clone())).collect(),
        }
    }

    #[test]
    fn zero_epoch_gives_zero_vector() {
        let e = epoch(vec![vec![0.0; 8]; 200], 100.0);
        let v = build_feature_vector(&bandset_of(&e), &[4, 5, 6, 7], 1, KMeansOptions::default()).unwrap();
        assert_eq!(v.values.len(), 440);
        assert!(v.values.iter().all(|x| *x == 0.0));
        let v4 = build_feature_vector(&bandset_of(&e), &[4], 1, KMeansOptions::default()).unwrap();
        assert_eq!(v4.values.len(), 80);
        assert_eq!(v4.columns[0].to_string(), "delta.k4.A.duration_ms");
        assert_eq!(v4.columns[79].to_string(), "gamma.k4.D.mean_gfp_uv");
    }

    #[test]
    fn random_epoch_features_are_consistent() {
        let mut rng = crate::rng::rng_from_seed(8);
        let rows: Vec<Vec<f64>> = (0..500).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let e = epoch(rows, 100.0);
        let opts = KMeansOptions { n_init: 3, max_iter: 50 };
        let v = build_feature_vector(&bandset_of(&e), &[4, 7], 3, opts).unwrap();
        assert_eq!(v.values.len(), 5 * (16 + 28));
        assert!(v.values.iter().all(|x| x.is_finite()));
        // coverage of each (band, k) block sums to 100
        let mut sums = std::collections::BTreeMap::new();
        for (c, x) in v.columns.iter().zip(&v.values) {
            if c.feature == FeatureKind::CoveragePct {
                *sums.entry((c.band.clone(), c.k)).or_insert(0.0) += x;
            }
        }
        for s in sums.values() {
            assert!((s - 100.0).abs() < 1e-9);
        }
    }
}
