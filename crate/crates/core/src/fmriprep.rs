//! fMRI slice preprocessing (intensity scaling, 3×3 median, CLAHE) and
//! maximum-intensity-difference maps against the first time point.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::{FmriSeries, Label};
use crate::error::{Error, Result};

/// Row-major grey image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl SliceImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::Data(format!("{height}x{width} image cannot hold {} pixels", pixels.len())));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("slice pixels must lie in [0, 1]".into()));
        }
        Ok(SliceImage { height, width, pixels })
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.pixels[r * self.width + c]
    }
}

/// `raw / 255`, rejecting values outside `[0, 255]`.
pub fn normalize_intensity(height: usize, width: usize, raw: &[f64]) -> Result<SliceImage> {
    if let Some(v) = raw.iter().find(|v| !(0.0..=255.0).contains(*v)) {
        return Err(Error::Data(format!("raw intensity {v} outside [0, 255]")));
    }
    SliceImage::new(height, width, raw.iter().map(|v| v / 255.0).collect())
}

/// 3×3 median with replicated borders.
pub fn median_filter_3x3(img: &SliceImage) -> SliceImage {
    let (h, w) = (img.height as isize, img.width as isize);
    let mut out = Vec::with_capacity(img.pixels.len());
    let mut window = [0.0; 9];
    for r in 0..h {
        for c in 0..w {
            let mut i = 0;
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let rr = (r + dr).clamp(0, h - 1) as usize;
                    let cc = (c + dc).clamp(0, w - 1) as usize;
                    window[i] = img.at(rr, cc);
                    i += 1;
                }
            }
            window.sort_by(f64::total_cmp);
            out.push(window[4]);
        }
    }
    SliceImage { height: img.height, width: img.width, pixels: out }
}

const BINS: usize = 256;

fn bin_of(v: f64) -> usize {
    ((v * (BINS - 1) as f64).round() as usize).min(BINS - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClaheParams {
    /// Clip limit relative to the mean bin count; `f64::INFINITY` disables clipping.
    pub clip: f64,
    pub tiles_y: usize,
    pub tiles_x: usize,
}

impl Default for ClaheParams {
    fn default() -> Self {
        ClaheParams { clip: 2.0, tiles_y: 3, tiles_x: 3 }
    }
}

/// Mapping of one tile: cumulative distribution per bin, or `None` for a
/// tile with a single occupied bin (left untouched).
fn tile_mapping(values: impl Iterator<Item = f64>, clip: f64) -> Option<Vec<f64>> {
    let mut hist = vec![0.0; BINS];
    let mut count = 0.0;
    for v in values {
        hist[bin_of(v)] += 1.0;
        count += 1.0;
    }
    if hist.iter().filter(|h| **h > 0.0).count() <= 1 {
        return None;
    }
    if clip.is_finite() {
        let limit = (clip * count / BINS as f64).max(1.0);
        let mut excess = 0.0;
        for h in hist.iter_mut() {
            if *h > limit {
                excess += *h - limit;
                *h = limit;
            }
        }
        let share = excess / BINS as f64;
        hist.iter_mut().for_each(|h| *h += share);
    }
    let mut acc = 0.0;
    Some(
        hist.iter()
            .map(|h| {
                acc += h;
                (acc / count).clamp(0.0, 1.0)
            })
            .collect(),
    )
}

fn tile_bounds(n: usize, tiles: usize) -> Vec<(usize, usize)> {
    (0..tiles).map(|t| (t * n / tiles, (t + 1) * n / tiles)).collect()
}

/// Contrast-limited adaptive histogram equalization with a grid of tiles and
/// bilinear blending between neighbouring tile mappings.
pub fn clahe(img: &SliceImage, params: ClaheParams) -> Result<SliceImage> {
    if !(params.clip >= 1.0) {
        return Err(Error::Data(format!("CLAHE clip limit must be >= 1, got {}", params.clip)));
    }
    let ty = params.tiles_y.clamp(1, img.height);
    let tx = params.tiles_x.clamp(1, img.width);
    let rows = tile_bounds(img.height, ty);
    let cols = tile_bounds(img.width, tx);
    let mut maps = Vec::with_capacity(ty * tx);
    for &(r0, r1) in &rows {
        for &(c0, c1) in &cols {
            let vals = (r0..r1).flat_map(|r| (c0..c1).map(move |c| (r, c))).map(|(r, c)| img.at(r, c));
            maps.push(tile_mapping(vals, params.clip));
        }
    }
    let centers = |b: &[(usize, usize)]| -> Vec<f64> { b.iter().map(|(a, z)| 0.5 * (*a + *z) as f64 - 0.5).collect() };
    let (cy, cx) = (centers(&rows), centers(&cols));
    // neighbouring tile indices and blend weight along one axis
    let locate = |p: f64, cs: &[f64]| -> (usize, usize, f64) {
        if p <= cs[0] {
            return (0, 0, 0.0);
        }
        if p >= cs[cs.len() - 1] {
            let last = cs.len() - 1;
            return (last, last, 0.0);
        }
        let i = cs.iter().rposition(|c| *c <= p).unwrap();
        (i, i + 1, (p - cs[i]) / (cs[i + 1] - cs[i]))
    };
    let mut out = Vec::with_capacity(img.pixels.len());
    for r in 0..img.height {
        let (y0, y1, fy) = locate(r as f64, &cy);
        for c in 0..img.width {
            let (x0, x1, fx) = locate(c as f64, &cx);
            let v = img.at(r, c);
            let b = bin_of(v);
            let m = |ty: usize, tx: usize| maps[ty * cols.len() + tx].as_ref().map_or(v, |lut| lut[b]);
            let (a, bb, cc, d) = (m(y0, x0), m(y0, x1), m(y1, x0), m(y1, x1));
            let top = a + fx * (bb - a);
            let bottom = cc + fx * (d - cc);
            out.push((top + fy * (bottom - top)).clamp(0.0, 1.0));
        }
    }
    Ok(SliceImage { height: img.height, width: img.width, pixels: out })
}

/// CLAHE over the default 3×3 tile grid.
pub fn clahe_3x3(img: &SliceImage, clip: f64) -> Result<SliceImage> {
    clahe(img, ClaheParams { clip, ..Default::default() })
}

/// Normalize, median filter and CLAHE every image of a raw series.
pub fn preprocess_series(series: &FmriSeries, clip: f64) -> Result<FmriSeries> {
    let mut out = series.clone();
    for t in 0..series.timepoints {
        for s in 0..series.slices {
            let raw = series.image(t, s);
            let img = if series.normalized {
                SliceImage::new(series.height, series.width, raw.to_vec())?
            } else {
                normalize_intensity(series.height, series.width, raw)?
            };
            let processed = clahe_3x3(&median_filter_3x3(&img), clip)?;
            out.image_mut(t, s).copy_from_slice(&processed.pixels);
        }
    }
    out.normalized = true;
    Ok(out)
}

/// Scale a raw series into `[0, 1]` without further filtering.
pub fn normalize_series(series: &FmriSeries) -> Result<FmriSeries> {
    if series.normalized {
        return Ok(series.clone());
    }
    if let Some(v) = series.voxels.iter().find(|v| !(0.0..=255.0).contains(*v)) {
        return Err(Error::Data(format!("raw intensity {v} outside [0, 255]")));
    }
    let mut out = series.clone();
    out.voxels.iter_mut().for_each(|v| *v /= 255.0);
    out.normalized = true;
    Ok(out)
}

/// Per-voxel maximum absolute deviation from the first time point, one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffMap {
    pub slice: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

pub fn max_diff_map(series: &FmriSeries, slice_index: usize) -> Result<DiffMap> {
    if !series.normalized {
        return Err(Error::Data("difference maps require a normalized series".into()));
    }
    if series.timepoints < 2 {
        return Err(Error::Data("difference maps need at least two time points".into()));
    }
    if slice_index >= series.slices {
        return Err(Error::Data(format!("slice {slice_index} out of range ({} slices)", series.slices)));
    }
    let reference = series.image(0, slice_index);
    let mut values = vec![0.0f64; reference.len()];
    for t in 1..series.timepoints {
        for ((m, v), r) in values.iter_mut().zip(series.image(t, slice_index)).zip(reference) {
            *m = m.max((v - r).abs());
        }
    }
    Ok(DiffMap { slice: slice_index, height: series.height, width: series.width, values })
}

/// Mean and population standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn slice_stats(map: &DiffMap) -> (f64, f64) {
    mean_sd(&map.values)
}

/// One row of the per-slice group table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceStatRow {
    pub slice: usize,
    pub group: Label,
    pub mean: f64,
    pub sd: f64,
}

/// Pool the voxels of every subject's map per (group, slice) and summarize.
/// Rows are ordered by slice, then group.
pub fn group_slice_table(maps: &[(Label, Vec<DiffMap>)]) -> Vec<SliceStatRow> {
    let mut pooled: std::collections::BTreeMap<(usize, Label), Vec<f64>> = Default::default();
    for (label, subject_maps) in maps {
        for m in subject_maps {
            pooled.entry((m.slice, *label)).or_default().extend_from_slice(&m.values);
        }
    }
    pooled
        .into_iter()
        .map(|((slice, group), v)| {
            let (mean, sd) = mean_sd(&v);
            SliceStatRow { slice, group, mean, sd }
        })
        .collect()
}

/// CSV with columns `slice,group,mean,sd`.
pub fn write_slice_table(rows: &[SliceStatRow], path: &Path) -> Result<()> {
    let mut out = String::from("slice,group,mean,sd\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.slice, r.group, r.mean, r.sd));
    }
    fs::write(path, out)?;
    Ok(())
}
