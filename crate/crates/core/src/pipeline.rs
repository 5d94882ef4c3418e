//! End-to-end orchestration: recordings on disk to an [`EvalReport`].

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{
    read_recording, recording_format, write_feature_matrix, EegRecording, FeatureMatrix, FeatureRow, FitScope, Label,
    PipelineConfig,
};
use crate::error::{Error, Result};
use crate::eval::{compare_learners, cross_validate, effect_sizes, make_subject_folds, CvReport, DelongComparison, EffectRow, FoldPlan};
use crate::learn::Dataset;
use crate::microstate::{feature_columns, fit_models, gfp, peak_maps, window_features, KMeansOptions};
use crate::preprocess::{band_decompose, butterworth_bandpass, normalize_epoch, reject_artifacts, segment, ArtifactDecision, BandSet, Epoch};
use crate::timefreq::{gfp_to_image, write_image};

/// Significance level used for power in the effect table.
pub const EFFECT_ALPHA: f64 = 0.05;

/// Every readable recording (`.eegr` or `.csv` with a sidecar) in `dir`,
/// sorted by file name.
pub fn load_recordings(dir: &Path) -> Result<Vec<EegRecording>> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("input directory {} does not exist", dir.display())));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && recording_format(p).is_some())
        .collect();
    paths.sort();
    let recs: Vec<EegRecording> = paths
        .par_iter()
        .map(|p| read_recording(p, recording_format(p).unwrap()))
        .collect::<Result<_>>()?;
    if recs.is_empty() {
        return Err(Error::Data(format!("no recordings found in {}", dir.display())));
    }
    let mut ids: Vec<&str> = recs.iter().map(|r| r.subject_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Data(format!("subject {} appears in more than one recording", w[0])));
    }
    Ok(recs)
}

/// Kept windows of one recording, normalized.
#[derive(Debug, Clone)]
pub struct CleanWindows {
    pub epochs: Vec<Epoch>,
    pub n_dropped: usize,
}

/// Segment, prefilter, drop artifacts and z-score every window.
pub fn clean_windows(rec: &EegRecording, cfg: &PipelineConfig) -> Result<CleanWindows> {
    let mut epochs = Vec::new();
    let mut n_dropped = 0;
    for e in segment(rec, cfg.window_s)? {
        let e = if cfg.prefilter.enabled {
            butterworth_bandpass(&e, cfg.prefilter.lo_hz, cfg.prefilter.hi_hz, cfg.prefilter.order, true)?
        } else {
            e
        };
        match reject_artifacts(&e, cfg.artifact_limit_uv) {
            ArtifactDecision::Keep => epochs.push(normalize_epoch(&e).data),
            ArtifactDecision::Drop => n_dropped += 1,
        }
    }
    Ok(CleanWindows { epochs, n_dropped })
}

fn kmeans_options(cfg: &PipelineConfig) -> KMeansOptions {
    KMeansOptions { n_init: cfg.n_init, max_iter: cfg.max_iter }
}

/// Feature rows of one subject, one per kept window.
pub fn subject_features(windows: &[Epoch], cfg: &PipelineConfig) -> Result<Vec<Vec<f64>>> {
    let bandsets: Vec<BandSet> = windows
        .par_iter()
        .map(|e| band_decompose(e, &cfg.bands, cfg.decomposition, cfg.band_filter_order))
        .collect::<Result<_>>()?;
    let ks = &cfg.microstate_ks;
    let opts = kmeans_options(cfg);
    let max_k = ks.iter().copied().max().unwrap_or(1);
    match cfg.fit_scope {
        FitScope::Window => bandsets
            .par_iter()
            .map(|b| crate::microstate::build_feature_vector(b, ks, cfg.seed, opts).map(|f| f.values))
            .collect(),
        FitScope::Subject => {
            // one model per (band, k) fitted on the subject's pooled peak maps
            let models = (0..cfg.bands.len())
                .into_par_iter()
                .map(|bi| {
                    let mut pooled: Vec<ndarray::Array2<f64>> = Vec::new();
                    for b in &bandsets {
                        pooled.push(peak_maps(&b.bands[bi].1, max_k)?.1);
                    }
                    let views: Vec<_> = pooled.iter().map(|m| m.view()).collect();
                    let maps = ndarray::concatenate(ndarray::Axis(0), &views)
                        .map_err(|e| Error::Data(format!("cannot pool peak maps: {e}")))?;
                    fit_models(&maps, ks, cfg.seed, bi, opts)
                })
                .collect::<Result<Vec<_>>>()?;
            bandsets.par_iter().map(|b| window_features(b, ks, &models).map(|f| f.values)).collect()
        }
    }
}

/// Per-subject outcome of the feature stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSummary {
    pub subject_id: String,
    pub label: Label,
    pub n_windows: usize,
    /// Unknown when the report was built from a saved feature matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_dropped: Option<usize>,
}

/// Subject roster of a feature matrix, in row order.
pub fn subjects_from_matrix(m: &FeatureMatrix) -> Vec<SubjectSummary> {
    let mut out: Vec<SubjectSummary> = Vec::new();
    for r in &m.rows {
        match out.last_mut() {
            Some(s) if s.subject_id == r.subject_id => s.n_windows += 1,
            _ => out.push(SubjectSummary { subject_id: r.subject_id.clone(), label: r.label, n_windows: 1, n_dropped: None }),
        }
    }
    out
}

/// Feature matrix over all recordings, rows grouped by subject in input
/// order and by window within a subject. Optionally writes CWT images.
pub fn build_feature_matrix(
    recs: &[EegRecording],
    cfg: &PipelineConfig,
    image_dir: Option<&Path>,
) -> Result<(FeatureMatrix, Vec<SubjectSummary>)> {
    for r in recs {
        cfg.validate(Some(r.fs_hz))?;
    }
    let names: Vec<String> = cfg.bands.iter().map(|b| b.name.clone()).collect();
    let mut matrix = FeatureMatrix::new(feature_columns(&names, &cfg.microstate_ks))?;
    if let Some(dir) = image_dir {
        fs::create_dir_all(dir)?;
    }
    let per_subject: Vec<(Vec<Vec<f64>>, SubjectSummary)> = recs
        .par_iter()
        .map(|r| -> Result<_> {
            let clean = clean_windows(r, cfg)?;
            if let Some(dir) = image_dir {
                for e in &clean.epochs {
                    let img = gfp_to_image(&gfp(e)?)?;
                    write_image(&img, dir, &format!("{}_w{:03}", r.subject_id, e.window_index))?;
                }
            }
            let rows = subject_features(&clean.epochs, cfg)?;
            let summary = SubjectSummary {
                subject_id: r.subject_id.clone(),
                label: r.label,
                n_windows: rows.len(),
                n_dropped: Some(clean.n_dropped),
            };
            Ok((rows, summary))
        })
        .collect::<Result<_>>()?;
    let mut summaries = Vec::with_capacity(per_subject.len());
    for (rows, summary) in per_subject {
        for values in rows {
            matrix.push(FeatureRow { subject_id: summary.subject_id.clone(), label: summary.label, values })?;
        }
        summaries.push(summary);
    }
    if matrix.n_rows() == 0 {
        return Err(Error::Data("every window was rejected; no features to evaluate".into()));
    }
    Ok((matrix, summaries))
}

pub fn dataset_from_matrix(m: &FeatureMatrix) -> Result<Dataset> {
    let x = ndarray::Array2::from_shape_fn((m.n_rows(), m.n_cols()), |(i, j)| m.rows[i].values[j]);
    let y = m.rows.iter().map(|r| r.label.as_class()).collect();
    let ids = m.rows.iter().map(|r| r.subject_id.clone()).collect();
    Dataset::new(x, y, ids)
}

/// Everything one run produces, serialized as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub window_s: f64,
    pub n_subjects: usize,
    pub n_rows: usize,
    pub n_features: usize,
    pub subjects: Vec<SubjectSummary>,
    pub plan: FoldPlan,
    pub learners: Vec<CvReport>,
    pub comparisons: Vec<DelongComparison>,
    pub effects: Vec<EffectRow>,
}

/// Folds, cross-validation for every configured learner, DeLong and the
/// effect table.
pub fn evaluate_matrix(m: &FeatureMatrix, cfg: &PipelineConfig, subjects: Vec<SubjectSummary>) -> Result<EvalReport> {
    let ds = dataset_from_matrix(m)?;
    let mut roster: Vec<(String, Label)> = m.rows.iter().map(|r| (r.subject_id.clone(), r.label)).collect();
    roster.dedup();
    let plan = make_subject_folds(&roster, cfg.cv_folds, cfg.seed)?;
    let params = cfg.learner_params();
    let learners = cfg
        .learners
        .iter()
        .map(|&l| cross_validate(&ds, &plan, l, &params, cfg.seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        seed: cfg.seed,
        window_s: cfg.window_s,
        n_subjects: roster.len(),
        n_rows: m.n_rows(),
        n_features: m.n_cols(),
        subjects,
        plan,
        comparisons: compare_learners(&learners),
        learners,
        effects: effect_sizes(m, EFFECT_ALPHA)?,
    })
}

/// Recordings in `input` → `features.csv`, optional `cwt/` images and the
/// rendered report in `output`.
pub fn run_pipeline(cfg: &PipelineConfig, input: &Path, output: &Path) -> Result<EvalReport> {
    cfg.validate(None)?;
    let recs = load_recordings(input)?;
    fs::create_dir_all(output)?;
    let image_dir = output.join("cwt");
    let (matrix, subjects) = build_feature_matrix(&recs, cfg, cfg.cwt_images.then_some(image_dir.as_path()))?;
    write_feature_matrix(&matrix, &output.join("features.csv"))?;
    let report = evaluate_matrix(&matrix, cfg, subjects)?;
    crate::report::report_render(&report, output)?;
    Ok(report)
}
