//! Subject-level cross-validation, classification metrics, ROC analysis and
//! the group statistics behind the effect-size table.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{ColumnKey, FeatureMatrix, Label, LearnerKind};
use crate::error::{Error, Result};
use crate::learn::{self, Dataset, LearnerParams};
use crate::rng::{derive_seed, rng_from_seed};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub subjects: Vec<String>,
    pub n_healthy: usize,
    pub n_tinnitus: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    pub fn fold_of(&self, subject: &str) -> Option<usize> {
        self.folds.iter().position(|f| f.subjects.iter().any(|s| s == subject))
    }

    fn lookup(&self) -> BTreeMap<&str, usize> {
        let mut m = BTreeMap::new();
        for (i, f) in self.folds.iter().enumerate() {
            for s in &f.subjects {
                m.insert(s.as_str(), i);
            }
        }
        m
    }
}

/// Shuffle each class with the seed and deal subjects round-robin onto the
/// folds; the dealing position carries over from one class to the next.
pub fn make_subject_folds(subjects: &[(String, Label)], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("cross-validation needs k >= 2, got {k}")));
    }
    let unique: BTreeSet<&str> = subjects.iter().map(|(s, _)| s.as_str()).collect();
    if unique.len() != subjects.len() {
        return Err(Error::Config("subject roster contains duplicate ids".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut folds: Vec<Fold> = (0..k).map(|_| Fold { subjects: Vec::new(), n_healthy: 0, n_tinnitus: 0 }).collect();
    let mut offset = 0;
    for label in [Label::Healthy, Label::Tinnitus] {
        let mut ids: Vec<&String> = subjects.iter().filter(|(_, l)| *l == label).map(|(s, _)| s).collect();
        if ids.len() < k {
            return Err(Error::Config(format!("{} {label} subjects cannot fill {k} folds", ids.len())));
        }
        ids.sort();
        ids.shuffle(&mut rng);
        for (p, id) in ids.iter().enumerate() {
            let f = &mut folds[(offset + p) % k];
            f.subjects.push((*id).clone());
            match label {
                Label::Healthy => f.n_healthy += 1,
                Label::Tinnitus => f.n_tinnitus += 1,
            }
        }
        offset = (offset + ids.len()) % k;
    }
    Ok(FoldPlan { k, seed, folds })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn from_predictions(truth: &[u8], predicted: &[u8]) -> ConfusionMatrix {
        let mut cm = ConfusionMatrix::default();
        for (t, p) in truth.iter().zip(predicted) {
            match (t, p) {
                (1, 1) => cm.tp += 1,
                (0, 0) => cm.tn += 1,
                (0, _) => cm.fp += 1,
                _ => cm.fn_ += 1,
            }
        }
        cm
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Names of ratios whose denominator was zero (reported as 0).
    pub undefined: Vec<String>,
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    if cm.total() == 0 {
        return Err(Error::Data("confusion matrix is empty".into()));
    }
    let mut undefined = Vec::new();
    let mut ratio = |name: &str, num: f64, den: f64| {
        if den == 0.0 {
            undefined.push(name.to_string());
            0.0
        } else {
            num / den
        }
    };
    let (tp, tn, fp, fn_) = (cm.tp as f64, cm.tn as f64, cm.fp as f64, cm.fn_ as f64);
    let accuracy = (tp + tn) / (tp + tn + fp + fn_);
    let precision = ratio("precision", tp, tp + fp);
    let recall = ratio("recall", tp, tp + fn_);
    let f1 = ratio("f1", 2.0 * precision * recall, precision + recall);
    Ok(Metrics { accuracy, precision, recall, f1, undefined })
}

fn check_binary(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Data(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Data("scores must be finite".into()));
    }
    let pos = labels.iter().filter(|l| **l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Data("ROC analysis needs both classes".into()));
    }
    Ok((pos, neg))
}

/// 1-based midranks, ties sharing the average rank.
fn midranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = 0.5 * (i + j) as f64 + 1.0;
        for &t in &idx[i..=j] {
            ranks[t] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Mann–Whitney estimate of the area under the ROC curve, ties counting 0.5.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (m, n) = check_binary(scores, labels)?;
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, l)| **l == 1).map(|(r, _)| r).sum();
    Ok((rank_sum - (m * (m + 1)) as f64 / 2.0) / (m as f64 * n as f64))
}

/// `(FPR, TPR)` points for thresholds at every distinct score, from (0,0) to (1,1).
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    let (m, n) = check_binary(scores, labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        pts.push((fp as f64 / n as f64, tp as f64 / m as f64));
    }
    Ok(pts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelongResult {
    pub auc_a: f64,
    pub auc_b: f64,
    pub variance: f64,
    pub z: f64,
    pub p: f64,
}

/// Placement values of one classifier: per positive, the fraction of
/// negatives it outranks; per negative, the fraction of positives above it.
fn placements(scores: &[f64], labels: &[u8]) -> (Vec<f64>, Vec<f64>, f64) {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, l)| **l == 1).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, l)| **l == 0).map(|(s, _)| *s).collect();
    let (m, n) = (pos.len() as f64, neg.len() as f64);
    let all: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    let tz = midranks(&all);
    let tx = midranks(&pos);
    let ty = midranks(&neg);
    let v10: Vec<f64> = (0..pos.len()).map(|i| (tz[i] - tx[i]) / n).collect();
    let v01: Vec<f64> = (0..neg.len()).map(|j| 1.0 - (tz[pos.len() + j] - ty[j]) / m).collect();
    let auc = v10.iter().sum::<f64>() / m;
    (v10, v01, auc)
}

fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0)
}

/// Paired DeLong comparison of two classifiers scored on the same samples.
pub fn delong_test(scores_a: &[f64], scores_b: &[f64], labels: &[u8]) -> Result<DelongResult> {
    if scores_a.len() != scores_b.len() {
        return Err(Error::Data(format!("score vectors differ in length: {} vs {}", scores_a.len(), scores_b.len())));
    }
    let (m, n) = check_binary(scores_a, labels)?;
    check_binary(scores_b, labels)?;
    if m < 2 || n < 2 {
        return Err(Error::Data("DeLong variance needs at least two samples per class".into()));
    }
    let (a10, a01, auc_a) = placements(scores_a, labels);
    let (b10, b01, auc_b) = placements(scores_b, labels);
    let s10 = covariance(&a10, &a10) + covariance(&b10, &b10) - 2.0 * covariance(&a10, &b10);
    let s01 = covariance(&a01, &a01) + covariance(&b01, &b01) - 2.0 * covariance(&a01, &b01);
    let variance = s10 / m as f64 + s01 / n as f64;
    let diff = auc_a - auc_b;
    if diff == 0.0 {
        return Ok(DelongResult { auc_a, auc_b, variance, z: 0.0, p: 1.0 });
    }
    if variance <= 1e-15 {
        return Err(Error::DegenerateVariance(format!("DeLong variance {variance:e} with AUC difference {diff:e}")));
    }
    let z = diff / variance.sqrt();
    Ok(DelongResult { auc_a, auc_b, variance, z, p: stats::normal_two_sided_p(z) })
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
}

/// `(mean_a - mean_b) / pooled SD` with Bessel-corrected group variances.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Data("Cohen's d needs at least two values per group".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = (((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0)).sqrt();
    if !(pooled > 0.0) {
        return Err(Error::DegenerateVariance("pooled standard deviation is zero".into()));
    }
    Ok((ma - mb) / pooled)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

pub fn welch_t(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Data("Welch's t-test needs at least two values per group".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (qa, qb) = (va / a.len() as f64, vb / b.len() as f64);
    if qa + qb <= 0.0 {
        return Err(Error::DegenerateVariance("both groups have zero variance".into()));
    }
    let t = (ma - mb) / (qa + qb).sqrt();
    let df = (qa + qb).powi(2) / (qa * qa / (a.len() as f64 - 1.0) + qb * qb / (b.len() as f64 - 1.0));
    Ok(WelchResult { t, df, p: stats::t_two_sided_p(t, df) })
}

/// Power of the two-sided two-sample t-test at effect size `d`.
pub fn power_two_sample(d: f64, n_a: usize, n_b: usize, alpha: f64) -> f64 {
    let (na, nb) = (n_a as f64, n_b as f64);
    let df = na + nb - 2.0;
    let ncp = d * (na * nb / (na + nb)).sqrt();
    let crit = stats::t_quantile(1.0 - alpha / 2.0, df);
    let upper = 1.0 - stats::noncentral_t_cdf(crit, df, ncp);
    let lower = stats::noncentral_t_cdf(-crit, df, ncp);
    (upper + lower).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// Mean and sample SD (zero for a single value).
    pub fn of(v: &[f64]) -> MeanSd {
        if v.is_empty() {
            return MeanSd { mean: 0.0, sd: 0.0 };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = if v.len() > 1 { (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        MeanSd { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    pub auc: Option<f64>,
    pub roc: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryMetrics {
    pub accuracy: MeanSd,
    pub precision: MeanSd,
    pub recall: MeanSd,
    pub f1: MeanSd,
    pub auc: MeanSd,
}

/// Cross-validation outcome of one learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub learner: LearnerKind,
    pub seed: u64,
    pub folds: Vec<FoldReport>,
    pub summary: SummaryMetrics,
    /// Out-of-fold probability for every dataset row, in row order.
    pub oof_scores: Vec<f64>,
    pub labels: Vec<u8>,
}

pub fn cross_validate(
    ds: &Dataset,
    plan: &FoldPlan,
    learner: LearnerKind,
    params: &LearnerParams,
    seed: u64,
) -> Result<CvReport> {
    let lookup = plan.lookup();
    let row_fold: Vec<usize> = ds
        .subject_ids
        .iter()
        .map(|s| lookup.get(s.as_str()).copied().ok_or_else(|| Error::Data(format!("subject {s} is not in the fold plan"))))
        .collect::<Result<_>>()?;
    let outcomes: Vec<(FoldReport, Vec<(usize, f64)>)> = (0..plan.k)
        .into_par_iter()
        .map(|f| -> Result<_> {
            let train_idx: Vec<usize> = (0..ds.n_rows()).filter(|&i| row_fold[i] != f).collect();
            let test_idx: Vec<usize> = (0..ds.n_rows()).filter(|&i| row_fold[i] == f).collect();
            let train = ds.subset(&train_idx);
            let test = ds.subset(&test_idx);
            let train_subjects: BTreeSet<String> = train.subject_ids.iter().cloned().collect();
            let test_subjects: BTreeSet<String> = test.subject_ids.iter().cloned().collect();
            if train_subjects.intersection(&test_subjects).next().is_some() {
                return Err(Error::Data(format!("fold {f}: a subject appears in both train and test")));
            }
            if test.n_rows() == 0 {
                return Err(Error::Data(format!("fold {f} has no test rows")));
            }
            let model = learn::train(learner, &train, params, derive_seed(seed, f as u64))?;
            let proba = model.predict_proba(test.x.view())?;
            let pred: Vec<u8> = proba.iter().map(|p| u8::from(*p >= 0.5)).collect();
            let confusion = ConfusionMatrix::from_predictions(&test.y, &pred);
            let both = test.class_counts().iter().all(|c| *c > 0);
            let (auc, roc) = if both {
                (Some(roc_auc(&proba, &test.y)?), roc_curve(&proba, &test.y)?)
            } else {
                (None, Vec::new())
            };
            let report = FoldReport {
                fold: f,
                train_subjects: train_subjects.into_iter().collect(),
                test_subjects: test_subjects.into_iter().collect(),
                confusion,
                metrics: metrics(&confusion)?,
                auc,
                roc,
            };
            Ok((report, test_idx.into_iter().zip(proba).collect()))
        })
        .collect::<Result<_>>()?;
    let mut oof_scores = vec![0.0; ds.n_rows()];
    let mut folds = Vec::with_capacity(plan.k);
    for (report, scores) in outcomes {
        for (i, s) in scores {
            oof_scores[i] = s;
        }
        folds.push(report);
    }
    let pick = |f: fn(&FoldReport) -> Option<f64>| MeanSd::of(&folds.iter().filter_map(f).collect::<Vec<_>>());
    let summary = SummaryMetrics {
        accuracy: pick(|r| Some(r.metrics.accuracy)),
        precision: pick(|r| Some(r.metrics.precision)),
        recall: pick(|r| Some(r.metrics.recall)),
        f1: pick(|r| Some(r.metrics.f1)),
        auc: pick(|r| r.auc),
    };
    Ok(CvReport { learner, seed, folds, summary, oof_scores, labels: ds.y.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelongComparison {
    pub learner_a: LearnerKind,
    pub learner_b: LearnerKind,
    pub result: DelongResult,
    pub significant: bool,
}

/// DeLong comparison of every learner pair on their out-of-fold scores.
pub fn compare_learners(reports: &[CvReport]) -> Vec<DelongComparison> {
    let mut out = Vec::new();
    for i in 0..reports.len() {
        for j in i + 1..reports.len() {
            let (a, b) = (&reports[i], &reports[j]);
            if let Ok(result) = delong_test(&a.oof_scores, &b.oof_scores, &a.labels) {
                out.push(DelongComparison {
                    learner_a: a.learner,
                    learner_b: b.learner,
                    significant: result.p < 0.05,
                    result,
                });
            }
        }
    }
    out
}

/// One feature of the group comparison; group a is healthy, group b tinnitus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub column: ColumnKey,
    pub mean_a: f64,
    pub mean_b: f64,
    pub d: Option<f64>,
    pub p: Option<f64>,
    pub power: Option<f64>,
}

/// Average every subject's windows, then compare healthy against tinnitus
/// per feature. Rows come back ordered by |d| descending; features without a
/// defined effect size go last in column order.
pub fn effect_sizes(matrix: &FeatureMatrix, alpha: f64) -> Result<Vec<EffectRow>> {
    let mut per_subject: BTreeMap<&str, (Label, Vec<f64>, usize)> = BTreeMap::new();
    for row in &matrix.rows {
        let entry = per_subject.entry(row.subject_id.as_str()).or_insert((row.label, vec![0.0; matrix.n_cols()], 0));
        if entry.0 != row.label {
            return Err(Error::Data(format!("subject {} carries both labels", row.subject_id)));
        }
        entry.1.iter_mut().zip(&row.values).for_each(|(a, v)| *a += v);
        entry.2 += 1;
    }
    let mut groups: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    for (label, sums, count) in per_subject.into_values() {
        groups[label.as_class() as usize].push(sums.into_iter().map(|s| s / count as f64).collect());
    }
    let (na, nb) = (groups[0].len(), groups[1].len());
    if na < 2 || nb < 2 {
        return Err(Error::Data(format!("effect sizes need two subjects per group, have {na} and {nb}")));
    }
    let mut rows: Vec<EffectRow> = (0..matrix.n_cols())
        .map(|c| {
            let a: Vec<f64> = groups[0].iter().map(|v| v[c]).collect();
            let b: Vec<f64> = groups[1].iter().map(|v| v[c]).collect();
            let d = cohens_d(&a, &b).ok();
            EffectRow {
                column: matrix.columns[c].clone(),
                mean_a: a.iter().sum::<f64>() / na as f64,
                mean_b: b.iter().sum::<f64>() / nb as f64,
                d,
                p: welch_t(&a, &b).ok().map(|w| w.p),
                power: d.map(|d| power_two_sample(d, na, nb, alpha)),
            }
        })
        .collect();
    rows.sort_by(|x, y| match (x.d, y.d) {
        (Some(a), Some(b)) => b.abs().total_cmp(&a.abs()),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    Ok(rows)
}
