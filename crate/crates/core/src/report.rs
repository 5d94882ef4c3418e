//! Flat tables and SVG plots rendered from an [`EvalReport`].
//!
//! Files written under the output directory:
//!
//! | file | content |
//! |---|---|
//! | `report.json` | the full report |
//! | `summary.csv` | `learner,fold,metric,value`, per fold then `mean` and `sd` |
//! | `confusion/<learner>_fold<k>.csv` | 2×2 grid, rows true class, columns predicted |
//! | `roc/<learner>.svg` | one polyline per fold with a defined curve |
//! | `delong.csv` | pairwise learner comparisons |
//! | `effects.csv` | group effect table, occurrence per epoch |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dataio::FeatureKind;
use crate::error::Result;
use crate::eval::{CvReport, EffectRow, FoldReport};
use crate::pipeline::EvalReport;

pub const EFFECT_HEADER: &str = "rank,k,band,state,feature,mean_a,mean_b,d,p,power";

const METRICS: [&str; 5] = ["accuracy", "precision", "recall", "f1", "auc"];

fn fold_metric(f: &FoldReport, name: &str) -> Option<f64> {
    match name {
        "accuracy" => Some(f.metrics.accuracy),
        "precision" => Some(f.metrics.precision),
        "recall" => Some(f.metrics.recall),
        "f1" => Some(f.metrics.f1),
        _ => f.auc,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn summary_csv(learners: &[CvReport]) -> String {
    let mut s = String::from("learner,fold,metric,value\n");
    for r in learners {
        let name = r.learner.as_str();
        for f in &r.folds {
            for m in METRICS {
                writeln!(s, "{name},{},{m},{}", f.fold, opt(fold_metric(f, m))).unwrap();
            }
        }
        let sm = &r.summary;
        let stats = [sm.accuracy, sm.precision, sm.recall, sm.f1, sm.auc];
        for (which, pick) in [("mean", 0), ("sd", 1)] {
            for (m, v) in METRICS.iter().zip(stats) {
                let x = if pick == 0 { v.mean } else { v.sd };
                writeln!(s, "{name},{which},{m},{}", if x.is_finite() { x.to_string() } else { String::new() }).unwrap();
            }
        }
    }
    s
}

pub fn confusion_csv(f: &FoldReport) -> String {
    let c = &f.confusion;
    format!(
        "true\\predicted,healthy,tinnitus\nhealthy,{},{}\ntinnitus,{},{}\n",
        c.tn, c.fp, c.fn_, c.tp
    )
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

/// ROC curves of one learner, one polyline per fold, unit square mapped to
/// a 320-pixel plot area.
pub fn roc_svg(r: &CvReport) -> String {
    let (m, side) = (40.0, 320.0);
    let xy = |fpr: f64, tpr: f64| (m + fpr * side, m + (1.0 - tpr) * side);
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="400" height="420" viewBox="0 0 400 420">"#).unwrap();
    writeln!(s, r#"<rect x="{m}" y="{m}" width="{side}" height="{side}" fill="none" stroke="black"/>"#).unwrap();
    writeln!(s, r#"<line x1="{m}" y1="{}" x2="{}" y2="{m}" stroke="grey" stroke-dasharray="4 4"/>"#, m + side, m + side).unwrap();
    writeln!(s, r#"<text x="200" y="25" text-anchor="middle" font-family="sans-serif" font-size="14">ROC {}</text>"#, r.learner.as_str()).unwrap();
    writeln!(s, r#"<text x="200" y="385" text-anchor="middle" font-family="sans-serif" font-size="12">false positive rate</text>"#).unwrap();
    writeln!(s, r#"<text x="15" y="200" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 15 200)">true positive rate</text>"#).unwrap();
    for (i, f) in r.folds.iter().filter(|f| !f.roc.is_empty()).enumerate() {
        let pts: Vec<String> = f
            .roc
            .iter()
            .map(|&(a, b)| {
                let (x, y) = xy(a, b);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let color = PALETTE[i % PALETTE.len()];
        writeln!(
            s,
            r#"<polyline data-fold="{}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            f.fold,
            pts.join(" ")
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{color}">fold {} AUC {:.3}</text>"#,
            m + side - 110.0,
            m + side - 10.0 - 14.0 * i as f64,
            f.fold,
            f.auc.unwrap_or(f64::NAN)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

pub fn delong_csv(report: &EvalReport) -> String {
    let mut s = String::from("learner_a,learner_b,auc_a,auc_b,z,p,significant\n");
    for c in &report.comparisons {
        let r = &c.result;
        writeln!(s, "{},{},{},{},{},{},{}", c.learner_a.as_str(), c.learner_b.as_str(), r.auc_a, r.auc_b, r.z, r.p, c.significant).unwrap();
    }
    s
}

/// Effect table with occurrence rescaled from per second to per epoch of
/// `window_s` seconds; other features keep their units.
pub fn effects_csv(effects: &[EffectRow], window_s: f64) -> String {
    let mut s = format!("{EFFECT_HEADER}\n");
    for (rank, e) in effects.iter().enumerate() {
        let c = &e.column;
        let (feature, scale) = match c.feature {
            FeatureKind::OccurrencePerS => ("occurrence_per_epoch", window_s),
            other => (other.as_str(), 1.0),
        };
        writeln!(
            s,
            "{},{},{},{},{feature},{},{},{},{},{}",
            rank + 1,
            c.k,
            c.band,
            c.state_letter(),
            e.mean_a * scale,
            e.mean_b * scale,
            opt(e.d),
            opt(e.p),
            opt(e.power)
        )
        .unwrap();
    }
    s
}

/// Write every artifact; returns the paths in writing order.
pub fn report_render(report: &EvalReport, out: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |rel: String, body: String| -> Result<()> {
        let p = out.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    put("report.json".into(), serde_json::to_string_pretty(report)? + "\n")?;
    put("summary.csv".into(), summary_csv(&report.learners))?;
    for r in &report.learners {
        for f in &r.folds {
            put(format!("confusion/{}_fold{}.csv", r.learner.as_str(), f.fold), confusion_csv(f))?;
        }
        put(format!("roc/{}.svg", r.learner.as_str()), roc_svg(r))?;
    }
    put("delong.csv".into(), delong_csv(report))?;
    put("effects.csv".into(), effects_csv(&report.effects, report.window_s))?;
    Ok(written)
}
