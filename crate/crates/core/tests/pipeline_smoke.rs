use std::fs;

use nsk_core::dataio::{EegFormat, LearnerKind};
use nsk_core::pipeline::{run_pipeline, EvalReport};
use nsk_core::synth::{synth_eeg, write_study, SynthSpec};
use nsk_core::PipelineConfig;

#[test]
fn ten_plus_ten_rf_study_writes_a_five_fold_report() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    let out = dir.path().join("out");
    let spec = SynthSpec { n_per_group: 10, n_channels: 8, duration_s: 20.0, ..SynthSpec::calibrated(21) };
    write_study(&synth_eeg(&spec).unwrap(), &input, EegFormat::Csv).unwrap();
    let cfg = PipelineConfig { microstate_ks: vec![4], learners: vec![LearnerKind::Rf], ..Default::default() };
    let report = run_pipeline(&cfg, &input, &out).unwrap();

    assert_eq!(report.n_subjects, 20);
    assert_eq!(report.n_rows, 40);
    assert_eq!(report.learners.len(), 1);
    assert_eq!(report.learners[0].folds.len(), 5);
    for fold in &report.learners[0].folds {
        assert!((0.0..=1.0).contains(&fold.metrics.accuracy));
    }

    let json: EvalReport = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(json, report);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("learner,fold,metric,value\n"));
    assert!(summary.lines().any(|l| l.starts_with("rf,mean,accuracy,")));
    for k in 0..5 {
        assert!(out.join(format!("confusion/rf_fold{k}.csv")).exists());
    }
    let features = fs::read_to_string(out.join("features.csv")).unwrap();
    assert_eq!(features.lines().count(), 41);
    assert!(out.join("roc/rf.svg").exists());
    assert!(fs::read_to_string(out.join("effects.csv")).unwrap().lines().count() > 1);
}
