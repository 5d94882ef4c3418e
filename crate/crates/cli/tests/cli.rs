use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nsk_core::dataio::{write_volume_series, Label};
use nsk_core::FmriSeries;

fn nsk(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nsk"));
    cmd.args(args).env_remove("NSK_SEED");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn nsk")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn single_error_line(out: &Output, code: i32, prefix: &str) {
    assert_eq!(out.status.code(), Some(code), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with(prefix), "{err}");
}

const QUICK: &str = r#"{
  "microstate_ks": [4],
  "n_init": 3,
  "max_iter": 30,
  "cv_folds": 2,
  "learners": ["rf", "dt"],
  "rf": { "n_trees": 10 }
}"#;

fn study(root: &Path) -> (String, String) {
    let data = root.join("data");
    let config = root.join("quick.json");
    fs::write(&config, QUICK).unwrap();
    let d = data.to_str().unwrap();
    ok(&nsk(&["synth", "--n-per-group", "3", "--channels", "8", "--duration-s", "20", "--seed", "9", "--out", d], &[]));
    (d.to_string(), config.to_str().unwrap().to_string())
}

#[test]
fn run_is_deterministic_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let (data, config) = study(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&nsk(&["run", &data, "--config", &config, "--out", a.to_str().unwrap()], &[]));
    ok(&nsk(&["--jobs", "1", "run", &data, "--config", &config, "--out", b.to_str().unwrap()], &[]));
    for f in ["report.json", "features.csv", "summary.csv", "effects.csv", "delong.csv", "roc/rf.svg", "roc/dt.svg", "confusion/rf_fold1.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["learners"][0]["folds"].as_array().unwrap().len(), 2);
}

#[test]
fn stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let (data, config) = study(dir.path());
    let out = dir.path().join("stages");
    let o = out.to_str().unwrap();
    ok(&nsk(&["ingest", &data, "--out", o], &[]));
    let ingest = fs::read_to_string(out.join("ingest.csv")).unwrap();
    assert_eq!(ingest.lines().count(), 7);
    assert!(ingest.contains("h001,healthy,250,8,5000,20"));

    ok(&nsk(&["preprocess", &data, "--config", &config, "--out", o], &[]));
    assert!(fs::read_to_string(out.join("preprocess.csv")).unwrap().contains("t003,tinnitus,2,0"));

    ok(&nsk(&["features", &data, "--config", &config, "--out", o], &[]));
    let features = out.join("features.csv");
    let f = features.to_str().unwrap();
    ok(&nsk(&["effects", f, "--config", &config, "--out", o], &[]));
    let effects = fs::read_to_string(out.join("effects.csv")).unwrap();
    assert!(effects.starts_with("rank,k,band,state,feature,mean_a,mean_b,d,p,power\n"));

    ok(&nsk(&["evaluate", f, "--config", &config, "--out", o], &[]));
    ok(&nsk(&["delong", out.join("report.json").to_str().unwrap(), "--out", o], &[]));
    assert!(fs::read_to_string(out.join("delong.csv")).unwrap().starts_with("learner_a,learner_b"));

    let rerendered = dir.path().join("again");
    ok(&nsk(&["report", out.join("report.json").to_str().unwrap(), "--out", rerendered.to_str().unwrap()], &[]));
    assert_eq!(fs::read(out.join("summary.csv")).unwrap(), fs::read(rerendered.join("summary.csv")).unwrap());

    ok(&nsk(&["train", f, "--learner", "dt", "--config", &config, "--out", o], &[]));
    assert_eq!(&fs::read(out.join("model_dt.nskm")).unwrap()[..4], b"NSKM");

    ok(&nsk(&["cwt", &data, "--config", &config, "--out", o], &[]));
    assert!(out.join("cwt/t002_w001.pgm").exists());
}

#[test]
fn failures_exit_with_one_coded_line() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    single_error_line(&nsk(&["run", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], &[]), 3, "error[E_DATA]");

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"cv_folds": 1}"#).unwrap();
    single_error_line(&nsk(&["run", ".", "--config", bad.to_str().unwrap()], &[]), 2, "error[E_CONFIG]");
    fs::write(&bad, r#"{"no_such_field": 1}"#).unwrap();
    single_error_line(&nsk(&["features", ".", "--config", bad.to_str().unwrap()], &[]), 2, "error[E_CONFIG]");

    single_error_line(&nsk(&["run"], &[]), 2, "error[E_USAGE]");
    single_error_line(&nsk(&["frobnicate"], &[]), 2, "error[E_USAGE]");
    single_error_line(&nsk(&["synth", "--n-per-group", "1", "--out", dir.path().to_str().unwrap()], &[]), 2, "error[E_CONFIG]");
    single_error_line(&nsk(&["--jobs", "0", "ingest", "."], &[]), 2, "error[E_CONFIG]");
    single_error_line(&nsk(&["synth"], &[("NSK_SEED", "abc")]), 2, "error[E_USAGE]");

    let garbage = dir.path().join("x.csv");
    fs::write(&garbage, "not,a,feature,matrix\n1,2\n").unwrap();
    let out = nsk(&["evaluate", garbage.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(String::from_utf8_lossy(&out.stderr).lines().count(), 1);
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    let args = |p: &Path| vec!["synth".to_string(), "--n-per-group".into(), "2".into(), "--channels".into(), "6".into(), "--duration-s".into(), "2".into(), "--out".into(), p.to_str().unwrap().to_string()];
    let run = |p: &Path, extra: &[&str], env: &[(&str, &str)]| {
        let mut v = args(p);
        v.extend(extra.iter().map(|s| s.to_string()));
        let refs: Vec<&str> = v.iter().map(String::as_str).collect();
        ok(&nsk(&refs, env));
    };
    run(&a, &["--seed", "5"], &[]);
    run(&b, &[], &[("NSK_SEED", "5")]);
    run(&c, &["--seed", "6"], &[("NSK_SEED", "5")]);
    let read = |p: &Path| fs::read(p.join("h001.eegr")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn fmri_prep_and_diff() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("fmri");
    fs::create_dir_all(&input).unwrap();
    for (i, label) in [Label::Healthy, Label::Healthy, Label::Tinnitus, Label::Tinnitus].into_iter().enumerate() {
        let (w, h, z, t) = (12, 10, 3, 4);
        let voxels: Vec<f64> = (0..w * h * z * t).map(|v| ((v * 7 + i * 13 + (v / (w * h * z)) * 31 * (i % 2)) % 256) as f64).collect();
        let s = FmriSeries::new(format!("s{i}"), label, (w, h, z, t), voxels, false).unwrap();
        write_volume_series(&s, &input.join(format!("s{i}.f32"))).unwrap();
    }
    let out = dir.path().join("out");
    let o = out.to_str().unwrap();
    ok(&nsk(&["fmri-prep", input.to_str().unwrap(), "--out", o], &[]));
    let prepped = nsk_core::dataio::read_volume_series(&out.join("fmri/s0.f32")).unwrap();
    assert!(prepped.normalized);
    assert!(prepped.voxels.iter().all(|v| (0.0..=1.0).contains(v)));

    ok(&nsk(&["fmri-diff", input.to_str().unwrap(), "--slices", "0,2", "--out", o], &[]));
    let table = fs::read_to_string(out.join("fmri_slices.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "slice,group,mean,sd");
    assert_eq!(lines.len(), 1 + 2 * 2);
    assert!(out.join("fmri_diff/s3_s02.pgm").exists());
    single_error_line(&nsk(&["fmri-diff", input.to_str().unwrap(), "--slices", "9", "--out", o], &[]), 3, "error[E_DATA]");
}
