//! `nsk`: one subcommand per pipeline stage plus `run` for the whole chain.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use nsk_core::dataio::{read_feature_matrix, read_volume_series, write_feature_matrix, write_volume_series, EegFormat, FeatureKind, LearnerKind};
use nsk_core::eval::{compare_learners, effect_sizes};
use nsk_core::fmriprep::{group_slice_table, max_diff_map, preprocess_series, write_slice_table, ClaheParams};
use nsk_core::learn::{save_model, train};
use nsk_core::microstate::gfp;
use nsk_core::pipeline::{
    build_feature_matrix, clean_windows, dataset_from_matrix, evaluate_matrix, load_recordings, run_pipeline,
    subjects_from_matrix, EvalReport, EFFECT_ALPHA,
};
use nsk_core::report::{delong_csv, effects_csv, report_render};
use nsk_core::synth::{synth_eeg, write_study, SynthEffect, SynthSpec};
use nsk_core::timefreq::{gfp_to_image, write_image};
use nsk_core::{Error, FmriSeries, PipelineConfig, Result};

#[derive(Parser, Debug)]
#[command(name = "nsk", version, about = "Tinnitus EEG microstate and fMRI classification pipeline")]
struct Cli {
    /// Pipeline configuration (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true, env = "NSK_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Read and validate every recording, write `ingest.csv`.
    Ingest { input: PathBuf },
    /// Segment, prefilter, gate and normalize; write `preprocess.csv`.
    Preprocess { input: PathBuf },
    /// Microstate features of every kept window, written to `features.csv`.
    Features { input: PathBuf },
    /// CWT scalogram images of every kept window under `cwt/`.
    Cwt { input: PathBuf },
    /// Fit one learner on a whole feature matrix, write `model_<learner>.nskm`.
    Train {
        features: PathBuf,
        #[arg(long, default_value = "rf")]
        learner: String,
    },
    /// Subject-level cross-validation of the configured learners on a feature matrix.
    Evaluate { features: PathBuf },
    /// DeLong comparisons between the learners of a saved report.
    Delong { report: PathBuf },
    /// Group effect-size table of a feature matrix, written to `effects.csv`.
    Effects { features: PathBuf },
    /// Normalize, median-filter and equalize volume series (a file or a directory).
    FmriPrep {
        input: PathBuf,
        #[arg(long, default_value_t = ClaheParams::default().clip)]
        clip: f64,
    },
    /// Max-difference maps per slice and the group table `fmri_slices.csv`.
    FmriDiff {
        input: PathBuf,
        /// Slices to analyse (default: all).
        #[arg(long, value_delimiter = ',')]
        slices: Vec<usize>,
        #[arg(long, default_value_t = ClaheParams::default().clip)]
        clip: f64,
    },
    /// Write a synthetic two-group EEG study.
    Synth {
        /// Full generator spec (JSON); the flags below are ignored when given.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 40)]
        n_per_group: usize,
        #[arg(long)]
        channels: Option<usize>,
        #[arg(long)]
        duration_s: Option<f64>,
        /// Occurrence multiplier of the tinnitus group's targeted state (gamma A).
        #[arg(long)]
        multiplier: Option<f64>,
        /// Generate both groups from the same distribution.
        #[arg(long, conflicts_with = "multiplier")]
        no_effect: bool,
        #[arg(long, default_value = "eegr")]
        format: String,
    },
    /// Re-render tables and plots from a saved `report.json`.
    Report { report: PathBuf },
    /// Whole pipeline: recordings to features, CV, statistics and report.
    Run { input: PathBuf },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate(None)?;
    Ok(cfg)
}

fn read_report(path: &Path) -> Result<EvalReport> {
    let bytes = fs::read(path).map_err(|e| Error::Data(format!("cannot read report {}: {e}", path.display())))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn write(path: PathBuf, body: String) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, body)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Volume series in `input`, a single file or every `.f32` file of a directory.
fn volume_paths(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    if !input.is_dir() {
        return Err(Error::Data(format!("input {} does not exist", input.display())));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "f32"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!("no .f32 volume series in {}", input.display())));
    }
    Ok(paths)
}

fn execute(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size the thread pool: {e}")))?;
    }
    let out = &cli.out;
    match &cli.command {
        Command::Ingest { input } => {
            let recs = load_recordings(input)?;
            let mut s = String::from("subject_id,label,fs_hz,n_channels,n_samples,duration_s\n");
            for r in &recs {
                s += &format!("{},{},{},{},{},{}\n", r.subject_id, r.label, r.fs_hz, r.n_channels(), r.n_samples(), r.duration_s());
            }
            write(out.join("ingest.csv"), s)?;
        }
        Command::Preprocess { input } => {
            let cfg = load_config(cli)?;
            let recs = load_recordings(input)?;
            let rows: Vec<String> = recs
                .par_iter()
                .map(|r| {
                    cfg.validate(Some(r.fs_hz))?;
                    let c = clean_windows(r, &cfg)?;
                    Ok(format!("{},{},{},{}\n", r.subject_id, r.label, c.epochs.len(), c.n_dropped))
                })
                .collect::<Result<_>>()?;
            write(out.join("preprocess.csv"), format!("subject_id,label,n_windows,n_dropped\n{}", rows.concat()))?;
        }
        Command::Features { input } => {
            let cfg = load_config(cli)?;
            let (m, _) = build_feature_matrix(&load_recordings(input)?, &cfg, None)?;
            fs::create_dir_all(out)?;
            write_feature_matrix(&m, &out.join("features.csv"))?;
            println!("wrote {} ({} rows x {} features)", out.join("features.csv").display(), m.n_rows(), m.n_cols());
        }
        Command::Cwt { input } => {
            let cfg = load_config(cli)?;
            let recs = load_recordings(input)?;
            let dir = out.join("cwt");
            fs::create_dir_all(&dir)?;
            let counts: Vec<usize> = recs
                .par_iter()
                .map(|r| {
                    cfg.validate(Some(r.fs_hz))?;
                    let c = clean_windows(r, &cfg)?;
                    for e in &c.epochs {
                        write_image(&gfp_to_image(&gfp(e)?)?, &dir, &format!("{}_w{:03}", r.subject_id, e.window_index))?;
                    }
                    Ok(c.epochs.len())
                })
                .collect::<Result<_>>()?;
            println!("wrote {} images to {}", counts.iter().sum::<usize>(), dir.display());
        }
        Command::Train { features, learner } => {
            let cfg = load_config(cli)?;
            let kind = LearnerKind::parse(learner)?;
            let ds = dataset_from_matrix(&read_feature_matrix(features)?)?;
            let model = train(kind, &ds, &cfg.learner_params(), cfg.seed)?;
            fs::create_dir_all(out)?;
            let path = out.join(format!("model_{}.nskm", kind.as_str()));
            save_model(&model, &path)?;
            println!("wrote {}", path.display());
        }
        Command::Evaluate { features } => {
            let cfg = load_config(cli)?;
            let m = read_feature_matrix(features)?;
            let report = evaluate_matrix(&m, &cfg, subjects_from_matrix(&m))?;
            fs::create_dir_all(out)?;
            for p in report_render(&report, out)? {
                println!("wrote {}", p.display());
            }
            for l in &report.learners {
                let a = l.summary.accuracy;
                println!("{}: accuracy {:.4} ± {:.4}", l.learner.as_str(), a.mean, a.sd);
            }
        }
        Command::Delong { report } => {
            let mut r = read_report(report)?;
            r.comparisons = compare_learners(&r.learners);
            for c in &r.comparisons {
                println!("{} vs {}: z {:.4} p {:.4}", c.learner_a.as_str(), c.learner_b.as_str(), c.result.z, c.result.p);
            }
            write(out.join("delong.csv"), delong_csv(&r))?;
        }
        Command::Effects { features } => {
            let cfg = load_config(cli)?;
            let effects = effect_sizes(&read_feature_matrix(features)?, EFFECT_ALPHA)?;
            write(out.join("effects.csv"), effects_csv(&effects, cfg.window_s))?;
        }
        Command::FmriPrep { input, clip } => {
            let dir = out.join("fmri");
            fs::create_dir_all(&dir)?;
            for p in volume_paths(input)? {
                let prepped = preprocess_series(&read_volume_series(&p)?, *clip)?;
                let target = dir.join(p.file_name().unwrap());
                write_volume_series(&prepped, &target)?;
                println!("wrote {}", target.display());
            }
        }
        Command::FmriDiff { input, slices, clip } => {
            let series: Vec<FmriSeries> = volume_paths(input)?
                .par_iter()
                .map(|p| {
                    let s = read_volume_series(p)?;
                    if s.normalized {
                        Ok(s)
                    } else {
                        preprocess_series(&s, *clip)
                    }
                })
                .collect::<Result<_>>()?;
            let dir = out.join("fmri_diff");
            fs::create_dir_all(&dir)?;
            let mut per_subject = Vec::with_capacity(series.len());
            for s in &series {
                let which: Vec<usize> = if slices.is_empty() { (0..s.slices).collect() } else { slices.clone() };
                let maps = which.iter().map(|&z| max_diff_map(s, z)).collect::<Result<Vec<_>>>()?;
                for m in &maps {
                    let pgm = nsk_core::dataio::pgm::from_unit(m.width, m.height, &m.values);
                    nsk_core::dataio::pgm::write_pgm(&dir.join(format!("{}_s{:02}.pgm", s.subject_id, m.slice)), &pgm)?;
                }
                per_subject.push((s.label, maps));
            }
            let path = out.join("fmri_slices.csv");
            write_slice_table(&group_slice_table(&per_subject), &path)?;
            println!("wrote {}", path.display());
        }
        Command::Synth { spec, n_per_group, channels, duration_s, multiplier, no_effect, format } => {
            let seed = cli.seed.unwrap_or(0);
            let spec = match spec {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                    serde_json::from_str::<SynthSpec>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
                None => {
                    let mut s = SynthSpec { n_per_group: *n_per_group, ..SynthSpec::calibrated(seed) };
                    if let Some(c) = channels {
                        s.n_channels = *c;
                    }
                    if let Some(d) = duration_s {
                        s.duration_s = *d;
                    }
                    if *no_effect {
                        s.effects.clear();
                    } else if let (Some(m), Some(e)) = (multiplier, s.effects.first_mut()) {
                        *e = SynthEffect { multiplier: *m, ..e.clone() };
                    }
                    s
                }
            };
            let format = match format.as_str() {
                "eegr" => EegFormat::Eegr,
                "csv" => EegFormat::Csv,
                other => return Err(Error::Config(format!("unknown format `{other}` (expected eegr or csv)"))),
            };
            let recs = synth_eeg(&spec)?;
            write_study(&recs, out, format)?;
            fs::write(out.join("synth_spec.json"), serde_json::to_string_pretty(&spec)? + "\n")?;
            if let Some(t) = spec.target_column() {
                println!("target column {t}");
            }
            println!("wrote {} recordings to {}", recs.len(), out.display());
        }
        Command::Report { report } => {
            let r = read_report(report)?;
            for p in report_render(&r, out)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Run { input } => {
            let cfg = load_config(cli)?;
            let report = run_pipeline(&cfg, input, out)?;
            for l in &report.learners {
                let a = l.summary.accuracy;
                println!("{}: accuracy {:.4} ± {:.4}", l.learner.as_str(), a.mean, a.sd);
            }
            if let Some(top) = report.effects.first() {
                let occ = if top.column.feature == FeatureKind::OccurrencePerS { " (per s)" } else { "" };
                println!("largest effect {}{occ}: d {:.3}", top.column, top.d.unwrap_or(f64::NAN));
            }
            println!("wrote report to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let first = e.to_string().lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ").to_string();
            eprintln!("error[E_USAGE]: {first}");
            return ExitCode::from(2);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
