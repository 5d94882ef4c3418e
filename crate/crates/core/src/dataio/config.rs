use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::{DtParams, LearnerParams, MlpParams, RfParams, SvmParams};

/// A named frequency band `[lo_hz, hi_hz]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub name: String,
    pub lo_hz: f64,
    pub hi_hz: f64,
}

impl BandSpec {
    pub fn new(name: &str, lo_hz: f64, hi_hz: f64) -> Self {
        BandSpec { name: name.into(), lo_hz, hi_hz }
    }

    pub fn center_hz(&self) -> f64 {
        0.5 * (self.lo_hz + self.hi_hz)
    }

    /// Delta, theta, alpha, beta and gamma with the edges of the classified feature space.
    pub fn defaults() -> Vec<BandSpec> {
        vec![
            BandSpec::new("delta", 1.0, 4.0),
            BandSpec::new("theta", 4.0, 8.0),
            BandSpec::new("alpha", 8.0, 13.0),
            BandSpec::new("beta", 13.0, 30.0),
            BandSpec::new("gamma", 30.0, 45.0),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrefilterSpec {
    pub enabled: bool,
    pub lo_hz: f64,
    pub hi_hz: f64,
    pub order: usize,
}

impl Default for PrefilterSpec {
    fn default() -> Self {
        PrefilterSpec { enabled: true, lo_hz: 0.5, hi_hz: 50.0, order: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecompositionMethod {
    #[default]
    Bandpass,
    Db4Packet,
}

/// Whether microstate templates are fitted per window or pooled per subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FitScope {
    #[default]
    Window,
    Subject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Dt,
    Rf,
    Svm,
    Mlp,
}

impl LearnerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LearnerKind::Dt => "dt",
            LearnerKind::Rf => "rf",
            LearnerKind::Svm => "svm",
            LearnerKind::Mlp => "mlp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dt" => Ok(LearnerKind::Dt),
            "rf" => Ok(LearnerKind::Rf),
            "svm" => Ok(LearnerKind::Svm),
            "mlp" | "dnn" => Ok(LearnerKind::Mlp),
            other => Err(Error::Config(format!("unknown learner `{other}`"))),
        }
    }
}

/// Everything the pipeline needs besides its inputs. Serialized as JSON
/// field-for-field; omitted fields take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub window_s: f64,
    pub prefilter: PrefilterSpec,
    pub bands: Vec<BandSpec>,
    pub decomposition: DecompositionMethod,
    pub band_filter_order: usize,
    pub microstate_ks: Vec<usize>,
    pub fit_scope: FitScope,
    pub n_init: usize,
    pub max_iter: usize,
    pub artifact_limit_uv: f64,
    pub seed: u64,
    pub cv_folds: usize,
    pub learners: Vec<LearnerKind>,
    pub dt: DtParams,
    pub rf: RfParams,
    pub svm: SvmParams,
    pub mlp: MlpParams,
    /// Also write a CWT image of every kept window's GFP.
    pub cwt_images: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            window_s: 10.0,
            prefilter: PrefilterSpec::default(),
            bands: BandSpec::defaults(),
            decomposition: DecompositionMethod::Bandpass,
            band_filter_order: 3,
            microstate_ks: vec![4, 5, 6, 7],
            fit_scope: FitScope::Window,
            n_init: 20,
            max_iter: 100,
            artifact_limit_uv: 150.0,
            seed: 42,
            cv_folds: 5,
            learners: vec![LearnerKind::Rf, LearnerKind::Dt],
            dt: DtParams::default(),
            rf: RfParams::default(),
            svm: SvmParams::default(),
            mlp: MlpParams::default(),
            cwt_images: false,
        }
    }
}

impl PipelineConfig {
    pub fn learner_params(&self) -> LearnerParams {
        LearnerParams { dt: self.dt.clone(), rf: self.rf.clone(), svm: self.svm.clone(), mlp: self.mlp.clone() }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate(None)?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Checks config-only invariants, plus Nyquist constraints when the
    /// sampling rate is known.
    pub fn validate(&self, fs_hz: Option<f64>) -> Result<()> {
        if !(self.window_s.is_finite() && self.window_s > 0.0) {
            return Err(Error::Config(format!("window_s must be positive, got {}", self.window_s)));
        }
        if self.bands.is_empty() {
            return Err(Error::Config("at least one band is required".into()));
        }
        let mut prev_lo = f64::NEG_INFINITY;
        for b in &self.bands {
            if !(b.lo_hz > 0.0 && b.lo_hz < b.hi_hz) {
                return Err(Error::Config(format!("band {} needs 0 < lo < hi", b.name)));
            }
            if b.lo_hz <= prev_lo {
                return Err(Error::Config("bands must be ordered by increasing lower edge".into()));
            }
            if b.name.is_empty() || b.name.contains(['.', ',']) {
                return Err(Error::Config(format!("band name `{}` is not a valid column token", b.name)));
            }
            prev_lo = b.lo_hz;
            if let Some(fs) = fs_hz {
                if b.hi_hz >= fs / 2.0 {
                    return Err(Error::Config(format!("band {} reaches Nyquist ({} Hz)", b.name, fs / 2.0)));
                }
            }
        }
        if self.microstate_ks.is_empty() || self.microstate_ks.iter().any(|k| !(2..=12).contains(k)) {
            return Err(Error::Config("microstate_ks must be a non-empty subset of 2..=12".into()));
        }
        let mut ks = self.microstate_ks.clone();
        ks.sort_unstable();
        ks.dedup();
        if ks.len() != self.microstate_ks.len() {
            return Err(Error::Config("microstate_ks contains duplicates".into()));
        }
        if self.cv_folds < 2 {
            return Err(Error::Config(format!("cv_folds must be >= 2, got {}", self.cv_folds)));
        }
        if self.n_init == 0 || self.max_iter == 0 {
            return Err(Error::Config("n_init and max_iter must be >= 1".into()));
        }
        if !(self.artifact_limit_uv > 0.0) {
            return Err(Error::Config("artifact_limit_uv must be positive".into()));
        }
        if self.band_filter_order == 0 || self.prefilter.order == 0 {
            return Err(Error::Config("filter orders must be >= 1".into()));
        }
        if self.prefilter.enabled {
            let p = &self.prefilter;
            if !(p.lo_hz > 0.0 && p.lo_hz < p.hi_hz) {
                return Err(Error::Config("prefilter needs 0 < lo < hi".into()));
            }
            if let Some(fs) = fs_hz {
                if p.hi_hz >= fs / 2.0 {
                    return Err(Error::Config(format!("prefilter upper edge reaches Nyquist ({} Hz)", fs / 2.0)));
                }
            }
        }
        if self.learners.is_empty() {
            return Err(Error::Config("at least one learner is required".into()));
        }
        Ok(())
    }
}
