//! Binary classifiers trained from scratch: Gini decision tree, random
//! forest, RBF support vector machine (SMO) and a batch-normalized MLP.
//!
//! Every learner sits behind [`TrainedModel`], which also carries the
//! standardizer fitted on the training rows.

mod mlp;
mod svm;
mod tree;

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataio::LearnerKind;
use crate::error::{Error, Result};

pub use mlp::{BatchNorm, BnMode, Dense, Mlp, MlpParams};
pub use svm::{gamma_scale, platt_fit, platt_proba, rbf, solve_dual, DualSolution, KernelRows, SvmModel, SvmParams};
pub use tree::{gini, DecisionTree, DtParams, Node, RandomForest, RfParams};

/// Feature rows with binary labels (1 = tinnitus) and the subject each row
/// came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Vec<u8>,
    pub subject_ids: Vec<String>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Vec<u8>, subject_ids: Vec<String>) -> Result<Self> {
        if y.len() != x.nrows() || subject_ids.len() != x.nrows() {
            return Err(Error::Data(format!(
                "dataset has {} rows but {} labels and {} subject ids",
                x.nrows(),
                y.len(),
                subject_ids.len()
            )));
        }
        if y.iter().any(|v| *v > 1) {
            return Err(Error::Data("labels must be 0 or 1".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("dataset contains non-finite features".into()));
        }
        Ok(Dataset { x, y, subject_ids })
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    /// Rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            subject_ids: idx.iter().map(|&i| self.subject_ids[i].clone()).collect(),
        }
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let pos = self.y.iter().filter(|v| **v == 1).count();
        [self.y.len() - pos, pos]
    }
}

/// Per-feature mean and population SD of the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Data("cannot standardize an empty matrix".into()));
        }
        let n = x.nrows() as f64;
        let mut means = Vec::with_capacity(x.ncols());
        let mut sds = Vec::with_capacity(x.ncols());
        for col in x.axis_iter(Axis(1)) {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            means.push(m);
            sds.push(var.sqrt());
        }
        Ok(Standardizer { means, sds })
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.means.len() {
            return Err(Error::Data(format!("expected {} features, got {}", self.means.len(), x.ncols())));
        }
        let mut out = x.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, sd) = (self.means[j], self.sds[j]);
            // constant training columns carry no information
            if sd > 0.0 {
                col.mapv_inplace(|v| (v - m) / sd);
            } else {
                col.fill(0.0);
            }
        }
        Ok(out)
    }
}

/// Hyper-parameters of every learner, as they appear in the pipeline config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearnerParams {
    pub dt: DtParams,
    pub rf: RfParams,
    pub svm: SvmParams,
    pub mlp: MlpParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelParams {
    Dt(DecisionTree),
    Rf(RandomForest),
    Svm(SvmModel),
    Mlp(Mlp),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub kind: LearnerKind,
    pub n_features: usize,
    pub seed: u64,
    pub standardizer: Standardizer,
    pub params: ModelParams,
}

/// Fit the standardizer on `ds` and train one learner on the standardized rows.
pub fn train(kind: LearnerKind, ds: &Dataset, params: &LearnerParams, seed: u64) -> Result<TrainedModel> {
    if ds.n_rows() == 0 {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    let standardizer = Standardizer::fit(ds.x.view())?;
    let x = standardizer.apply(ds.x.view())?;
    let y = &ds.y;
    let model = match kind {
        LearnerKind::Dt => ModelParams::Dt(DecisionTree::fit(x.view(), y, &params.dt)),
        LearnerKind::Rf => ModelParams::Rf(RandomForest::fit(x.view(), y, &params.rf, seed)?),
        LearnerKind::Svm => ModelParams::Svm(SvmModel::fit(x.view(), y, &params.svm)?),
        LearnerKind::Mlp => ModelParams::Mlp(Mlp::fit(x.view(), y, &params.mlp, seed)?),
    };
    Ok(TrainedModel { kind, n_features: ds.n_features(), seed, standardizer, params: model })
}

impl TrainedModel {
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::Data(format!("model expects {} features, got {}", self.n_features, x.ncols())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("prediction input contains non-finite features".into()));
        }
        let z = self.standardizer.apply(x)?;
        let rows = z.axis_iter(Axis(0));
        let p: Vec<f64> = match &self.params {
            ModelParams::Dt(t) => rows.map(|r| t.predict_proba_row(r)).collect(),
            ModelParams::Rf(f) => rows.map(|r| f.predict_proba_row(r)).collect(),
            ModelParams::Svm(s) => rows.map(|r| s.predict_proba_row(r)).collect(),
            ModelParams::Mlp(m) => m.predict_proba(z.view()),
        };
        Ok(p)
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<u8>> {
        Ok(self.predict_proba(x)?.into_iter().map(|p| u8::from(p >= 0.5)).collect())
    }

    /// Continuous ranking score used for ROC analysis.
    pub fn score_row(&self, row: ArrayView1<f64>) -> Result<f64> {
        let x = row.to_owned().insert_axis(Axis(0));
        Ok(self.predict_proba(x.view())?[0])
    }
}

const MAGIC: &[u8; 4] = b"NSKM";
const VERSION: u32 = 1;

fn kind_tag(kind: LearnerKind) -> u8 {
    match kind {
        LearnerKind::Dt => 1,
        LearnerKind::Rf => 2,
        LearnerKind::Svm => 3,
        LearnerKind::Mlp => 4,
    }
}

/// `NSKM` | u32 version | u8 kind | u64 length | JSON body, little endian.
pub fn encode_model(model: &TrainedModel) -> Result<Vec<u8>> {
    let body = serde_json::to_vec(model).map_err(|e| Error::Data(format!("cannot encode model: {e}")))?;
    let mut out = Vec::with_capacity(body.len() + 17);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(kind_tag(model.kind));
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<TrainedModel> {
    let bad = |m: &str| Error::MalformedInput(format!("model container: {m}"));
    if bytes.len() < 17 || &bytes[..4] != MAGIC {
        return Err(bad("missing NSKM header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let tag = bytes[8];
    let len = u64::from_le_bytes(bytes[9..17].try_into().unwrap()) as usize;
    if bytes.len() - 17 != len {
        return Err(bad("payload length mismatch"));
    }
    let model: TrainedModel = serde_json::from_slice(&bytes[17..])?;
    if kind_tag(model.kind) != tag {
        return Err(bad("kind tag does not match payload"));
    }
    Ok(model)
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    std::fs::File::create(path)?.write_all(&encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode_model(&buf)
}
