use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Label;
use crate::error::{Error, Result};

/// The four per-state microstate statistics, in canonical column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    DurationMs,
    OccurrencePerS,
    CoveragePct,
    MeanGfpUv,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 4] = [
        FeatureKind::DurationMs,
        FeatureKind::OccurrencePerS,
        FeatureKind::CoveragePct,
        FeatureKind::MeanGfpUv,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::DurationMs => "duration_ms",
            FeatureKind::OccurrencePerS => "occurrence_per_s",
            FeatureKind::CoveragePct => "coverage_pct",
            FeatureKind::MeanGfpUv => "mean_gfp_uv",
        }
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Schema(format!("unknown feature `{s}`")))
    }
}

/// One feature column: `<band>.k<k>.<state>.<feature>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnKey {
    pub band: String,
    pub k: usize,
    pub state: usize,
    pub feature: FeatureKind,
}

impl ColumnKey {
    pub fn state_letter(&self) -> char {
        (b'A' + self.state as u8) as char
    }
}

impl fmt::Display for ColumnKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.k{}.{}.{}", self.band, self.k, self.state_letter(), self.feature.as_str())
    }
}

impl FromStr for ColumnKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Schema(format!("column `{s}` does not match <band>.k<k>.<state>.<feature>"));
        let parts: Vec<&str> = s.split('.').collect();
        let [band, k, state, feature] = parts.as_slice() else {
            return Err(bad());
        };
        if band.is_empty() || !band.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(bad());
        }
        let k: usize = k.strip_prefix('k').and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        if !(2..=12).contains(&k) {
            return Err(bad());
        }
        let state = match state.as_bytes() {
            [c @ b'A'..=b'Z'] => (c - b'A') as usize,
            _ => return Err(bad()),
        };
        if state >= k {
            return Err(bad());
        }
        Ok(ColumnKey { band: band.to_string(), k, state, feature: feature.parse()? })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub subject_id: String,
    pub label: Label,
    pub values: Vec<f64>,
}

/// Windows × features, each row tagged with its subject and label.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMatrix {
    pub columns: Vec<ColumnKey>,
    pub rows: Vec<FeatureRow>,
}

impl FeatureMatrix {
    pub fn new(columns: Vec<ColumnKey>) -> Result<Self> {
        check_unique(&columns)?;
        Ok(FeatureMatrix { columns, rows: Vec::new() })
    }

    pub fn push(&mut self, row: FeatureRow) -> Result<()> {
        if row.values.len() != self.columns.len() {
            return Err(Error::Schema(format!(
                "row has {} values, matrix has {} columns",
                row.values.len(),
                self.columns.len()
            )));
        }
        if row.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite feature value for subject {}", row.subject_id)));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, key: &ColumnKey) -> Option<usize> {
        self.columns.iter().position(|c| c == key)
    }
}

fn check_unique(columns: &[ColumnKey]) -> Result<()> {
    let mut seen = HashSet::new();
    for c in columns {
        if !seen.insert(c) {
            return Err(Error::Schema(format!("duplicate column `{c}`")));
        }
    }
    Ok(())
}

pub fn write_feature_matrix(matrix: &FeatureMatrix, path: &Path) -> Result<()> {
    check_unique(&matrix.columns)?;
    let mut out = String::from("subject_id,label");
    for c in &matrix.columns {
        out.push(',');
        out.push_str(&c.to_string());
    }
    out.push('\n');
    for row in &matrix.rows {
        if row.values.len() != matrix.columns.len() {
            return Err(Error::Schema("row width differs from column count".into()));
        }
        if row.subject_id.contains([',', '\n', '"']) {
            return Err(Error::Data(format!("subject id `{}` contains a csv delimiter", row.subject_id)));
        }
        out.push_str(&row.subject_id);
        out.push(',');
        out.push_str(row.label.as_str());
        for v in &row.values {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_feature_matrix(path: &Path) -> Result<FeatureMatrix> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::MalformedInput("feature file is empty".into()))?;
    let mut names = header.split(',');
    if names.next() != Some("subject_id") || names.next() != Some("label") {
        return Err(Error::Schema("feature header must start with subject_id,label".into()));
    }
    let columns = names.map(str::parse).collect::<Result<Vec<ColumnKey>>>()?;
    let mut matrix = FeatureMatrix::new(columns)?;
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let mut fields = line.split(',');
        let subject_id = fields.next().unwrap_or_default().to_string();
        let label: Label = fields.next().unwrap_or_default().parse()?;
        let values = fields
            .map(|f| {
                let v: f64 = f.parse().map_err(|_| Error::MalformedInput(format!("bad number `{f}`")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::MalformedInput(format!("non-finite feature `{f}`")))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        matrix.push(FeatureRow { subject_id, label, values })?;
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn key(band: &str, k: usize, state: usize, feature: FeatureKind) -> ColumnKey {
        ColumnKey { band: band.into(), k, state, feature }
    }

    #[test]
    fn column_names_follow_schema() {
        let c = key("alpha", 7, 1, FeatureKind::OccurrencePerS);
        assert_eq!(c.to_string(), "alpha.k7.B.occurrence_per_s");
        assert_eq!("alpha.k7.B.occurrence_per_s".parse::<ColumnKey>().unwrap(), c);
    }

    #[test]
    fn unknown_and_duplicate_columns_rejected() {
        for bad in ["alpha.k4.E.duration_ms", "alpha.k4.A.speed", "alpha.4.A.duration_ms", "alpha.k4.A", "x.k1.A.duration_ms"] {
            assert!(matches!(bad.parse::<ColumnKey>(), Err(Error::Schema(_))), "{bad}");
        }
        let c = key("beta", 4, 0, FeatureKind::CoveragePct);
        assert!(matches!(FeatureMatrix::new(vec![c.clone(), c]), Err(Error::Schema(_))));

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        fs::write(&p, "subject_id,label,beta.k4.A.coverage_pct,beta.k4.A.coverage_pct\n").unwrap();
        assert!(matches!(read_feature_matrix(&p), Err(Error::Schema(_))));
    }

    #[test]
    fn empty_matrix_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let m = FeatureMatrix::new(vec![key("delta", 4, 3, FeatureKind::MeanGfpUv)]).unwrap();
        write_feature_matrix(&m, &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap().lines().count(), 1);
        assert_eq!(read_feature_matrix(&p).unwrap().n_rows(), 0);
    }

    #[test]
    fn random_3x10_round_trip() {
        use rand::Rng;
        let mut rng = crate::rng::rng_from_seed(3);
        let cols: Vec<ColumnKey> = (0..10)
            .map(|i| key("theta", 5, i % 5, FeatureKind::ALL[i / 5]))
            .collect();
        let mut m = FeatureMatrix::new(cols).unwrap();
        for r in 0..3 {
            let values = (0..10).map(|_| rng.random_range(-1e6..1e6) * rng.random::<f64>()).collect();
            m.push(FeatureRow { subject_id: format!("s{r}"), label: Label::from_class(r as u8 % 2), values }).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        write_feature_matrix(&m, &p).unwrap();
        let back = read_feature_matrix(&p).unwrap();
        let max_diff = m
            .rows
            .iter()
            .zip(&back.rows)
            .flat_map(|(a, b)| a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-12);
        assert_eq!(back, m);
    }

    proptest! {
        #[test]
        fn column_key_bijective(band in "[a-z][a-z0-9_]{0,8}", k in 2usize..=12, s in 0usize..12, f in 0usize..4) {
            let c = key(&band, k, s % k, FeatureKind::ALL[f]);
            prop_assert_eq!(c.to_string().parse::<ColumnKey>().unwrap(), c);
        }

        #[test]
        fn values_round_trip(values in proptest::collection::vec(-1e300f64..1e300, 1..8)) {
            let cols: Vec<ColumnKey> = (0..values.len()).map(|i| key("gamma", 7, i % 7, FeatureKind::ALL[i / 7])).collect();
            let mut m = FeatureMatrix::new(cols).unwrap();
            m.push(FeatureRow { subject_id: "p".into(), label: Label::Healthy, values }).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("f.csv");
            write_feature_matrix(&m, &p).unwrap();
            prop_assert_eq!(read_feature_matrix(&p).unwrap(), m);
        }
    }
}
