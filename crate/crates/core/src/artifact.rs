//! On-disk formats: model and threshold files (TOML), score and ROC CSVs,
//! and run manifests.
//!
//! Floats are written in Rust's shortest round-trip notation, so a model
//! read back is bit-identical to the one written, and writing is
//! deterministic (no timestamps), so identical runs give identical bytes.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detectors::{Method, ScoreReport, ThresholdSource};
use crate::error::{Error, Result};
use crate::evaluation::RocCurve;
use crate::matrix::DataMatrix;
use crate::pca::{PcaModel, Standardizer};
use crate::stats::EmpiricalDistribution;
use crate::training::{self, ComponentThresholds};

pub const MODEL_FORMAT: &str = "pcaids-model";
pub const THRESHOLDS_FORMAT: &str = "pcaids-thresholds";
pub const FORMAT_VERSION: u32 = 1;

fn check_header(format: &str, version: u32, expected: &str) -> Result<()> {
    if format != expected {
        return Err(Error::Format(format!(
            "expected a `{expected}` file, found `{format}`"
        )));
    }
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported {expected} format version {version} (this build reads {FORMAT_VERSION})"
        )));
    }
    Ok(())
}

/// Fitted model plus the feature names it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub model: PcaModel,
    pub feature_names: Vec<String>,
    /// Free-form provenance (preset, input file, ...).
    pub metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    format_version: u32,
    n: usize,
    p: usize,
    canonical_signs: bool,
    feature_names: Vec<String>,
    means: Vec<f64>,
    sds: Vec<f64>,
    gamma: Vec<f64>,
    lambda: Vec<f64>,
    /// Row-major `p x p`, columns are eigenvectors.
    v: Vec<f64>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

impl ModelArtifact {
    pub fn new(model: PcaModel, feature_names: Vec<String>) -> Result<Self> {
        if feature_names.len() != model.p() {
            return Err(Error::DimensionMismatch {
                expected: model.p(),
                got: feature_names.len(),
            });
        }
        Ok(ModelArtifact {
            model,
            feature_names,
            metadata: BTreeMap::new(),
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        let m = &self.model;
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            format_version: FORMAT_VERSION,
            n: m.train_n(),
            p: m.p(),
            canonical_signs: true,
            feature_names: self.feature_names.clone(),
            means: m.standardizer().means().to_vec(),
            sds: m.standardizer().sds().to_vec(),
            gamma: m.gamma().to_vec(),
            lambda: m.lambda().to_vec(),
            v: m.v().as_slice().to_vec(),
            metadata: self.metadata.clone(),
        };
        toml::to_string(&file).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let f: ModelFile =
            toml::from_str(text).map_err(|e| Error::Format(format!("model file: {e}")))?;
        check_header(&f.format, f.format_version, MODEL_FORMAT)?;
        let p = f.p;
        if p == 0 || f.feature_names.len() != p || f.v.len() != p.saturating_mul(p) {
            return Err(Error::Format(format!(
                "model file: arrays do not match p = {p}"
            )));
        }
        let standardizer = Standardizer::new(f.means, f.sds)?;
        let v = DataMatrix::new(p, p, f.v)?;
        let model = PcaModel::from_parts(standardizer, v, f.gamma, f.lambda, f.n)?;
        Ok(ModelArtifact {
            model,
            feature_names: f.feature_names,
            metadata: f.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        write_text(path, &self.to_toml()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        Self::from_toml(&text).map_err(|e| e.in_file(path))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ThresholdsFile {
    format: String,
    format_version: u32,
    alpha: f64,
    boot_count: usize,
    boot_size: usize,
    seed: u64,
    /// Checksum of the model file these thresholds belong to.
    #[serde(default)]
    model_sha256: Option<String>,
    delta: Vec<f64>,
    /// One sorted array of `r_j^u` per component.
    boot_samples: Vec<Vec<f64>>,
}

/// Serializes thresholds; `model_sha256` ties them to a model file.
pub fn thresholds_to_toml(t: &ComponentThresholds, model_sha256: Option<&str>) -> Result<String> {
    let file = ThresholdsFile {
        format: THRESHOLDS_FORMAT.into(),
        format_version: FORMAT_VERSION,
        alpha: t.alpha(),
        boot_count: t.boot_count(),
        boot_size: t.boot_size(),
        seed: t.seed(),
        model_sha256: model_sha256.map(str::to_owned),
        delta: t.delta().to_vec(),
        boot_samples: t.boot_samples().iter().map(|d| d.samples().to_vec()).collect(),
    };
    toml::to_string(&file).map_err(|e| Error::Format(e.to_string()))
}

/// Parses thresholds, re-deriving `delta` from the samples and checking it
/// against the stored values. Returns the stored model checksum if any.
pub fn thresholds_from_toml(text: &str) -> Result<(ComponentThresholds, Option<String>)> {
    let f: ThresholdsFile =
        toml::from_str(text).map_err(|e| Error::Format(format!("thresholds file: {e}")))?;
    check_header(&f.format, f.format_version, THRESHOLDS_FORMAT)?;
    if f.boot_samples.len() != f.delta.len() || f.delta.is_empty() {
        return Err(Error::Format(
            "thresholds file: delta and boot_samples disagree on p".into(),
        ));
    }
    if f.boot_samples.iter().any(|s| s.len() != f.boot_count) {
        return Err(Error::Format(format!(
            "thresholds file: every component needs boot_count = {} samples",
            f.boot_count
        )));
    }
    let boot = f
        .boot_samples
        .into_iter()
        .map(EmpiricalDistribution::new)
        .collect::<Result<Vec<_>>>()?;
    let t = training::component_thresholds(boot, f.alpha, f.boot_count, f.boot_size, f.seed)?;
    if t.delta().iter().zip(&f.delta).any(|(a, b)| a.to_bits() != b.to_bits()) {
        return Err(Error::Format(
            "thresholds file: delta does not match the bootstrap samples".into(),
        ));
    }
    Ok((t, f.model_sha256))
}

pub fn save_thresholds(path: &Path, t: &ComponentThresholds, model_sha256: Option<&str>) -> Result<String> {
    write_text(path, &thresholds_to_toml(t, model_sha256)?)
}

pub fn load_thresholds(path: &Path) -> Result<(ComponentThresholds, Option<String>)> {
    let text = read_text(path)?;
    thresholds_from_toml(&text).map_err(|e| e.in_file(path))
}

// ---------------------------------------------------------------------------
// score CSV

/// One row of a score CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    /// 1-based data row of the scored input.
    pub row: usize,
    pub score: f64,
    pub threshold: f64,
    pub flag: u8,
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
}

/// Writes `report` as CSV; `row_ids` are 0-based input rows.
pub fn write_score_csv<W: Write>(
    writer: W,
    report: &ScoreReport,
    row_ids: &[usize],
    labels: Option<&[bool]>,
) -> Result<()> {
    if row_ids.len() != report.scores.len() {
        return Err(Error::DimensionMismatch {
            expected: report.scores.len(),
            got: row_ids.len(),
        });
    }
    let mut w = csv::Writer::from_writer(writer);
    for (i, (&score, &flag)) in report.scores.iter().zip(&report.flags).enumerate() {
        w.serialize(ScoreRecord {
            row: row_ids[i] + 1,
            score,
            threshold: report.threshold,
            flag: flag as u8,
            method: report.method.to_string(),
            label: labels.map(|l| l[i] as u8),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Parsed score CSV, all methods in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub records: Vec<ScoreRecord>,
}

impl ScoreTable {
    /// Methods present, in order of first appearance.
    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.method) {
                out.push(r.method.clone());
            }
        }
        out
    }

    /// `(scores, labels, threshold)` of one method; labels are required.
    pub fn method_columns(&self, method: &str) -> Result<(Vec<f64>, Vec<bool>, f64)> {
        let rows: Vec<&ScoreRecord> = self.records.iter().filter(|r| r.method == method).collect();
        if rows.is_empty() {
            return Err(Error::MissingColumn(format!("scores for method {method}")));
        }
        let labels = rows
            .iter()
            .map(|r| r.label.map(|l| l == 1))
            .collect::<Option<Vec<bool>>>()
            .ok_or_else(|| Error::MissingColumn("label".into()))?;
        Ok((
            rows.iter().map(|r| r.score).collect(),
            labels,
            rows[0].threshold,
        ))
    }
}

pub fn read_score_csv<R: Read>(reader: R) -> Result<ScoreTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = Vec::new();
    for (i, rec) in rdr.deserialize::<ScoreRecord>().enumerate() {
        let rec = rec.map_err(|e| Error::MalformedRow {
            row: i + 1,
            message: e.to_string(),
        })?;
        if !rec.score.is_finite() || rec.threshold.is_nan() || rec.flag > 1 || rec.label.is_some_and(|l| l > 1) {
            return Err(Error::MalformedRow {
                row: i + 1,
                message: "score must be finite; flag and label must be 0 or 1".into(),
            });
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(ScoreTable { records })
}

/// Sidecar metadata of a score CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMeta {
    pub method: Method,
    pub threshold_source: ThresholdSource,
    pub alpha: f64,
    pub threshold: f64,
    pub rows: usize,
    pub flagged: usize,
    /// 1-based component indices summed into the score.
    pub components: Vec<usize>,
    /// 1-based affected components (AAD, WAAD).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub affected: Option<Vec<usize>>,
    /// Number of affected components (AAD, WAAD) or retained rank (WBPCA).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_u: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub false_alarm_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ScoreMeta {
    pub fn from_report(report: &ScoreReport) -> Self {
        let one_based = |v: &[usize]| v.iter().map(|j| j + 1).collect::<Vec<_>>();
        let affected = report.affected.as_ref().map(|a| one_based(&a.affected));
        ScoreMeta {
            method: report.method,
            threshold_source: report.threshold_source,
            alpha: report.alpha,
            threshold: report.threshold,
            rows: report.scores.len(),
            flagged: report.flagged_count(),
            components: one_based(&report.components),
            q: report.rank.or(affected.as_ref().map(Vec::len)),
            affected,
            s_u: report
                .affected
                .as_ref()
                .filter(|a| !a.s_u.is_empty())
                .map(|a| a.s_u.clone()),
            weights: report.weights.clone(),
            detection_rate: None,
            false_alarm_rate: None,
            note: None,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }
}

/// `scores.csv` -> `scores.meta.toml`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.toml")
}

// ---------------------------------------------------------------------------
// ROC CSV

pub fn write_roc_csv<W: Write>(mut writer: W, curve: &RocCurve) -> Result<()> {
    writeln!(writer, "# auc={}", curve.auc())?;
    writeln!(writer, "fpr,tpr")?;
    for (x, y) in curve.points() {
        writeln!(writer, "{x},{y}")?;
    }
    Ok(())
}

/// Averaged curves of several methods sharing one FPR grid, as columns
/// `fpr,tpr_<method>...`.
pub fn write_multi_roc_csv<W: Write>(mut writer: W, curves: &[(Method, &RocCurve)]) -> Result<()> {
    let first = curves.first().ok_or(Error::EmptyInput)?.1;
    for (_, c) in curves {
        if c.points().len() != first.points().len()
            || c.points().iter().zip(first.points()).any(|(a, b)| a.0 != b.0)
        {
            return Err(Error::Format("curves do not share an FPR grid".into()));
        }
    }
    let aucs: Vec<String> = curves
        .iter()
        .map(|(m, c)| format!("auc_{}={}", column_name(*m), c.auc()))
        .collect();
    writeln!(writer, "# {}", aucs.join(","))?;
    let header: Vec<String> = curves.iter().map(|(m, _)| format!("tpr_{}", column_name(*m))).collect();
    writeln!(writer, "fpr,{}", header.join(","))?;
    for (k, (x, _)) in first.points().iter().enumerate() {
        let ys: Vec<String> = curves.iter().map(|(_, c)| c.points()[k].1.to_string()).collect();
        writeln!(writer, "{x},{}", ys.join(","))?;
    }
    Ok(())
}

fn column_name(m: Method) -> &'static str {
    match m {
        Method::Aad => "aad",
        Method::Waad => "waad",
        Method::Wbpca => "wbpca",
        Method::Mahalanobis => "true",
    }
}

// ---------------------------------------------------------------------------
// files and manifests

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
    Ok(sha256_hex(&bytes))
}

/// Writes `text` and returns its SHA-256.
pub fn write_text(path: &Path, text: &str) -> Result<String> {
    std::fs::write(path, text).map_err(|e| Error::from(e).in_file(path))?;
    Ok(sha256_hex(text.as_bytes()))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        })
    }
}

/// Record of one CLI run: the exact invocation, effective parameters and
/// checksums of everything read and written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub argv: Vec<String>,
    pub parameters: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }
}
