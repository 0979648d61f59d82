//! Monitoring phase: which components a batch disturbs, and the per-row
//! anomaly scores of AAD, WAAD, WBPCA and the Mahalanobis baseline.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::matrix::DataMatrix;
use crate::pca::{self, PcaModel};
use crate::stats;
use crate::training::{ComponentThresholds, TrainingReference};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Aad,
    Waad,
    Wbpca,
    Mahalanobis,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Aad => "AAD",
            Method::Waad => "WAAD",
            Method::Wbpca => "WBPCA",
            Method::Mahalanobis => "MAHALANOBIS",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aad" => Ok(Method::Aad),
            "waad" => Ok(Method::Waad),
            "wbpca" => Ok(Method::Wbpca),
            "mahalanobis" | "true" => Ok(Method::Mahalanobis),
            other => Err(Error::InvalidParameter(format!("unknown method `{other}`"))),
        }
    }
}

/// Where the row-level threshold theta comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdSource {
    /// `(1 - alpha)` quantile of chi-square with `q` degrees of freedom.
    ChiSquare,
    /// `(1 - alpha)` quantile of the statistic pooled over the training
    /// bootstrap replicates.
    #[default]
    Bootstrap,
    /// `(1 - alpha)` quantile of the statistic over the training rows.
    Empirical,
    /// Caller-supplied value.
    Fixed,
}

impl ThresholdSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ThresholdSource::ChiSquare => "chi-square",
            ThresholdSource::Bootstrap => "bootstrap",
            ThresholdSource::Empirical => "empirical",
            ThresholdSource::Fixed => "fixed",
        }
    }
}

impl fmt::Display for ThresholdSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ThresholdSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "chi-square" | "chisquare" | "chi2" => Ok(ThresholdSource::ChiSquare),
            "bootstrap" => Ok(ThresholdSource::Bootstrap),
            "empirical" => Ok(ThresholdSource::Empirical),
            "fixed" => Ok(ThresholdSource::Fixed),
            other => Err(Error::InvalidParameter(format!(
                "unknown threshold source `{other}`"
            ))),
        }
    }
}

/// Observed batch standard deviations `s_j^u` and the components where they
/// exceed `delta_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffectedComponents {
    pub s_u: Vec<f64>,
    pub affected: Vec<usize>,
}

impl AffectedComponents {
    pub fn q(&self) -> usize {
        self.affected.len()
    }

    /// Components ordered by decreasing `s_j^u`.
    pub fn ranked(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.s_u.len()).collect();
        order.sort_by(|&a, &b| self.s_u[b].total_cmp(&self.s_u[a]).then(a.cmp(&b)));
        order
    }
}

/// Scores, threshold and flags of one detector on one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub method: Method,
    pub scores: Vec<f64>,
    pub threshold: f64,
    pub threshold_source: ThresholdSource,
    pub alpha: f64,
    pub flags: Vec<bool>,
    /// Components summed into the score (AAD, WAAD); empty otherwise.
    pub components: Vec<usize>,
    pub affected: Option<AffectedComponents>,
    pub weights: Option<Vec<f64>>,
    /// Retained rank for WBPCA.
    pub rank: Option<usize>,
}

impl ScoreReport {
    fn new(method: Method, scores: Vec<f64>, threshold: f64, source: ThresholdSource, alpha: f64) -> Self {
        let flags = scores.iter().map(|&s| s > threshold).collect();
        ScoreReport {
            method,
            scores,
            threshold,
            threshold_source: source,
            alpha,
            flags,
            components: Vec::new(),
            affected: None,
            weights: None,
            rank: None,
        }
    }

    /// All-zero scores and no flags: the batch gave no component-level
    /// evidence of anomalies, so nothing is scored.
    pub fn no_evidence(method: Method, rows: usize, source: ThresholdSource, alpha: f64) -> Self {
        let mut report = ScoreReport::new(method, vec![0.0; rows], f64::INFINITY, source, alpha);
        report.affected = Some(AffectedComponents {
            s_u: Vec::new(),
            affected: Vec::new(),
        });
        report
    }

    pub fn flagged_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn flag_rate(&self) -> f64 {
        self.flagged_count() as f64 / self.flags.len().max(1) as f64
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidProbability(alpha))
    }
}

/// `s_j^u`: standard deviation of each column of `sqrt(n - 1) U^f`.
pub fn batch_component_sds(model: &PcaModel, x_f: &DataMatrix) -> Result<Vec<f64>> {
    if x_f.rows() < 2 {
        return Err(Error::TooFewValues {
            what: "batch component standard deviations",
            need: 2,
            got: x_f.rows(),
        });
    }
    let u = pca::project_standardized(model, x_f)?;
    u.scaled_column_sds(model.train_n())
}

/// Components with `s_j^u > delta_j` (strict).
pub fn detect_affected(
    model: &PcaModel,
    thresholds: &ComponentThresholds,
    x_f: &DataMatrix,
) -> Result<AffectedComponents> {
    if thresholds.p() != model.p() {
        return Err(Error::DimensionMismatch {
            expected: model.p(),
            got: thresholds.p(),
        });
    }
    let s_u = batch_component_sds(model, x_f)?;
    let affected = (0..model.rank())
        .filter(|&j| s_u[j] > thresholds.delta()[j])
        .collect();
    Ok(AffectedComponents { s_u, affected })
}

fn reference_threshold(
    source: ThresholdSource,
    values: &[f64],
    reference: &TrainingReference,
    alpha: f64,
) -> Result<f64> {
    match source {
        ThresholdSource::Bootstrap => {
            stats::weighted_quantile(values, reference.draw_counts(), 1.0 - alpha)
        }
        ThresholdSource::Empirical => {
            let mut sorted = values.to_vec();
            sorted.sort_by(f64::total_cmp);
            stats::quantile_of_sorted(&sorted, 1.0 - alpha)
        }
        _ => unreachable!("only reference-based sources"),
    }
}

/// AAD scores `t_i^f = (n - 1) sum_{j affected} (u_ij^f)^2`.
///
/// Fails with [`Error::EmptyAffectedSet`] when no component is affected.
pub fn aad_score(
    model: &PcaModel,
    affected: &AffectedComponents,
    x_f: &DataMatrix,
    source: ThresholdSource,
    alpha: f64,
    reference: Option<&TrainingReference>,
) -> Result<ScoreReport> {
    if affected.affected.is_empty() {
        return Err(Error::EmptyAffectedSet);
    }
    let mut report =
        aad_score_with_components(model, &affected.affected, x_f, source, alpha, reference)?;
    report.affected = Some(affected.clone());
    Ok(report)
}

/// AAD scores over a caller-supplied component set.
///
/// This is the streaming path: single rows cannot produce batch statistics,
/// so they are scored against a set frozen from an earlier batch.
pub fn aad_score_with_components(
    model: &PcaModel,
    components: &[usize],
    x_f: &DataMatrix,
    source: ThresholdSource,
    alpha: f64,
    reference: Option<&TrainingReference>,
) -> Result<ScoreReport> {
    check_alpha(alpha)?;
    let u = pca::project_standardized(model, x_f)?;
    let scores = pca::t_statistic(&u, components, model.train_n())?;
    let threshold = match source {
        ThresholdSource::ChiSquare => {
            stats::chi_square_quantile(1.0 - alpha, components.len() as u32)?
        }
        ThresholdSource::Bootstrap | ThresholdSource::Empirical => {
            let reference =
                reference.ok_or(Error::MissingBootstrapReference(source.as_str()))?;
            let train_t = reference.weighted_t(components, None);
            reference_threshold(source, &train_t, reference, alpha)?
        }
        ThresholdSource::Fixed => {
            return Err(Error::UnsupportedThresholdSource {
                source_name: source.as_str(),
                method: "AAD",
            })
        }
    };
    let mut report = ScoreReport::new(Method::Aad, scores, threshold, source, alpha);
    report.components = components.to_vec();
    Ok(report)
}

/// WAAD scores `t_i^fw = (n - 1) sum_j w_j (u_ij^f)^2` over all components
/// with `w_j = s_j^u`; theta is read from the same weighted statistic over
/// the training reference.
pub fn waad_score(
    model: &PcaModel,
    thresholds: &ComponentThresholds,
    x_f: &DataMatrix,
    source: ThresholdSource,
    alpha: f64,
    reference: &TrainingReference,
) -> Result<ScoreReport> {
    check_alpha(alpha)?;
    if !matches!(source, ThresholdSource::Bootstrap | ThresholdSource::Empirical) {
        return Err(Error::UnsupportedThresholdSource {
            source_name: source.as_str(),
            method: "WAAD",
        });
    }
    let affected = detect_affected(model, thresholds, x_f)?;
    let weights = affected.s_u.clone();
    let components: Vec<usize> = (0..model.rank()).collect();
    let scores = weighted_t(model, x_f, &components, &weights)?;
    let train_t = reference.weighted_t(&components, Some(&weights));
    let threshold = reference_threshold(source, &train_t, reference, alpha)?;
    let mut report = ScoreReport::new(Method::Waad, scores, threshold, source, alpha);
    report.components = components;
    report.affected = Some(affected);
    report.weights = Some(weights);
    Ok(report)
}

/// `(n - 1) sum_{j in components} w_j (u_ij)^2` for each row of `x_f`.
pub fn weighted_t(
    model: &PcaModel,
    x_f: &DataMatrix,
    components: &[usize],
    weights: &[f64],
) -> Result<Vec<f64>> {
    if components.is_empty() {
        return Err(Error::EmptyComponentSet);
    }
    let u = pca::project_standardized(model, x_f)?;
    let scale = (model.train_n() - 1) as f64;
    Ok(u.u()
        .row_iter()
        .map(|row| {
            scale
                * components
                    .iter()
                    .map(|&j| weights[j] * row[j] * row[j])
                    .sum::<f64>()
        })
        .collect())
}

/// How the WBPCA threshold is chosen.
#[derive(Debug, Clone, Copy)]
pub enum WbpcaThreshold<'a> {
    Fixed(f64),
    /// `(1 - alpha)` empirical quantile of the training residuals.
    TrainingQuantile {
        alpha: f64,
        reference: &'a TrainingReference,
    },
}

/// WBPCA scores: squared residual `||x - x V~ V~^T||^2` of the rank-q
/// reconstruction.
pub fn wbpca_score(
    model: &PcaModel,
    q: usize,
    x_f: &DataMatrix,
    threshold: WbpcaThreshold<'_>,
) -> Result<ScoreReport> {
    let recon = pca::reconstruct_rank_q(model, x_f, q)?;
    let scores: Vec<f64> = x_f
        .as_slice()
        .par_chunks(x_f.cols())
        .zip(recon.as_slice().par_chunks(x_f.cols()))
        .map(|(x, r)| x.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect();
    let (theta, source, alpha) = match threshold {
        WbpcaThreshold::Fixed(t) => (t, ThresholdSource::Fixed, f64::NAN),
        WbpcaThreshold::TrainingQuantile { alpha, reference } => {
            check_alpha(alpha)?;
            let train = reference.residuals(q);
            let theta = reference_threshold(ThresholdSource::Empirical, &train, reference, alpha)?;
            (theta, ThresholdSource::Empirical, alpha)
        }
    };
    let mut report = ScoreReport::new(Method::Wbpca, scores, theta, source, alpha);
    report.rank = Some(q);
    Ok(report)
}

/// Number of eigenvalues strictly greater than one, at least 1.
pub fn kaiser_rank(lambda: &[f64]) -> usize {
    lambda.iter().filter(|&&l| l > 1.0).count().max(1)
}

/// Squared Mahalanobis distance `(x - mu) Sigma^-1 (x - mu)^T` of each raw
/// row, via a Cholesky solve; theta is the chi-square `(1 - alpha)` quantile
/// with `p` degrees of freedom.
pub fn mahalanobis_score(
    mu: &[f64],
    sigma: &DataMatrix,
    y: &DataMatrix,
    alpha: f64,
) -> Result<ScoreReport> {
    check_alpha(alpha)?;
    let p = mu.len();
    if sigma.rows() != p || y.cols() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: if sigma.rows() != p { sigma.rows() } else { y.cols() },
        });
    }
    let l = linalg::cholesky(sigma)?;
    let scores: Vec<f64> = y
        .as_slice()
        .par_chunks(p)
        .map(|row| {
            let mut d: Vec<f64> = row.iter().zip(mu).map(|(a, b)| a - b).collect();
            linalg::forward_substitute(&l, &mut d);
            d.iter().map(|v| v * v).sum()
        })
        .collect();
    let theta = stats::chi_square_quantile(1.0 - alpha, p as u32)?;
    Ok(ScoreReport::new(
        Method::Mahalanobis,
        scores,
        theta,
        ThresholdSource::ChiSquare,
        alpha,
    ))
}
