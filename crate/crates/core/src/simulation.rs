//! Synthetic experiments: AR(1) Gaussian training data, anomalies made by
//! shifting rows along chosen eigenvectors, and replicated ROC comparisons of
//! AAD, WAAD, WBPCA and the Mahalanobis baseline.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detectors::{self, Method, ScoreReport, ThresholdSource, WbpcaThreshold};
use crate::error::{Error, Result};
use crate::evaluation::{self, RocCurve, DEFAULT_GRID_SIZE};
use crate::linalg;
use crate::matrix::DataMatrix;
use crate::pca::{self, PcaModel};
use crate::stats;
use crate::training::{self, ComponentThresholds, TrainingConfig, TrainingReference};

/// Methods compared in every experiment, in output order.
pub const METHODS: [Method; 4] = [Method::Aad, Method::Waad, Method::Wbpca, Method::Mahalanobis];

/// False positive rates at which per-replicate detection rates are kept.
pub const REPORT_FPRS: [f64; 3] = [0.01, 0.05, 0.1];

/// Which eigenvectors the anomalies are shifted along.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftPolicy {
    /// `k` distinct indices drawn afresh in every replicate.
    RandomK(usize),
    FirstK(usize),
    LastK(usize),
}

impl ShiftPolicy {
    pub fn k(self) -> usize {
        match self {
            ShiftPolicy::RandomK(k) | ShiftPolicy::FirstK(k) | ShiftPolicy::LastK(k) => k,
        }
    }

    /// Component indices (0-based, sorted) for a `p`-dimensional model.
    pub fn indices<R: Rng>(self, p: usize, rng: &mut R) -> Vec<usize> {
        let mut idx = match self {
            ShiftPolicy::RandomK(k) => index::sample(rng, p, k).into_vec(),
            ShiftPolicy::FirstK(k) => (0..k).collect(),
            ShiftPolicy::LastK(k) => (p - k..p).collect(),
        };
        idx.sort_unstable();
        idx
    }
}

impl fmt::Display for ShiftPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShiftPolicy::RandomK(k) => write!(f, "random-{k}"),
            ShiftPolicy::FirstK(k) => write!(f, "first-{k}"),
            ShiftPolicy::LastK(k) => write!(f, "last-{k}"),
        }
    }
}

impl FromStr for ShiftPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("invalid shift policy `{s}` (expected random-K, first-K or last-K)"));
        let (kind, k) = s.rsplit_once('-').ok_or_else(bad)?;
        let k: usize = k.parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(bad());
        }
        match kind {
            "random" => Ok(ShiftPolicy::RandomK(k)),
            "first" => Ok(ShiftPolicy::FirstK(k)),
            "last" => Ok(ShiftPolicy::LastK(k)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for ShiftPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ShiftPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Where the clean rows of the test batch come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CleanSource {
    /// Drawn without replacement from the training rows.
    #[default]
    ResampleTraining,
    /// Fresh draws from the generating distribution.
    Fresh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub rho: f64,
    pub c: f64,
    pub anomaly_count: usize,
    pub shift_policy: ShiftPolicy,
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    pub boot_count: usize,
    /// Bootstrap sample size; `None` uses the batch size `m`.
    pub boot_size: Option<usize>,
    pub clean_source: CleanSource,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n: 10_000,
            m: 5000,
            p: 30,
            rho: 0.9,
            c: 3.0,
            anomaly_count: 100,
            shift_policy: ShiftPolicy::RandomK(3),
            replicates: 1000,
            alpha: 0.01,
            seed: 0,
            boot_count: 1000,
            boot_size: None,
            clean_source: CleanSource::ResampleTraining,
        }
    }
}

impl ExperimentConfig {
    pub fn boot_size(&self) -> usize {
        self.boot_size.unwrap_or(self.m)
    }

    pub fn training_config(&self, seed: u64) -> TrainingConfig {
        TrainingConfig {
            alpha: self.alpha,
            boot_count: self.boot_count,
            boot_size: self.boot_size(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidParameter(msg));
        if !(0.0..1.0).contains(&self.rho) {
            return fail(format!("rho must lie in [0, 1), got {}", self.rho));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return fail(format!("c must be a non-negative number, got {}", self.c));
        }
        if self.p == 0 || self.shift_policy.k() > self.p {
            return fail(format!(
                "shift policy {} needs k <= p = {}",
                self.shift_policy, self.p
            ));
        }
        if self.n < self.p + 1 {
            return fail(format!("n = {} must exceed p = {}", self.n, self.p));
        }
        if self.m < 2 || self.anomaly_count > self.m {
            return fail(format!(
                "need 2 <= m and anomaly_count <= m (m = {}, anomaly_count = {})",
                self.m, self.anomaly_count
            ));
        }
        let from_training = match self.clean_source {
            CleanSource::ResampleTraining => self.m,
            CleanSource::Fresh => self.anomaly_count,
        };
        if from_training > self.n {
            return fail(format!(
                "the test batch needs {from_training} distinct training rows but n = {}",
                self.n
            ));
        }
        if self.replicates == 0 {
            return fail("replicates must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidProbability(self.alpha));
        }
        Ok(())
    }
}

/// On-disk experiment description: an [`ExperimentConfig`] whose `c` may be
/// a list, expanding to one experiment per value.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentFile {
    name: Option<String>,
    n: Option<usize>,
    m: Option<usize>,
    p: Option<usize>,
    rho: Option<f64>,
    c: CValues,
    anomaly_count: Option<usize>,
    shift_policy: ShiftPolicy,
    replicates: Option<usize>,
    alpha: Option<f64>,
    seed: Option<u64>,
    boot_count: Option<usize>,
    boot_size: Option<usize>,
    clean_source: Option<CleanSource>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum CValues {
    One(f64),
    Many(Vec<f64>),
}

/// A named set of experiments read from a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub name: Option<String>,
    pub experiments: Vec<ExperimentConfig>,
}

/// Parses an experiment config (TOML). Unset fields take the defaults of
/// [`ExperimentConfig`].
pub fn parse_experiment_config(text: &str) -> Result<ExperimentPlan> {
    let file: ExperimentFile =
        toml::from_str(text).map_err(|e| Error::Format(format!("experiment config: {e}")))?;
    let d = ExperimentConfig::default();
    let cs = match file.c {
        CValues::One(c) => vec![c],
        CValues::Many(cs) => cs,
    };
    if cs.is_empty() {
        return Err(Error::Format("experiment config: `c` is empty".into()));
    }
    let experiments = cs
        .into_iter()
        .map(|c| {
            let cfg = ExperimentConfig {
                n: file.n.unwrap_or(d.n),
                m: file.m.unwrap_or(d.m),
                p: file.p.unwrap_or(d.p),
                rho: file.rho.unwrap_or(d.rho),
                c,
                anomaly_count: file.anomaly_count.unwrap_or(d.anomaly_count),
                shift_policy: file.shift_policy,
                replicates: file.replicates.unwrap_or(d.replicates),
                alpha: file.alpha.unwrap_or(d.alpha),
                seed: file.seed.unwrap_or(d.seed),
                boot_count: file.boot_count.unwrap_or(d.boot_count),
                boot_size: file.boot_size.or(d.boot_size),
                clean_source: file.clean_source.unwrap_or(d.clean_source),
            };
            cfg.validate()?;
            Ok(cfg)
        })
        .collect::<Result<_>>()?;
    Ok(ExperimentPlan {
        name: file.name,
        experiments,
    })
}

/// `sigma_ij = rho^|i - j|`.
pub fn ar1_covariance(p: usize, rho: f64) -> Result<DataMatrix> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidParameter(format!(
            "rho must lie in [0, 1), got {rho}"
        )));
    }
    if p == 0 {
        return Err(Error::InvalidParameter("p must be positive".into()));
    }
    let values = (0..p * p)
        .map(|k| rho.powi((k / p).abs_diff(k % p) as i32))
        .collect();
    DataMatrix::new(p, p, values)
}

/// `count` i.i.d. rows of `N(mu, sigma)`, via `x = mu + L z` with
/// `sigma = L L^T`.
pub fn sample_mvn(count: usize, mu: &[f64], sigma: &DataMatrix, seed: u64) -> Result<DataMatrix> {
    let p = mu.len();
    if sigma.rows() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: sigma.rows(),
        });
    }
    let l = linalg::cholesky(sigma)?;
    let mut rng = stats::rng_from_seed(seed);
    let mut values = Vec::with_capacity(count * p);
    let mut z = vec![0.0; p];
    for _ in 0..count {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        for i in 0..p {
            let row = l.row(i);
            let s: f64 = row[..=i].iter().zip(&z).map(|(a, b)| a * b).sum();
            values.push(mu[i] + s);
        }
    }
    DataMatrix::new(count, p, values)
}

/// Shifts standardized rows by `c sqrt(lambda_j)` along each eigenvector
/// `v_j`, `j` in `indices`.
///
/// Adding `eta` to the score `z_j = x v_j` and reconstructing `z V^T` moves
/// the row by exactly `eta v_j^T`; that displacement is added directly.
pub fn inject_shift(
    x: &DataMatrix,
    v: &DataMatrix,
    lambda: &[f64],
    indices: &[usize],
    c: f64,
) -> Result<DataMatrix> {
    let p = v.cols();
    if x.cols() != p || lambda.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: x.cols(),
        });
    }
    if indices.is_empty() {
        return Err(Error::EmptyComponentSet);
    }
    let mut seen = vec![false; p];
    for &j in indices {
        if j >= p {
            return Err(Error::ComponentOutOfRange { index: j + 1, p });
        }
        if std::mem::replace(&mut seen[j], true) {
            return Err(Error::InvalidParameter(format!(
                "component {} listed twice",
                j + 1
            )));
        }
    }
    let mut delta = vec![0.0; p];
    for &j in indices {
        let eta = c * lambda[j].sqrt();
        for (f, d) in delta.iter_mut().enumerate() {
            *d += eta * v.get(f, j);
        }
    }
    let values = x
        .row_iter()
        .flat_map(|row| row.iter().zip(&delta).map(|(a, d)| a + d))
        .collect();
    DataMatrix::new(x.rows(), p, values)
}

/// [`inject_shift`] on raw rows: standardize with the model, shift, map back.
pub fn inject_shift_raw(
    model: &PcaModel,
    y: &DataMatrix,
    indices: &[usize],
    c: f64,
) -> Result<DataMatrix> {
    let x = pca::standardize(model.standardizer(), y)?;
    let shifted = inject_shift(&x, model.v(), model.lambda(), indices, c)?;
    let p = model.p();
    let mut out = vec![0.0; shifted.rows() * p];
    for (src, dst) in shifted.row_iter().zip(out.chunks_exact_mut(p)) {
        model.standardizer().unstandardize_row(src, dst);
    }
    DataMatrix::new(shifted.rows(), p, out)
}

/// Test batch of one experiment, on the raw scale.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub y: DataMatrix,
    /// `true` for injected anomalies.
    pub labels: Vec<bool>,
    /// Eigenvector indices (0-based) the anomalies were shifted along.
    pub shifted_components: Vec<usize>,
}

impl LabeledBatch {
    pub fn anomaly_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }
}

/// Everything produced by one replicate.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub model: PcaModel,
    pub thresholds: ComponentThresholds,
    pub reference: TrainingReference,
    /// Standardized training rows.
    pub x_train: DataMatrix,
    pub batch: LabeledBatch,
    pub affected: detectors::AffectedComponents,
    /// One report per entry of [`METHODS`].
    pub reports: Vec<ScoreReport>,
}

impl ExperimentRun {
    pub fn report(&self, method: Method) -> &ScoreReport {
        &self.reports[METHODS.iter().position(|&m| m == method).expect("known method")]
    }
}

// sub-seed slots of a replicate
const SEED_TRAIN: u64 = 0;
const SEED_BOOT: u64 = 1;
const SEED_ROWS: u64 = 2;
const SEED_SHIFT: u64 = 3;
const SEED_FRESH: u64 = 4;

/// Runs replicate `replicate` of `config`.
pub fn run_experiment(config: &ExperimentConfig, replicate: u64) -> Result<ExperimentRun> {
    config.validate()?;
    let root = stats::child_seed(config.seed, replicate);
    let seed = |slot| stats::child_seed(root, slot);
    let p = config.p;

    let sigma = ar1_covariance(p, config.rho)?;
    let mu = vec![0.0; p];
    let y_train = sample_mvn(config.n, &mu, &sigma, seed(SEED_TRAIN))?;
    let model = pca::fit_model(&y_train)?;
    let x_train = pca::standardize(model.standardizer(), &y_train)?;
    let thresholds =
        training::thresholds_for(&model, &x_train, &config.training_config(seed(SEED_BOOT)))?;
    let reference = TrainingReference::build(&model, &x_train, &thresholds)?;

    let shifted_components = config
        .shift_policy
        .indices(p, &mut stats::rng_from_seed(seed(SEED_SHIFT)));

    let clean_count = config.m - config.anomaly_count;
    let from_training = match config.clean_source {
        CleanSource::ResampleTraining => config.m,
        CleanSource::Fresh => config.anomaly_count,
    };
    let picked =
        index::sample(&mut stats::rng_from_seed(seed(SEED_ROWS)), config.n, from_training).into_vec();
    let (clean, anomalous_src) = match config.clean_source {
        CleanSource::ResampleTraining => {
            let (c, a) = picked.split_at(clean_count);
            (y_train.select_rows(c), a.to_vec())
        }
        CleanSource::Fresh => (
            sample_mvn(clean_count, &mu, &sigma, seed(SEED_FRESH))?,
            picked,
        ),
    };
    let y = if config.anomaly_count > 0 {
        let shifted = inject_shift_raw(
            &model,
            &y_train.select_rows(&anomalous_src),
            &shifted_components,
            config.c,
        )?;
        clean.vstack(&shifted)?
    } else {
        clean
    };
    let mut labels = vec![false; clean_count];
    labels.resize(config.m, true);
    let batch = LabeledBatch {
        y,
        labels,
        shifted_components,
    };

    let x_f = pca::standardize(model.standardizer(), &batch.y)?;
    let affected = detectors::detect_affected(&model, &thresholds, &x_f)?;
    let aad = if affected.affected.is_empty() {
        ScoreReport::no_evidence(Method::Aad, config.m, ThresholdSource::Bootstrap, config.alpha)
    } else {
        detectors::aad_score(
            &model,
            &affected,
            &x_f,
            ThresholdSource::Bootstrap,
            config.alpha,
            Some(&reference),
        )?
    };
    let waad = detectors::waad_score(
        &model,
        &thresholds,
        &x_f,
        ThresholdSource::Bootstrap,
        config.alpha,
        &reference,
    )?;
    let wbpca = detectors::wbpca_score(
        &model,
        detectors::kaiser_rank(model.lambda()),
        &x_f,
        WbpcaThreshold::TrainingQuantile {
            alpha: config.alpha,
            reference: &reference,
        },
    )?;
    let truth = detectors::mahalanobis_score(&mu, &sigma, &batch.y, config.alpha)?;

    Ok(ExperimentRun {
        model,
        thresholds,
        reference,
        x_train,
        batch,
        affected,
        reports: vec![aad, waad, wbpca, truth],
    })
}

/// Per-method results over all replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    /// Vertical average of the replicate ROC curves.
    pub curve: RocCurve,
    /// AUC of each replicate's exact ROC curve.
    pub aucs: Vec<f64>,
    /// `tpr_at[r][k]`: detection rate of replicate `r` at `REPORT_FPRS[k]`.
    pub tpr_at: Vec<[f64; REPORT_FPRS.len()]>,
    /// Flag rate among clean rows at the method's own threshold.
    pub false_alarm: Vec<f64>,
}

impl MethodSummary {
    pub fn mean_auc(&self) -> f64 {
        stats::mean(&self.aucs)
    }

    /// Replicate standard deviation of the AUC (0 for one replicate).
    pub fn sd_auc(&self) -> f64 {
        stats::column_sd(&self.aucs).unwrap_or(0.0)
    }

    pub fn se_auc(&self) -> f64 {
        self.sd_auc() / (self.aucs.len() as f64).sqrt()
    }

    /// Detection rates of every replicate at `REPORT_FPRS[k]`.
    pub fn tpr_series(&self, k: usize) -> Vec<f64> {
        self.tpr_at.iter().map(|t| t[k]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    /// In the order of [`METHODS`].
    pub methods: Vec<MethodSummary>,
    /// Number of affected components in each replicate.
    pub affected_counts: Vec<usize>,
}

impl ExperimentSummary {
    pub fn method(&self, method: Method) -> &MethodSummary {
        &self.methods[METHODS.iter().position(|&m| m == method).expect("known method")]
    }
}

struct ReplicateOutcome {
    curves: Vec<RocCurve>,
    false_alarm: Vec<f64>,
    affected: usize,
}

/// Runs all replicates (in parallel, seeds derived from `config.seed`) and
/// averages their ROC curves.
pub fn replicate_experiments(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    replicate_experiments_with(config, |_, _| Ok(()))
}

/// As [`replicate_experiments`], calling `inspect` on each finished replicate.
pub fn replicate_experiments_with<F>(config: &ExperimentConfig, inspect: F) -> Result<ExperimentSummary>
where
    F: Fn(u64, &ExperimentRun) -> Result<()> + Sync,
{
    config.validate()?;
    if config.anomaly_count == 0 || config.anomaly_count == config.m {
        return Err(Error::InvalidParameter(
            "ROC curves need both clean and anomalous rows".into(),
        ));
    }
    let outcomes: Vec<ReplicateOutcome> = (0..config.replicates as u64)
        .into_par_iter()
        .map(|r| -> Result<ReplicateOutcome> {
            let run = run_experiment(config, r)?;
            inspect(r, &run)?;
            let labels = &run.batch.labels;
            let clean = labels.iter().filter(|&&l| !l).count() as f64;
            let mut curves = Vec::with_capacity(METHODS.len());
            let mut false_alarm = Vec::with_capacity(METHODS.len());
            for report in &run.reports {
                curves.push(evaluation::roc_curve(&report.scores, labels)?);
                let fa = report
                    .flags
                    .iter()
                    .zip(labels)
                    .filter(|(&f, &l)| f && !l)
                    .count();
                false_alarm.push(fa as f64 / clean);
            }
            Ok(ReplicateOutcome {
                curves,
                false_alarm,
                affected: run.affected.q(),
            })
        })
        .collect::<Result<_>>()?;

    let methods = METHODS
        .iter()
        .enumerate()
        .map(|(k, &method)| -> Result<MethodSummary> {
            let curves: Vec<RocCurve> = outcomes.iter().map(|o| o.curves[k].clone()).collect();
            Ok(MethodSummary {
                method,
                curve: evaluation::average_curves(&curves, DEFAULT_GRID_SIZE)?,
                aucs: curves.iter().map(RocCurve::auc).collect(),
                tpr_at: curves
                    .iter()
                    .map(|c| REPORT_FPRS.map(|f| c.tpr_at(f)))
                    .collect(),
                false_alarm: outcomes.iter().map(|o| o.false_alarm[k]).collect(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(ExperimentSummary {
        config: config.clone(),
        methods,
        affected_counts: outcomes.iter().map(|o| o.affected).collect(),
    })
}
