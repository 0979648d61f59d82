//! Training phase: fit the model on clean traffic, bootstrap the per-component
//! standard deviations `r_j^u`, derive the thresholds `delta_j`, and look for
//! unusual training rows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DataMatrix;
use crate::pca::{self, PcaModel};
use crate::stats::{self, EmpiricalDistribution};

/// Bootstrap and significance settings of the training phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub alpha: f64,
    pub boot_count: usize,
    pub boot_size: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            alpha: 0.0001,
            boot_count: 5000,
            boot_size: 10_000,
            seed: 0,
        }
    }
}

pub const MIN_BOOT_COUNT: usize = 100;

/// Per-component thresholds `delta_j^(1 - alpha)` and the bootstrap samples
/// they were read from.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentThresholds {
    alpha: f64,
    delta: Vec<f64>,
    boot_samples: Vec<EmpiricalDistribution>,
    boot_count: usize,
    boot_size: usize,
    seed: u64,
}

impl ComponentThresholds {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn boot_samples(&self) -> &[EmpiricalDistribution] {
        &self.boot_samples
    }

    pub fn boot_count(&self) -> usize {
        self.boot_count
    }

    pub fn boot_size(&self) -> usize {
        self.boot_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn p(&self) -> usize {
        self.delta.len()
    }

    /// Same bootstrap samples, quantiled at a new level.
    pub fn with_alpha(&self, alpha: f64) -> Result<ComponentThresholds> {
        component_thresholds(
            self.boot_samples.clone(),
            alpha,
            self.boot_count,
            self.boot_size,
            self.seed,
        )
    }
}

/// Standardized scores of the training rows scaled by `sqrt(n - 1)`, i.e.
/// the rows of `sqrt(n - 1) U`.
pub fn scaled_training_scores(model: &PcaModel, x_train: &DataMatrix) -> Result<DataMatrix> {
    let u = pca::project_standardized(model, x_train)?;
    let scale = model.score_scale();
    let mut values = u.into_matrix().into_values();
    values.par_iter_mut().for_each(|v| *v *= scale);
    Ok(DataMatrix::from_parts(x_train.rows(), model.p(), values))
}

fn check_boot_params(p: usize, boot_count: usize, boot_size: usize) -> Result<()> {
    if boot_count < MIN_BOOT_COUNT {
        return Err(Error::InvalidParameter(format!(
            "bootstrap count must be at least {MIN_BOOT_COUNT}, got {boot_count}"
        )));
    }
    if boot_size < p + 1 || boot_size < 2 {
        return Err(Error::InvalidParameter(format!(
            "bootstrap size must be at least p + 1 = {}, got {boot_size}",
            p + 1
        )));
    }
    Ok(())
}

/// Bootstrap distribution of `r_j^u` for every component.
///
/// Replicate `b` resamples `boot_size` training rows with replacement using
/// seed `child_seed(seed, b)`, projects them through the fixed model, and
/// records the standard deviation of each column of `sqrt(n - 1) U`.
pub fn bootstrap_component_sds(
    model: &PcaModel,
    x_train: &DataMatrix,
    boot_count: usize,
    boot_size: usize,
    seed: u64,
) -> Result<Vec<EmpiricalDistribution>> {
    let p = model.p();
    check_boot_params(p, boot_count, boot_size)?;
    let scores = scaled_training_scores(model, x_train)?;
    bootstrap_sds_from_scores(&scores, boot_count, boot_size, seed)
}

pub(crate) fn bootstrap_sds_from_scores(
    scores: &DataMatrix,
    boot_count: usize,
    boot_size: usize,
    seed: u64,
) -> Result<Vec<EmpiricalDistribution>> {
    let (n, p) = (scores.rows(), scores.cols());
    let per_replicate: Vec<Vec<f64>> = (0..boot_count)
        .into_par_iter()
        .map(|b| -> Result<Vec<f64>> {
            let idx = stats::bootstrap_resample(n, boot_size, stats::child_seed(seed, b as u64))?;
            Ok(column_sds_of_rows(scores, &idx))
        })
        .collect::<Result<_>>()?;
    (0..p)
        .map(|j| EmpiricalDistribution::new(per_replicate.iter().map(|r| r[j]).collect()))
        .collect()
}

/// Column standard deviations (divisor k - 1) of the selected rows.
pub(crate) fn column_sds_of_rows(scores: &DataMatrix, idx: &[usize]) -> Vec<f64> {
    let p = scores.cols();
    let k = idx.len() as f64;
    let mut mean = vec![0.0; p];
    for &i in idx {
        for (m, v) in mean.iter_mut().zip(scores.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k);
    let mut ss = vec![0.0; p];
    for &i in idx {
        for ((s, v), m) in ss.iter_mut().zip(scores.row(i)).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    ss.iter().map(|s| (s / (k - 1.0)).sqrt()).collect()
}

/// `delta_j = empirical_quantile(boot_j, 1 - alpha)`.
pub fn component_thresholds(
    boot: Vec<EmpiricalDistribution>,
    alpha: f64,
    boot_count: usize,
    boot_size: usize,
    seed: u64,
) -> Result<ComponentThresholds> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidProbability(alpha));
    }
    let delta = boot
        .iter()
        .map(|d| stats::empirical_quantile(d, 1.0 - alpha))
        .collect::<Result<Vec<_>>>()?;
    Ok(ComponentThresholds {
        alpha,
        delta,
        boot_samples: boot,
        boot_count,
        boot_size,
        seed,
    })
}

/// Model plus thresholds, the output of the training phase.
#[derive(Debug, Clone)]
pub struct TrainedDetector {
    pub model: PcaModel,
    pub thresholds: ComponentThresholds,
}

/// Standardize, fit, bootstrap and threshold in one go.
pub fn train(y_train: &DataMatrix, config: &TrainingConfig) -> Result<TrainedDetector> {
    let model = pca::fit_model(y_train)?;
    let x = pca::standardize(model.standardizer(), y_train)?;
    let thresholds = thresholds_for(&model, &x, config)?;
    Ok(TrainedDetector { model, thresholds })
}

pub fn thresholds_for(
    model: &PcaModel,
    x_train: &DataMatrix,
    config: &TrainingConfig,
) -> Result<ComponentThresholds> {
    let boot = bootstrap_component_sds(
        model,
        x_train,
        config.boot_count,
        config.boot_size,
        config.seed,
    )?;
    component_thresholds(
        boot,
        config.alpha,
        config.boot_count,
        config.boot_size,
        config.seed,
    )
}

// ---------------------------------------------------------------------------
// bootstrap reference for score thresholds

/// Training scores together with the pooled bootstrap draw multiplicities.
///
/// Pooling the rows of every bootstrap replicate gives a multiset in which
/// training row `i` appears `draw_counts[i]` times; quantiles of any row
/// statistic over that multiset are the bootstrap thresholds for `t_i` and
/// `t_i^w`. The draws are regenerated from the thresholds' seed, so they are
/// the same resamples that produced `delta`.
#[derive(Debug, Clone)]
pub struct TrainingReference {
    scores: DataMatrix,
    draw_counts: Vec<u32>,
    lambda: Vec<f64>,
}

impl TrainingReference {
    pub fn build(
        model: &PcaModel,
        x_train: &DataMatrix,
        thresholds: &ComponentThresholds,
    ) -> Result<Self> {
        if x_train.rows() != model.train_n() {
            return Err(Error::InvalidParameter(format!(
                "training reference has {} rows but the model was fitted on {}",
                x_train.rows(),
                model.train_n()
            )));
        }
        let scores = scaled_training_scores(model, x_train)?;
        let draw_counts = pooled_draw_counts(
            scores.rows(),
            thresholds.boot_count,
            thresholds.boot_size,
            thresholds.seed,
        )?;
        Ok(TrainingReference {
            scores,
            draw_counts,
            lambda: model.lambda().to_vec(),
        })
    }

    /// Rows of `sqrt(n - 1) U` for the training data.
    pub fn scores(&self) -> &DataMatrix {
        &self.scores
    }

    pub fn draw_counts(&self) -> &[u32] {
        &self.draw_counts
    }

    /// `(n - 1) sum_j w_j u_ij^2` for every training row (weights default 1).
    pub fn weighted_t(&self, components: &[usize], weights: Option<&[f64]>) -> Vec<f64> {
        self.scores
            .row_iter()
            .map(|row| {
                components
                    .iter()
                    .map(|&j| weights.map_or(1.0, |w| w[j]) * row[j] * row[j])
                    .sum()
            })
            .collect()
    }

    /// Squared residual of the rank-q reconstruction for every training row,
    /// `sum_{j >= q} lambda_j s_ij^2` with `s` the scaled scores.
    pub fn residuals(&self, q: usize) -> Vec<f64> {
        self.scores
            .row_iter()
            .map(|row| {
                (q..row.len())
                    .map(|j| self.lambda[j] * row[j] * row[j])
                    .sum()
            })
            .collect()
    }
}

/// Number of times each of `n` rows is drawn across all bootstrap replicates.
pub fn pooled_draw_counts(n: usize, boot_count: usize, boot_size: usize, seed: u64) -> Result<Vec<u32>> {
    let chunk = 64;
    let partial: Vec<Vec<u32>> = (0..boot_count.div_ceil(chunk))
        .into_par_iter()
        .map(|c| -> Result<Vec<u32>> {
            let mut counts = vec![0u32; n];
            for b in (c * chunk)..((c + 1) * chunk).min(boot_count) {
                for i in stats::bootstrap_resample(n, boot_size, stats::child_seed(seed, b as u64))? {
                    counts[i] += 1;
                }
            }
            Ok(counts)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0u32; n];
    for part in partial {
        for (t, c) in total.iter_mut().zip(part) {
            *t += c;
        }
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// training outlier diagnostic

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseOptions {
    /// Components whose bootstrap median of `r_j^u` lies outside
    /// `[1 - center_band, 1 + center_band]` are suspicious.
    pub center_band: f64,
    /// Features with `|loading| >= loading_cutoff` on a suspicious component
    /// are inspected.
    pub loading_cutoff: f64,
    /// Rows whose absolute standardized value on an inspected feature is
    /// above this empirical quantile are reported.
    pub row_quantile: f64,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        DiagnoseOptions {
            center_band: 0.1,
            loading_cutoff: 0.1,
            row_quantile: 0.9999,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlaggedRow {
    pub row: usize,
    pub feature: usize,
    /// Standardized value of the row on `feature`.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuspiciousComponent {
    pub component: usize,
    pub median: f64,
    /// `(feature, loading)` pairs with `|loading| >= loading_cutoff`,
    /// strongest first.
    pub heavy_loadings: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutlierDiagnosis {
    pub suspicious: Vec<SuspiciousComponent>,
    /// Rows exceeding the reporting quantile, largest magnitude first.
    pub flagged: Vec<FlaggedRow>,
}

impl OutlierDiagnosis {
    pub fn suspicious_components(&self) -> Vec<usize> {
        self.suspicious.iter().map(|s| s.component).collect()
    }

    /// Distinct flagged row indices in ascending order.
    pub fn flagged_rows(&self) -> Vec<usize> {
        let mut rows: Vec<usize> = self.flagged.iter().map(|f| f.row).collect();
        rows.sort_unstable();
        rows.dedup();
        rows
    }

    pub fn is_empty(&self) -> bool {
        self.suspicious.is_empty()
    }
}

pub fn diagnose_training_outliers(
    model: &PcaModel,
    x_train: &DataMatrix,
    thresholds: &ComponentThresholds,
    options: &DiagnoseOptions,
) -> Result<OutlierDiagnosis> {
    if !(options.row_quantile > 0.0 && options.row_quantile < 1.0) {
        return Err(Error::InvalidProbability(options.row_quantile));
    }
    let p = model.p();
    let mut suspicious = Vec::new();
    for (j, dist) in thresholds.boot_samples().iter().enumerate().take(model.rank()) {
        let median = dist.median();
        if (median - 1.0).abs() <= options.center_band {
            continue;
        }
        let mut heavy: Vec<(usize, f64)> = (0..p)
            .map(|f| (f, model.loading(f, j)))
            .filter(|(_, l)| l.abs() >= options.loading_cutoff)
            .collect();
        heavy.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
        suspicious.push(SuspiciousComponent {
            component: j,
            median,
            heavy_loadings: heavy,
        });
    }

    let mut features: Vec<usize> = suspicious
        .iter()
        .flat_map(|s| s.heavy_loadings.iter().map(|(f, _)| *f))
        .collect();
    features.sort_unstable();
    features.dedup();

    let mut flagged = Vec::new();
    for f in features {
        let column = x_train.column(f);
        let mut magnitudes: Vec<f64> = column.iter().map(|v| v.abs()).collect();
        magnitudes.sort_by(f64::total_cmp);
        let cut = stats::quantile_of_sorted(&magnitudes, options.row_quantile)?;
        flagged.extend(
            column
                .iter()
                .enumerate()
                .filter(|(_, v)| v.abs() > cut)
                .map(|(row, &value)| FlaggedRow {
                    row,
                    feature: f,
                    value,
                }),
        );
    }
    flagged.sort_by(|a, b| {
        b.value
            .abs()
            .total_cmp(&a.value.abs())
            .then(a.row.cmp(&b.row))
            .then(a.feature.cmp(&b.feature))
    });
    Ok(OutlierDiagnosis {
        suspicious,
        flagged,
    })
}

/// Drops `flagged_rows` from the raw training data and refits everything.
///
/// Returns the new detector and the retained raw rows.
pub fn retrain_after_removal(
    y_train: &DataMatrix,
    flagged_rows: &[usize],
    config: &TrainingConfig,
) -> Result<(TrainedDetector, DataMatrix)> {
    let n = y_train.rows();
    let mut drop = vec![false; n];
    for &r in flagged_rows {
        if r >= n {
            return Err(Error::InvalidParameter(format!(
                "flagged row {} is outside the training data ({n} rows)",
                r + 1
            )));
        }
        drop[r] = true;
    }
    let keep: Vec<usize> = (0..n).filter(|&i| !drop[i]).collect();
    if keep.len() < y_train.cols() + 1 {
        return Err(Error::DatasetTooSmall {
            need: y_train.cols() + 1,
            got: keep.len(),
        });
    }
    let kept = y_train.select_rows(&keep);
    let detector = train(&kept, config)?;
    Ok((detector, kept))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DataMatrix {
        let mut rng = rng_from_seed(seed);
        let v = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
        DataMatrix::new(rows, cols, v).unwrap()
    }

    fn config(alpha: f64, boot_count: usize, boot_size: usize) -> TrainingConfig {
        TrainingConfig {
            alpha,
            boot_count,
            boot_size,
            seed: 17,
        }
    }

    #[test]
    fn paper_defaults() {
        let c = TrainingConfig::default();
        assert_eq!((c.boot_count, c.boot_size, c.alpha), (5000, 10_000, 0.0001));
    }

    #[test]
    fn bootstrap_parameter_validation() {
        let y = gaussian(200, 3, 1);
        let model = pca::fit_model(&y).unwrap();
        let x = pca::standardize(model.standardizer(), &y).unwrap();
        assert!(bootstrap_component_sds(&model, &x, 100, 1, 0).is_err());
        assert!(bootstrap_component_sds(&model, &x, 99, 100, 0).is_err());
        assert!(bootstrap_component_sds(&model, &x, 100, 4, 0).is_ok());
    }

    #[test]
    fn clean_gaussian_bootstrap_is_centered_at_one() {
        let y = gaussian(20_000, 5, 2);
        let det = train(&y, &config(0.5, 200, 10_000)).unwrap();
        for (j, d) in det.thresholds.boot_samples().iter().enumerate() {
            assert!((d.median() - 1.0).abs() < 0.02, "component {j}: {}", d.median());
            assert!(d.samples().iter().all(|&r| r > 0.0));
            // alpha = 0.5 -> delta is the bootstrap median
            assert_eq!(det.thresholds.delta()[j], d.median());
        }
    }

    #[test]
    fn thresholds_are_monotone_in_alpha() {
        let y = gaussian(2000, 4, 3);
        let det = train(&y, &config(0.01, 300, 500)).unwrap();
        let loose = det.thresholds.with_alpha(0.2).unwrap();
        let medians: Vec<f64> = det.thresholds.boot_samples().iter().map(|d| d.median()).collect();
        for j in 0..4 {
            assert!(det.thresholds.delta()[j] >= loose.delta()[j]);
            assert!(loose.delta()[j] >= medians[j]);
        }
        assert!(det.thresholds.with_alpha(1.0).is_err());
    }

    #[test]
    fn bootstrap_is_reproducible() {
        let y = gaussian(1000, 3, 4);
        let a = train(&y, &config(0.05, 150, 300)).unwrap();
        let b = train(&y, &config(0.05, 150, 300)).unwrap();
        assert_eq!(a.thresholds, b.thresholds);
    }

    #[test]
    fn pooled_counts_match_individual_draws() {
        let counts = pooled_draw_counts(50, 130, 20, 9).unwrap();
        let mut expected = vec![0u32; 50];
        for b in 0..130 {
            for i in stats::bootstrap_resample(50, 20, stats::child_seed(9, b)).unwrap() {
                expected[i] += 1;
            }
        }
        assert_eq!(counts, expected);
        assert_eq!(counts.iter().sum::<u32>(), 130 * 20);
    }

    #[test]
    fn clean_data_gives_empty_diagnosis() {
        let y = gaussian(5000, 4, 6);
        let det = train(&y, &config(0.01, 200, 1000)).unwrap();
        let x = pca::standardize(det.model.standardizer(), &y).unwrap();
        let diag =
            diagnose_training_outliers(&det.model, &x, &det.thresholds, &DiagnoseOptions::default())
                .unwrap();
        assert!(diag.is_empty());
        assert!(diag.flagged.is_empty());
    }

    #[test]
    fn removing_nothing_reproduces_the_fit() {
        let y = gaussian(800, 3, 7);
        let cfg = config(0.05, 120, 200);
        let original = train(&y, &cfg).unwrap();
        let (again, kept) = retrain_after_removal(&y, &[], &cfg).unwrap();
        assert_eq!(kept, y);
        assert_eq!(original.model, again.model);
        assert_eq!(original.thresholds, again.thresholds);
    }

    #[test]
    fn removal_cannot_empty_the_training_set() {
        let y = gaussian(5, 3, 8);
        let cfg = config(0.05, 100, 4);
        assert!(matches!(
            retrain_after_removal(&y, &[0, 1], &cfg),
            Err(Error::DatasetTooSmall { .. })
        ));
        assert!(retrain_after_removal(&y, &[7], &cfg).is_err());
    }

    #[test]
    fn reference_residuals_match_direct_reconstruction() {
        let y = gaussian(300, 5, 10);
        let det = train(&y, &config(0.05, 100, 100)).unwrap();
        let x = pca::standardize(det.model.standardizer(), &y).unwrap();
        let reference = TrainingReference::build(&det.model, &x, &det.thresholds).unwrap();
        let q = 2;
        let recon = pca::reconstruct_rank_q(&det.model, &x, q).unwrap();
        let residuals = reference.residuals(q);
        for i in 0..x.rows() {
            let direct: f64 = x
                .row(i)
                .iter()
                .zip(recon.row(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            assert!((direct - residuals[i]).abs() < 1e-9 * (1.0 + direct));
        }
    }
}
