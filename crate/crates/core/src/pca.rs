//! Standardization, principal components via SVD, projection onto
//! standardized component scores, rank-q reconstruction and the t statistic.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::matrix::DataMatrix;
use crate::stats;

/// Singular values below `RANK_TOLERANCE * gamma_max` count as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Per-feature training means and sample standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    means: Vec<f64>,
    sds: Vec<f64>,
}

impl Standardizer {
    pub fn new(means: Vec<f64>, sds: Vec<f64>) -> Result<Self> {
        if means.len() != sds.len() || means.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: means.len(),
                got: sds.len(),
            });
        }
        let zero: Vec<usize> = (0..sds.len())
            .filter(|&j| !(sds[j] > 0.0 && sds[j].is_finite()))
            .collect();
        if !zero.is_empty() {
            let names = zero.iter().map(|j| format!("#{}", j + 1)).collect();
            return Err(Error::ZeroVarianceColumn {
                columns: zero,
                names,
            });
        }
        if let Some(j) = means.iter().position(|m| !m.is_finite()) {
            return Err(Error::NonFinite { row: 0, col: j });
        }
        Ok(Standardizer { means, sds })
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn sds(&self) -> &[f64] {
        &self.sds
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    /// Maps a standardized row back to the raw feature scale.
    pub fn unstandardize_row(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..x.len() {
            out[j] = x[j] * self.sds[j] + self.means[j];
        }
    }
}

/// Per-column means and sample standard deviations (divisor n - 1).
///
/// Fails with [`Error::ZeroVarianceColumn`] listing every constant column.
pub fn fit_standardizer(y: &DataMatrix) -> Result<Standardizer> {
    if y.rows() < 2 {
        return Err(Error::TooFewValues {
            what: "standardizer",
            need: 2,
            got: y.rows(),
        });
    }
    let p = y.cols();
    let n = y.rows() as f64;
    let mut means = vec![0.0; p];
    for row in y.row_iter() {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut ss = vec![0.0; p];
    for row in y.row_iter() {
        for j in 0..p {
            let d = row[j] - means[j];
            ss[j] += d * d;
        }
    }
    let sds: Vec<f64> = ss.iter().map(|s| (s / (n - 1.0)).sqrt()).collect();
    Standardizer::new(means, sds)
}

/// `(y - mean) / sd` column-wise, always with the training statistics.
pub fn standardize(std: &Standardizer, y: &DataMatrix) -> Result<DataMatrix> {
    if y.cols() != std.len() {
        return Err(Error::DimensionMismatch {
            expected: std.len(),
            got: y.cols(),
        });
    }
    let p = y.cols();
    let mut values = y.as_slice().to_vec();
    values.par_chunks_mut(p.max(1) * 1024).for_each(|chunk| {
        for row in chunk.chunks_exact_mut(p) {
            for ((v, m), sd) in row.iter_mut().zip(&std.means).zip(&std.sds) {
                *v = (*v - m) / sd;
            }
        }
    });
    DataMatrix::new(y.rows(), p, values)
}

/// Frozen principal component model of standardized training data.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    standardizer: Standardizer,
    /// Row-major `p x p`; column `j` is the `j`-th eigenvector.
    v: DataMatrix,
    gamma: Vec<f64>,
    lambda: Vec<f64>,
    train_n: usize,
    /// Number of components with a singular value above tolerance.
    rank: usize,
}

impl PcaModel {
    /// Reassembles a model from stored parts, checking shapes and that the
    /// stored eigenvalues are consistent with the singular values.
    pub fn from_parts(
        standardizer: Standardizer,
        v: DataMatrix,
        gamma: Vec<f64>,
        lambda: Vec<f64>,
        train_n: usize,
    ) -> Result<Self> {
        let p = standardizer.len();
        if v.rows() != p || v.cols() != p || gamma.len() != p || lambda.len() != p {
            return Err(Error::Format(format!(
                "inconsistent model dimensions for p = {p}"
            )));
        }
        if train_n < 2 {
            return Err(Error::Format("training row count must be at least 2".into()));
        }
        if gamma.iter().any(|g| !(g.is_finite() && *g >= 0.0))
            || gamma.windows(2).any(|w| w[1] > w[0])
        {
            return Err(Error::Format(
                "singular values must be finite, non-negative and non-increasing".into(),
            ));
        }
        for (g, l) in gamma.iter().zip(&lambda) {
            let expected = g * g / (train_n - 1) as f64;
            if (expected - l).abs() > 1e-12 * (1.0 + expected) {
                return Err(Error::Format(
                    "eigenvalues are inconsistent with singular values".into(),
                ));
            }
        }
        let rank = effective_rank(&gamma);
        Ok(PcaModel {
            standardizer,
            v,
            gamma,
            lambda,
            train_n,
            rank,
        })
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn v(&self) -> &DataMatrix {
        &self.v
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn train_n(&self) -> usize {
        self.train_n
    }

    pub fn p(&self) -> usize {
        self.gamma.len()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.rank < self.p()
    }

    /// Loading of `feature` on component `component` (an entry of V).
    pub fn loading(&self, feature: usize, component: usize) -> f64 {
        self.v.get(feature, component)
    }

    /// `sqrt(n - 1)`, the scale between U and standardized scores.
    pub fn score_scale(&self) -> f64 {
        ((self.train_n - 1) as f64).sqrt()
    }
}

fn effective_rank(gamma: &[f64]) -> usize {
    let max = gamma.first().copied().unwrap_or(0.0);
    gamma.iter().filter(|&&g| g > RANK_TOLERANCE * max).count()
}

/// PCA of an already standardized matrix by SVD, `X = U Gamma V^T`.
///
/// Eigenvalues are `gamma^2 / (n - 1)`; eigenvector signs are canonical
/// (largest-magnitude entry of each column positive).
pub fn fit_pca(x: &DataMatrix, standardizer: Standardizer) -> Result<PcaModel> {
    let (n, p) = (x.rows(), x.cols());
    if n < 2 {
        return Err(Error::TooFewValues {
            what: "PCA",
            need: 2,
            got: n,
        });
    }
    if standardizer.len() != p {
        return Err(Error::DimensionMismatch {
            expected: standardizer.len(),
            got: p,
        });
    }
    let r = linalg::tsqr_r(x);
    let (gamma, mut v) = linalg::jacobi_svd(&r, p)?;
    linalg::canonicalize_signs(&mut v, p);
    let lambda: Vec<f64> = gamma.iter().map(|g| g * g / (n - 1) as f64).collect();
    let rank = effective_rank(&gamma);
    Ok(PcaModel {
        standardizer,
        v: DataMatrix::new(p, p, v)?,
        gamma,
        lambda,
        train_n: n,
        rank,
    })
}

/// Standardizes raw training data and fits the PCA model.
pub fn fit_model(y: &DataMatrix) -> Result<PcaModel> {
    let standardizer = fit_standardizer(y)?;
    let x = standardize(&standardizer, y)?;
    fit_pca(&x, standardizer)
}

/// Standardized principal component scores `U = X V Gamma^-1` (`m x p`).
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedScores {
    u: DataMatrix,
}

impl StandardizedScores {
    pub fn u(&self) -> &DataMatrix {
        &self.u
    }

    pub fn row_count(&self) -> usize {
        self.u.rows()
    }

    pub fn into_matrix(self) -> DataMatrix {
        self.u
    }

    /// Standard deviation of each column of `sqrt(n - 1) U`.
    pub fn scaled_column_sds(&self, train_n: usize) -> Result<Vec<f64>> {
        let scale = ((train_n - 1) as f64).sqrt();
        (0..self.u.cols())
            .map(|j| stats::column_sd(&self.u.column(j)).map(|s| s * scale))
            .collect()
    }
}

/// `U^f = X^f V Gamma^-1`.
///
/// Components flagged as rank deficient get a zero score.
pub fn project_standardized(model: &PcaModel, x_f: &DataMatrix) -> Result<StandardizedScores> {
    let z = principal_components(model, x_f)?;
    let p = model.p();
    let rank = model.rank;
    let inv: Vec<f64> = (0..p)
        .map(|j| if j < rank { 1.0 / model.gamma[j] } else { 0.0 })
        .collect();
    let mut values = z.into_values();
    values.par_chunks_mut(p * 1024).for_each(|chunk| {
        for row in chunk.chunks_exact_mut(p) {
            for (u, s) in row.iter_mut().zip(&inv) {
                *u *= s;
            }
        }
    });
    Ok(StandardizedScores {
        u: DataMatrix::from_parts(x_f.rows(), p, values),
    })
}

/// Like [`project_standardized`] but fails on a rank-deficient model.
pub fn project_standardized_strict(
    model: &PcaModel,
    x_f: &DataMatrix,
) -> Result<StandardizedScores> {
    if model.is_rank_deficient() {
        return Err(Error::RankDeficient {
            component: model.rank,
        });
    }
    project_standardized(model, x_f)
}

/// Principal components `Z = X V`.
pub fn principal_components(model: &PcaModel, x_f: &DataMatrix) -> Result<DataMatrix> {
    let p = model.p();
    if x_f.cols() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: x_f.cols(),
        });
    }
    let mut out = vec![0.0; x_f.rows() * p];
    let v = model.v.as_slice();
    out.par_chunks_mut(p * 1024)
        .zip(x_f.as_slice().par_chunks(p * 1024))
        .for_each(|(o, xs)| {
            for (orow, xrow) in o.chunks_exact_mut(p).zip(xs.chunks_exact(p)) {
                for (k, &xk) in xrow.iter().enumerate() {
                    let vrow = &v[k * p..(k + 1) * p];
                    for (oj, vkj) in orow.iter_mut().zip(vrow) {
                        *oj += xk * vkj;
                    }
                }
            }
        });
    Ok(DataMatrix::from_parts(x_f.rows(), p, out))
}

/// Rank-q reconstruction `X^f V~ V~^T`, with `V~` the first `q` columns of V.
pub fn reconstruct_rank_q(model: &PcaModel, x_f: &DataMatrix, q: usize) -> Result<DataMatrix> {
    let p = model.p();
    if q == 0 || q > p {
        return Err(Error::RankOutOfRange { q, p });
    }
    let z = principal_components(model, x_f)?;
    let v = model.v.as_slice();
    let mut out = vec![0.0; x_f.rows() * p];
    out.par_chunks_mut(p * 1024)
        .zip(z.as_slice().par_chunks(p * 1024))
        .for_each(|(o, zs)| {
            for (orow, zrow) in o.chunks_exact_mut(p).zip(zs.chunks_exact(p)) {
                for (i, oi) in orow.iter_mut().enumerate() {
                    let vrow = &v[i * p..i * p + q];
                    *oi = vrow.iter().zip(&zrow[..q]).map(|(a, b)| a * b).sum();
                }
            }
        });
    Ok(DataMatrix::from_parts(x_f.rows(), p, out))
}

fn check_component_set(set: &[usize], p: usize) -> Result<()> {
    if set.is_empty() {
        return Err(Error::EmptyComponentSet);
    }
    if let Some(&index) = set.iter().find(|&&j| j >= p) {
        return Err(Error::ComponentOutOfRange { index, p });
    }
    Ok(())
}

/// `t_i = (n - 1) * sum_{j in set} u_ij^2`.
pub fn t_statistic(
    scores: &StandardizedScores,
    component_set: &[usize],
    train_n: usize,
) -> Result<Vec<f64>> {
    check_component_set(component_set, scores.u.cols())?;
    let scale = (train_n - 1) as f64;
    Ok(scores
        .u
        .row_iter()
        .map(|row| scale * component_set.iter().map(|&j| row[j] * row[j]).sum::<f64>())
        .collect())
}

/// `t_i = sum_{j in set} z_ij^2 / lambda_j`, the principal-component form of
/// [`t_statistic`].
pub fn t_statistic_from_components(
    z: &DataMatrix,
    lambda: &[f64],
    component_set: &[usize],
) -> Result<Vec<f64>> {
    check_component_set(component_set, z.cols())?;
    Ok(z.row_iter()
        .map(|row| {
            component_set
                .iter()
                .map(|&j| row[j] * row[j] / lambda[j])
                .sum::<f64>()
        })
        .collect())
}
