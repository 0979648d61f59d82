//! Dense linear algebra for tall, narrow feature matrices.
//!
//! The right singular vectors and singular values of an `n x p` matrix with
//! `n >> p` are obtained in two stages:
//!
//! 1. a tall-skinny QR (TSQR) reduces the matrix to a `p x p` upper
//!    triangular factor `R` with `X = QR`; row blocks are reduced
//!    independently and their factors are merged in a fixed tree, so the
//!    result does not depend on the number of worker threads;
//! 2. a one-sided Jacobi sweep orthogonalises the columns of `R`, giving
//!    `R V = W diag(gamma)`, hence `X = (QW) diag(gamma) V^T`.
//!
//! Both stages are backward stable, which keeps reconstruction and
//! orthonormality errors at the level of a few ulps times `p`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::DataMatrix;

/// Rows per TSQR leaf block.
const TSQR_BLOCK_ROWS: usize = 4096;
/// Number of stacked `R` factors merged per TSQR tree node.
const TSQR_FAN_IN: usize = 32;
const JACOBI_MAX_SWEEPS: usize = 80;

/// Upper-triangular `p x p` factor of a Householder QR of `rows x p` values
/// (row-major). Rows below `min(rows, p)` are zero.
fn householder_r(values: &[f64], rows: usize, p: usize) -> Vec<f64> {
    // column-major working copy
    let mut cols: Vec<Vec<f64>> = (0..p)
        .map(|j| (0..rows).map(|i| values[i * p + j]).collect())
        .collect();
    let steps = rows.min(p);
    for k in 0..steps {
        let norm = cols[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if cols[k][k] >= 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = cols[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for col in cols.iter_mut().skip(k) {
            let tail = &mut col[k..];
            let dot: f64 = tail.iter().zip(&v).map(|(a, b)| a * b).sum();
            let f = 2.0 * dot / vnorm2;
            for (t, vi) in tail.iter_mut().zip(&v) {
                *t -= f * vi;
            }
        }
    }
    let mut r = vec![0.0; p * p];
    for (j, col) in cols.iter().enumerate() {
        for i in 0..steps.min(j + 1) {
            r[i * p + j] = col[i];
        }
    }
    r
}

/// `p x p` triangular factor `R` with `X^T X = R^T R`.
pub fn tsqr_r(x: &DataMatrix) -> Vec<f64> {
    let p = x.cols();
    let data = x.as_slice();
    let mut factors: Vec<Vec<f64>> = data
        .par_chunks(TSQR_BLOCK_ROWS * p)
        .map(|block| householder_r(block, block.len() / p, p))
        .collect();
    while factors.len() > 1 {
        factors = factors
            .par_chunks(TSQR_FAN_IN)
            .map(|group| {
                let stacked: Vec<f64> = group.iter().flatten().copied().collect();
                householder_r(&stacked, group.len() * p, p)
            })
            .collect();
    }
    factors.pop().unwrap_or_else(|| vec![0.0; p * p])
}

/// Singular values (non-increasing) and right singular vectors of a square
/// `p x p` row-major matrix, by one-sided Jacobi rotations.
///
/// Returns `(gamma, v)` with `v` row-major `p x p`, columns = singular
/// vectors. Equal singular values keep their original column order.
pub fn jacobi_svd(a: &[f64], p: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut cols: Vec<Vec<f64>> = (0..p).map(|j| (0..p).map(|i| a[i * p + j]).collect()).collect();
    let mut vcols: Vec<Vec<f64>> = (0..p)
        .map(|j| (0..p).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let tol = f64::EPSILON * p as f64;
    let mut converged = p < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..p {
            for j in (i + 1)..p {
                let alpha: f64 = cols[i].iter().map(|x| x * x).sum();
                let beta: f64 = cols[j].iter().map(|x| x * x).sum();
                let gamma: f64 = cols[i].iter().zip(&cols[j]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, i, j, c, s);
                rotate(&mut vcols, i, j, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SvdNoConvergence {
            sweeps: JACOBI_MAX_SWEEPS,
        });
    }
    let sigma: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));
    let gamma: Vec<f64> = order.iter().map(|&k| sigma[k]).collect();
    let mut v = vec![0.0; p * p];
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..p {
            v[i * p + dst] = vcols[src][i];
        }
    }
    Ok((gamma, v))
}

fn rotate(cols: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(j);
    let (ci, cj) = (&mut lo[i], &mut hi[0]);
    for (a, b) in ci.iter_mut().zip(cj.iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// Flips every column of the row-major `p x p` matrix `v` so that its
/// largest-magnitude entry (first one on ties) is positive.
pub fn canonicalize_signs(v: &mut [f64], p: usize) {
    for j in 0..p {
        let mut best = 0;
        for i in 1..p {
            if v[i * p + j].abs() > v[best * p + j].abs() {
                best = i;
            }
        }
        if v[best * p + j] < 0.0 {
            for i in 0..p {
                v[i * p + j] = -v[i * p + j];
            }
        }
    }
}

/// Lower Cholesky factor `L` (row-major) of a symmetric positive definite
/// matrix, `sigma = L L^T`.
pub fn cholesky(sigma: &DataMatrix) -> Result<DataMatrix> {
    let p = sigma.rows();
    if sigma.cols() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: sigma.cols(),
        });
    }
    for i in 0..p {
        for j in 0..i {
            let (a, b) = (sigma.get(i, j), sigma.get(j, i));
            if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                return Err(Error::InvalidParameter("covariance is not symmetric".into()));
            }
        }
    }
    let mut l = DataMatrix::zeros(p, p);
    for j in 0..p {
        let mut d = sigma.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        let djj = d.sqrt();
        l.set(j, j, djj);
        for i in (j + 1)..p {
            let mut s = sigma.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / djj);
        }
    }
    Ok(l)
}

/// Solves `L y = b` in place for lower-triangular `L`.
pub fn forward_substitute(l: &DataMatrix, b: &mut [f64]) {
    let p = l.rows();
    for i in 0..p {
        let row = l.row(i);
        let mut s = b[i];
        for k in 0..i {
            s -= row[k] * b[k];
        }
        b[i] = s / row[i];
    }
}
