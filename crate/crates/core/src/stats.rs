//! Chi-square and empirical quantiles, sample standard deviations and seeded
//! bootstrap resampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance of [`chi_square_quantile`].
pub const CHI_SQUARE_TOLERANCE: f64 = 1e-9;

/// Sorted sample of a scalar statistic (e.g. one bootstrap distribution).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmpiricalDistribution {
    samples: Vec<f64>,
}

impl EmpiricalDistribution {
    /// Sorts `samples`; at least two finite values are required.
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::TooFewValues {
                what: "empirical distribution",
                need: 2,
                got: samples.len(),
            });
        }
        if let Some(pos) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: pos, col: 0 });
        }
        samples.sort_by(f64::total_cmp);
        Ok(EmpiricalDistribution { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    pub fn median(&self) -> f64 {
        empirical_quantile(self, 0.5).expect("non-empty by construction")
    }
}

impl TryFrom<Vec<f64>> for EmpiricalDistribution {
    type Error = Error;

    fn try_from(samples: Vec<f64>) -> Result<Self> {
        EmpiricalDistribution::new(samples)
    }
}

impl From<EmpiricalDistribution> for Vec<f64> {
    fn from(d: EmpiricalDistribution) -> Self {
        d.samples
    }
}

fn check_probability(prob: f64) -> Result<()> {
    if prob > 0.0 && prob < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidProbability(prob))
    }
}

/// 1-based order-statistic rank `ceil(prob * count)` clamped to `[1, count]`.
///
/// Products within 1e-9 (relative) of an integer are snapped to it, so that
/// `0.99 * 10000` selects rank 9900 rather than 9901 after rounding noise.
pub(crate) fn quantile_rank(prob: f64, count: u64) -> u64 {
    let x = prob * count as f64;
    let nearest = x.round();
    let rank = if (x - nearest).abs() <= 1e-9 * x.max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (rank as u64).clamp(1, count.max(1))
}

/// Inverse-empirical-CDF quantile: the `ceil(prob * k)`-th order statistic.
pub fn empirical_quantile(dist: &EmpiricalDistribution, prob: f64) -> Result<f64> {
    check_probability(prob)?;
    quantile_of_sorted(&dist.samples, prob)
}

/// Same convention as [`empirical_quantile`] on an already sorted slice.
pub fn quantile_of_sorted(sorted: &[f64], prob: f64) -> Result<f64> {
    check_probability(prob)?;
    if sorted.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let rank = quantile_rank(prob, sorted.len() as u64);
    Ok(sorted[rank as usize - 1])
}

/// Quantile of the multiset in which `values[i]` occurs `counts[i]` times.
///
/// Equivalent to [`empirical_quantile`] on the expanded multiset, without
/// materialising it.
pub fn weighted_quantile(values: &[f64], counts: &[u32], prob: f64) -> Result<f64> {
    check_probability(prob)?;
    if values.len() != counts.len() {
        return Err(Error::DimensionMismatch {
            expected: values.len(),
            got: counts.len(),
        });
    }
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    if total == 0 {
        return Err(Error::EmptyDistribution);
    }
    let mut order: Vec<usize> = (0..values.len()).filter(|&i| counts[i] > 0).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let rank = quantile_rank(prob, total);
    let mut seen = 0u64;
    for &i in &order {
        seen += counts[i] as u64;
        if seen >= rank {
            return Ok(values[i]);
        }
    }
    unreachable!("rank never exceeds total count")
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation with divisor `count - 1` (two-pass).
pub fn column_sd(column: &[f64]) -> Result<f64> {
    if column.len() < 2 {
        return Err(Error::TooFewValues {
            what: "standard deviation",
            need: 2,
            got: column.len(),
        });
    }
    let m = mean(column);
    let ss: f64 = column.iter().map(|v| (v - m) * (v - m)).sum();
    Ok((ss / (column.len() - 1) as f64).sqrt())
}

/// Mixes a root seed with a replicate number.
///
/// `child_seed(root, r) = splitmix64(root ^ splitmix64(r))`, where
/// `splitmix64` is the finaliser of Steele, Lea and Flood's SplitMix64
/// generator applied to `x + 0x9E3779B97F4A7C15`. Replicate streams are
/// therefore independent of the order in which replicates are executed.
pub fn child_seed(root: u64, replicate: u64) -> u64 {
    splitmix64(root ^ splitmix64(replicate))
}

pub(crate) fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded generator used everywhere in the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `sample_size` row indices drawn uniformly with replacement from
/// `0..row_count`, fully determined by `seed`.
pub fn bootstrap_resample(row_count: usize, sample_size: usize, seed: u64) -> Result<Vec<usize>> {
    if row_count == 0 || sample_size == 0 {
        return Err(Error::InvalidParameter(format!(
            "bootstrap needs row_count >= 1 and sample_size >= 1 (got {row_count}, {sample_size})"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let n = row_count as u64;
    Ok((0..sample_size)
        .map(|_| rng.random_range(0..n) as usize)
        .collect())
}

// ---------------------------------------------------------------------------
// chi-square

/// ln Γ(x) for x > 0 (Lanczos, g = 7, 9 coefficients).
pub(crate) fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma P(a, x).
pub(crate) fn regularized_gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let log_prefix = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // series
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut denom = a;
        for _ in 0..10_000 {
            denom += 1.0;
            term *= x / denom;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (sum.ln() + log_prefix).exp().min(1.0)
    } else {
        // continued fraction for Q(a, x), modified Lentz
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-17 {
                break;
            }
        }
        let q = (h.ln() + log_prefix).exp();
        (1.0 - q).max(0.0)
    }
}

/// CDF of the chi-square distribution with `df` degrees of freedom.
pub fn chi_square_cdf(x: f64, df: u32) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    regularized_gamma_p(df as f64 / 2.0, x / 2.0)
}

/// `x` such that `chi_square_cdf(x, df) == prob`, to absolute tolerance 1e-9.
///
/// Bracket expansion followed by bisection on the regularized incomplete
/// gamma CDF.
pub fn chi_square_quantile(prob: f64, df: u32) -> Result<f64> {
    check_probability(prob)?;
    if df == 0 {
        return Err(Error::InvalidDegreesOfFreedom);
    }
    let mut lo = 0.0_f64;
    let mut hi = (df as f64).max(1.0);
    while chi_square_cdf(hi, df) < prob {
        lo = hi;
        hi *= 2.0;
    }
    // Bisect until the bracket is well inside the tolerance.
    while hi - lo > 0.25 * CHI_SQUARE_TOLERANCE && hi - lo > hi * 4.0 * f64::EPSILON {
        let mid = 0.5 * (lo + hi);
        if chi_square_cdf(mid, df) < prob {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
