//! ROC curves, AUC, rates at a fixed threshold, and vertical curve averaging.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of FPR grid points used when averaging curves.
pub const DEFAULT_GRID_SIZE: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    points: Vec<(f64, f64)>,
    auc: f64,
}

impl RocCurve {
    /// Builds a curve from `(fpr, tpr)` points, computing the AUC by the
    /// trapezoid rule.
    pub fn from_points(points: Vec<(f64, f64)>) -> Result<Self> {
        let (first, last) = match (points.first(), points.last()) {
            (Some(f), Some(l)) => (*f, *l),
            _ => return Err(Error::EmptyInput),
        };
        if first != (0.0, 0.0) || last != (1.0, 1.0) {
            return Err(Error::Format(
                "ROC curve must start at (0, 0) and end at (1, 1)".into(),
            ));
        }
        for w in points.windows(2) {
            if w[1].0 < w[0].0 || w[1].1 < w[0].1 {
                return Err(Error::Format("ROC points must be non-decreasing".into()));
            }
        }
        let auc = trapezoid(&points);
        Ok(RocCurve { points, auc })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn auc(&self) -> f64 {
        self.auc
    }

    /// TPR at a given FPR: the highest TPR reached at exactly `fpr`, or the
    /// linear interpolation between the neighbouring points.
    pub fn tpr_at(&self, fpr: f64) -> f64 {
        let fpr = fpr.clamp(0.0, 1.0);
        // last point with x <= fpr
        let idx = self.points.partition_point(|&(x, _)| x <= fpr);
        let (x0, y0) = self.points[idx - 1];
        if x0 == fpr || idx == self.points.len() {
            return y0;
        }
        let (x1, y1) = self.points[idx];
        y0 + (y1 - y0) * (fpr - x0) / (x1 - x0)
    }
}

fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

fn class_counts(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite { row: i, col: 0 });
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok((pos, neg))
}

/// ROC curve of a descending threshold sweep; rows with equal scores change
/// class together.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    // trapezoid area accumulated in integer half-units to keep it exact
    let mut area2: u128 = 0;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += ((fp - fp0) * (tp0 + tp)) as u128;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    let auc = area2 as f64 / (2.0 * pos as f64 * neg as f64);
    Ok(RocCurve { points, auc })
}

/// `(detection_rate, false_alarm_rate)` when rows with `score > theta` are
/// flagged.
pub fn rates_at_threshold(scores: &[f64], labels: &[bool], theta: f64) -> Result<(f64, f64)> {
    let (pos, neg) = class_counts(scores, labels)?;
    let (mut tp, mut fp) = (0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        if s > theta {
            if l {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    Ok((tp as f64 / pos as f64, fp as f64 / neg as f64))
}

/// Evenly spaced FPR grid `0, 1/(k-1), ..., 1`.
pub fn fpr_grid(grid_size: usize) -> Vec<f64> {
    let last = (grid_size - 1) as f64;
    (0..grid_size).map(|k| k as f64 / last).collect()
}

/// Vertical average of `curves` on a `grid_size`-point FPR grid.
///
/// The result starts at `(0, 0)`, rises to the mean TPR at FPR 0, and then
/// follows the grid to `(1, 1)`.
pub fn average_curves(curves: &[RocCurve], grid_size: usize) -> Result<RocCurve> {
    if curves.is_empty() {
        return Err(Error::EmptyInput);
    }
    if grid_size < 2 {
        return Err(Error::InvalidParameter(format!(
            "grid size must be at least 2, got {grid_size}"
        )));
    }
    let k = curves.len() as f64;
    let mut points = vec![(0.0, 0.0)];
    for x in fpr_grid(grid_size) {
        let y = curves.iter().map(|c| c.tpr_at(x)).sum::<f64>() / k;
        points.push((x, y.clamp(0.0, 1.0)));
    }
    // summation order can leave the mean a hair below 1
    if let Some(last) = points.last_mut() {
        last.1 = 1.0;
    }
    // and non-monotone by an ulp
    for i in 1..points.len() {
        if points[i].1 < points[i - 1].1 {
            points[i].1 = points[i - 1].1;
        }
    }
    let auc = trapezoid(&points);
    Ok(RocCurve { points, auc })
}

/// AUC by exhaustive pair counting (ties count one half). Quadratic; meant
/// for checking.
pub fn mann_whitney_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut wins2 = 0u64;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            wins2 += match scores[i].partial_cmp(&scores[j]) {
                Some(std::cmp::Ordering::Greater) => 2,
                Some(std::cmp::Ordering::Equal) => 1,
                _ => 0,
            };
        }
    }
    Ok(wins2 as f64 / (2.0 * pos as f64 * neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        let roc = roc_curve(&[0.9, 0.8, 0.7, 0.6], &[true, true, false, true]).unwrap();
        assert!((roc.auc() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(roc.points().first(), Some(&(0.0, 0.0)));
        assert_eq!(roc.points().last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn perfect_separation() {
        let roc = roc_curve(&[5.0, 4.0, 1.0, 0.0], &[true, true, false, false]).unwrap();
        assert_eq!(roc.auc(), 1.0);
        assert!(roc.points().contains(&(0.0, 1.0)));
    }

    #[test]
    fn ties_are_grouped() {
        let roc = roc_curve(&[1.0, 1.0, 1.0, 1.0], &[true, false, true, false]).unwrap();
        assert_eq!(roc.points(), &[(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(roc.auc(), 0.5);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(matches!(roc_curve(&[1.0, 2.0], &[true, true]), Err(Error::SingleClass)));
        assert!(matches!(
            rates_at_threshold(&[1.0], &[false], 0.0),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn rates_at_extreme_thresholds() {
        let s = [0.1, 0.5, 0.9, 0.3];
        let l = [true, false, true, false];
        assert_eq!(rates_at_threshold(&s, &l, 0.0).unwrap(), (1.0, 1.0));
        assert_eq!(rates_at_threshold(&s, &l, 1.0).unwrap(), (0.0, 0.0));
        // strict comparison
        assert_eq!(rates_at_threshold(&s, &l, 0.5).unwrap(), (0.5, 0.0));
    }

    #[test]
    fn averaging() {
        let perfect = roc_curve(&[1.0, 0.0], &[true, false]).unwrap();
        let random = roc_curve(&[1.0, 1.0], &[true, false]).unwrap();
        let avg = average_curves(&[perfect.clone(), random.clone()], DEFAULT_GRID_SIZE).unwrap();
        assert!((avg.auc() - 0.75).abs() < 1e-3);
        let same = average_curves(&[perfect.clone(), perfect.clone()], DEFAULT_GRID_SIZE).unwrap();
        assert_eq!(same, average_curves(std::slice::from_ref(&perfect), DEFAULT_GRID_SIZE).unwrap());
        assert!((same.auc() - 1.0).abs() < 1e-12);
        assert!(average_curves(&[], 10).is_err());
    }

    #[test]
    fn tpr_interpolation() {
        let roc = roc_curve(&[4.0, 3.0, 2.0, 1.0], &[true, false, true, false]).unwrap();
        // points (0,0) (0,.5) (.5,.5) (.5,1) (1,1)
        assert_eq!(roc.tpr_at(0.0), 0.5);
        assert_eq!(roc.tpr_at(0.25), 0.5);
        assert_eq!(roc.tpr_at(0.5), 1.0);
        assert_eq!(roc.tpr_at(1.0), 1.0);
    }

    fn small_case() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..=8).prop_flat_map(|n| {
            (
                prop::collection::vec(0u8..4, n).prop_map(|v| v.into_iter().map(f64::from).collect()),
                prop::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn auc_matches_pair_counting((scores, labels) in small_case()) {
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let roc = roc_curve(&scores, &labels).unwrap();
            let mw = mann_whitney_auc(&scores, &labels).unwrap();
            prop_assert!((roc.auc() - mw).abs() < 1e-12);
            prop_assert!((roc.auc() - trapezoid(roc.points())).abs() < 1e-12);
        }

        #[test]
        fn roc_invariant_under_monotone_transform((scores, labels) in small_case()) {
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let t: Vec<f64> = scores.iter().map(|s| (s * 0.7).exp() + 3.0).collect();
            prop_assert_eq!(roc_curve(&scores, &labels).unwrap(), roc_curve(&t, &labels).unwrap());
        }

        #[test]
        fn averaging_is_order_invariant(seed in 0u64..1000) {
            use rand::Rng;
            let mut rng = crate::stats::rng_from_seed(seed);
            let curves: Vec<RocCurve> = (0..3).map(|_| {
                let s: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
                let l: Vec<bool> = (0..20).map(|i| i % 3 == 0).collect();
                roc_curve(&s, &l).unwrap()
            }).collect();
            let a = average_curves(&curves, 64).unwrap();
            let b = average_curves(&[curves[2].clone(), curves[0].clone(), curves[1].clone()], 64).unwrap();
            for (p, q) in a.points().iter().zip(b.points()) {
                prop_assert!((p.1 - q.1).abs() < 1e-12);
            }
        }
    }
}
