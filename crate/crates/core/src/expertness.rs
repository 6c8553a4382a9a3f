//! Per-rater reliability estimated from a fused soft mask.
//!
//! Each rater is summarised by one global confusion matrix. Soft counts of
//! (fused class, reported class) pairs give the matrix; the matrix in turn
//! gives the rater's predicted label map and its log-likelihood expertness.

use crate::confusion::ConfusionMatrix;
use crate::error::{Error, Result};
use crate::fusion::{self, ExpertnessMaps, DEFAULT_EPSILON};
use crate::grid::{LabelStack, ProbMap};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionEstimate {
    pub confusions: Vec<ConfusionMatrix>,
    /// Laplace constant added to every soft count.
    pub smoothing: f64,
    /// `support[m][k]`: total fused mass of class `k` seen by rater `m`.
    pub support: Vec<Vec<f64>>,
}

impl ConfusionEstimate {
    pub fn num_raters(&self) -> usize {
        self.confusions.len()
    }

    /// Largest entrywise difference over all raters.
    pub fn max_abs_diff(&self, other: &ConfusionEstimate) -> f64 {
        self.confusions
            .iter()
            .zip(&other.confusions)
            .fold(0.0_f64, |acc, (a, b)| acc.max(a.max_abs_diff(b)))
    }
}

/// Soft-count M-step:
/// `theta_m[k, c] = (eps + sum_p fused(p, k) [z_m(p) = c]) / (K eps + sum_p fused(p, k))`.
///
/// With `epsilon = 0` a class with no fused mass gets a uniform row, the
/// limit of the smoothed estimate.
pub fn estimate_confusion(
    stack: &LabelStack,
    fused: &ProbMap,
    epsilon: f64,
) -> Result<ConfusionEstimate> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::arg(format!(
            "smoothing must be finite and >= 0, got {epsilon}"
        )));
    }
    let plane = stack.plane();
    plane.check_plane(&fused.shape(), "stack vs fused")?;
    let k_count = plane.classes;
    let mut confusions = Vec::with_capacity(stack.num_raters());
    let mut support = Vec::with_capacity(stack.num_raters());
    for rater in stack.raters() {
        let mut counts = vec![0.0; k_count * k_count];
        for (px, &c) in fused.pixels().zip(rater.cells()) {
            for (k, &mass) in px.iter().enumerate() {
                counts[k * k_count + c] += mass;
            }
        }
        let mut totals = Vec::with_capacity(k_count);
        for row in counts.chunks_exact_mut(k_count) {
            let total: f64 = row.iter().sum();
            totals.push(total);
            let denom = k_count as f64 * epsilon + total;
            if denom > 0.0 {
                row.iter_mut().for_each(|v| *v = (epsilon + *v) / denom);
            } else {
                row.fill(1.0 / k_count as f64);
            }
        }
        confusions.push(ConfusionMatrix::from_raw(k_count, counts));
        support.push(totals);
    }
    Ok(ConfusionEstimate {
        confusions,
        smoothing: epsilon,
        support,
    })
}

/// `z~_m(p, c) = sum_k fused(p, k) theta_m[k, c]`.
pub fn predict_rater_labels(
    fused: &ProbMap,
    confusion: &ConfusionEstimate,
) -> Result<Vec<ProbMap>> {
    let plane = fused.shape();
    let k_count = plane.classes;
    if let Some(m) = confusion
        .confusions
        .iter()
        .position(|c| c.classes() != k_count)
    {
        return Err(Error::shape(format!(
            "rater {m} confusion has wrong class count"
        )));
    }
    Ok(confusion
        .confusions
        .iter()
        .map(|theta| {
            let mut values = vec![0.0; plane.pixels() * k_count];
            for (out, px) in values.chunks_exact_mut(k_count).zip(fused.pixels()) {
                for (k, &mass) in px.iter().enumerate() {
                    for (o, &t) in out.iter_mut().zip(theta.row(k)) {
                        *o += mass * t;
                    }
                }
            }
            ProbMap::from_raw(plane, values)
        })
        .collect())
}

/// Log-likelihood expertness of the estimated confusions. Zero entries,
/// possible only without smoothing, are floored first.
pub fn expertness_from_estimate(
    stack: &LabelStack,
    confusion: &ConfusionEstimate,
) -> Result<ExpertnessMaps> {
    if confusion.num_raters() != stack.num_raters() {
        return Err(Error::shape(format!(
            "{} confusion matrices for {} raters",
            confusion.num_raters(),
            stack.num_raters()
        )));
    }
    if let Some(m) = confusion
        .confusions
        .iter()
        .position(|c| c.classes() != stack.classes())
    {
        return Err(Error::shape(format!(
            "rater {m} confusion has wrong class count"
        )));
    }
    if confusion.confusions.iter().all(|c| c.min_entry() > 0.0) {
        return fusion::expertness_from_confusions(stack, &confusion.confusions);
    }
    let floor = if confusion.smoothing > 0.0 {
        confusion.smoothing
    } else {
        DEFAULT_EPSILON
    };
    let floored = confusion
        .confusions
        .iter()
        .map(|c| {
            if c.min_entry() > 0.0 {
                Ok(c.clone())
            } else {
                c.floored(floor)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    fusion::expertness_from_confusions(stack, &floored)
}

/// One-parameter fit of each rater from its predicted label map: the mean
/// predicted probability of the rater's own labels becomes the diagonal,
/// the rest is spread evenly off it. Clamped so every entry is at least
/// `epsilon`.
pub fn confusion_from_rater_probs(
    stack: &LabelStack,
    rater_probs: &[ProbMap],
    epsilon: f64,
) -> Result<ConfusionEstimate> {
    if rater_probs.len() != stack.num_raters() {
        return Err(Error::shape(format!(
            "{} rater maps for {} raters",
            rater_probs.len(),
            stack.num_raters()
        )));
    }
    let k_count = stack.classes();
    if !(epsilon > 0.0 && epsilon * (k_count as f64) < 1.0) {
        return Err(Error::arg(format!(
            "epsilon {epsilon} must lie in (0, 1/K)"
        )));
    }
    let n = stack.pixels() as f64;
    let mut confusions = Vec::with_capacity(rater_probs.len());
    let mut support = Vec::with_capacity(rater_probs.len());
    for (rater, probs) in stack.raters().iter().zip(rater_probs) {
        stack
            .plane()
            .check_plane(&probs.shape(), "stack vs rater map")?;
        let agreement: f64 = probs
            .pixels()
            .zip(rater.cells())
            .map(|(px, &c)| px[c])
            .sum::<f64>()
            / n;
        let hi = 1.0 - (k_count - 1) as f64 * epsilon;
        confusions.push(ConfusionMatrix::symmetric(
            k_count,
            agreement.clamp(epsilon, hi),
        ));
        let mut mass = vec![0.0; k_count];
        for px in probs.pixels() {
            mass.iter_mut().zip(px).for_each(|(a, b)| *a += b);
        }
        support.push(mass);
    }
    Ok(ConfusionEstimate {
        confusions,
        smoothing: epsilon,
        support,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{one_hot, ClassGrid, GridShape};

    fn grid(h: usize, w: usize, k: usize, cells: &[usize]) -> ClassGrid {
        ClassGrid::new(h, w, k, cells.to_vec()).unwrap()
    }

    #[test]
    fn perfect_rater_gives_near_identity() {
        let cells: Vec<usize> = (0..16).map(|i| (i * 7 / 3) % 2).collect();
        let gold = grid(4, 4, 2, &cells);
        let stack = LabelStack::new(vec![gold.clone()]).unwrap();
        let est = estimate_confusion(&stack, &one_hot(&gold, 2).unwrap(), 1e-6).unwrap();
        assert!(est.confusions[0].get(0, 0) >= 0.9999);
        assert!(est.confusions[0].get(1, 1) >= 0.9999);
    }

    #[test]
    fn uniform_fused_balanced_labels_gives_uniform_rows() {
        let stack = LabelStack::new(vec![grid(2, 3, 3, &[0, 1, 2, 2, 1, 0])]).unwrap();
        let fused = ProbMap::uniform(stack.plane());
        let est = estimate_confusion(&stack, &fused, 1e-6).unwrap();
        for &v in est.confusions[0].values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_counted_two_by_two() {
        let gold = grid(2, 2, 2, &[0, 0, 1, 1]);
        let stack = LabelStack::new(vec![grid(2, 2, 2, &[0, 1, 1, 1])]).unwrap();
        let est = estimate_confusion(&stack, &one_hot(&gold, 2).unwrap(), 0.0).unwrap();
        assert_eq!(est.confusions[0].values(), &[0.5, 0.5, 0.0, 1.0]);
        assert_eq!(est.support[0], vec![2.0, 2.0]);
    }

    #[test]
    fn empty_class_without_smoothing_is_uniform_row() {
        let gold = grid(1, 2, 3, &[0, 0]);
        let stack = LabelStack::new(vec![gold.clone()]).unwrap();
        let est = estimate_confusion(&stack, &one_hot(&gold, 3).unwrap(), 0.0).unwrap();
        assert_eq!(est.confusions[0].row(2), &[1.0 / 3.0; 3]);
    }

    #[test]
    fn negative_smoothing_rejected() {
        let stack = LabelStack::new(vec![grid(1, 1, 2, &[0])]).unwrap();
        assert!(estimate_confusion(&stack, &ProbMap::uniform(stack.plane()), -1.0).is_err());
    }

    fn estimate_of(theta: ConfusionMatrix) -> ConfusionEstimate {
        ConfusionEstimate {
            support: vec![vec![0.0; theta.classes()]],
            confusions: vec![theta],
            smoothing: 1e-6,
        }
    }

    #[test]
    fn predict_with_identity_and_uniform() {
        let shape = GridShape::plane(1, 2, 2).unwrap();
        let fused = ProbMap::new(shape, vec![0.7, 0.3, 0.1, 0.9]).unwrap();
        let same =
            predict_rater_labels(&fused, &estimate_of(ConfusionMatrix::identity(2))).unwrap();
        assert_eq!(same[0].values(), fused.values());
        let flat = predict_rater_labels(&fused, &estimate_of(ConfusionMatrix::uniform(2))).unwrap();
        assert!(flat[0].values().iter().all(|v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn predict_hand_product() {
        let shape = GridShape::plane(1, 1, 2).unwrap();
        let fused = ProbMap::new(shape, vec![0.7, 0.3]).unwrap();
        let theta = ConfusionMatrix::new(2, vec![0.9, 0.1, 0.2, 0.8]).unwrap();
        let pred = predict_rater_labels(&fused, &estimate_of(theta)).unwrap();
        assert!((pred[0].get(0, 0, 0) - 0.69).abs() < 1e-15);
        assert!((pred[0].get(0, 0, 1) - 0.31).abs() < 1e-15);
    }

    #[test]
    fn zero_entries_are_floored_for_expertness() {
        let gold = grid(2, 2, 2, &[0, 0, 1, 1]);
        let stack = LabelStack::new(vec![grid(2, 2, 2, &[0, 1, 1, 1])]).unwrap();
        let est = estimate_confusion(&stack, &one_hot(&gold, 2).unwrap(), 0.0).unwrap();
        let w = expertness_from_estimate(&stack, &est).unwrap();
        assert!(w.rater(0).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn one_coin_fit_of_exact_predictions() {
        let stack = LabelStack::new(vec![grid(1, 3, 3, &[0, 1, 2])]).unwrap();
        let probs = vec![stack.one_hot(0)];
        let est = confusion_from_rater_probs(&stack, &probs, 1e-6).unwrap();
        assert!((est.confusions[0].get(1, 1) - (1.0 - 2e-6)).abs() < 1e-15);
        assert!((est.confusions[0].get(1, 0) - 1e-6).abs() < 1e-15);
    }
}
