use crate::error::{Error, Result};

/// Row tolerance for row-stochastic matrices.
pub const ROW_TOLERANCE: f64 = 1e-12;

/// Row-stochastic `K x K` matrix: entry `[k, c]` is the probability that a
/// rater reports class `c` when the true class is `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    classes: usize,
    values: Vec<f64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize, values: Vec<f64>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::arg("confusion matrix needs at least 2 classes"));
        }
        if values.len() != classes * classes {
            return Err(Error::shape(format!(
                "confusion matrix for {classes} classes needs {} entries, got {}",
                classes * classes,
                values.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::arg(
                "confusion entries must be finite and non-negative",
            ));
        }
        for (k, row) in values.chunks_exact(classes).enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::arg(format!("confusion row {k} sums to {sum}")));
            }
        }
        Ok(Self { classes, values })
    }

    pub(crate) fn from_raw(classes: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), classes * classes);
        Self { classes, values }
    }

    pub fn identity(classes: usize) -> Self {
        Self::symmetric(classes, 1.0)
    }

    pub fn uniform(classes: usize) -> Self {
        Self::from_raw(classes, vec![1.0 / classes as f64; classes * classes])
    }

    /// `diagonal` on the diagonal, the remainder spread evenly off it.
    pub fn symmetric(classes: usize, diagonal: f64) -> Self {
        let off = (1.0 - diagonal) / (classes - 1) as f64;
        let mut values = vec![off; classes * classes];
        for k in 0..classes {
            values[k * classes + k] = diagonal;
        }
        Self::from_raw(classes, values)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, reported: usize) -> f64 {
        self.values[truth * self.classes + reported]
    }

    pub fn row(&self, truth: usize) -> &[f64] {
        &self.values[truth * self.classes..(truth + 1) * self.classes]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn min_entry(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Mixes with the uniform matrix so every entry is at least `floor`:
    /// `(1 - K floor) theta + floor`. Rows stay stochastic.
    pub fn floored(&self, floor: f64) -> Result<Self> {
        let k = self.classes as f64;
        if !(floor > 0.0 && floor * k < 1.0) {
            return Err(Error::arg(format!("floor {floor} must lie in (0, 1/K)")));
        }
        let scale = 1.0 - k * floor;
        let values = self.values.iter().map(|v| scale * v + floor).collect();
        Ok(Self::from_raw(self.classes, values))
    }

    pub fn max_abs_diff(&self, other: &ConfusionMatrix) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()))
    }
}
