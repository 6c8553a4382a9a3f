//! Expertness-weighted fusion of multi-rater labels.
//!
//! For a pixel with observed labels `c_1..c_M`, the fused distribution is
//!
//! ```text
//! y(k) = softmax_k( sum_m w_m(k) + prior(k) ),   w_m(k) = log P(rater m says c_m | truth k)
//! ```
//!
//! When `w_m` are the true per-rater log-likelihoods and `prior` is the log
//! class prior, this is exactly the Bayes posterior over the true class.
//! [`bayes_oracle`] computes that posterior independently, by direct
//! enumeration in the probability domain.

use crate::confusion::ConfusionMatrix;
use crate::error::{Error, Result};
use crate::expertness;
use crate::grid::{GridShape, LabelStack, PriorMap, ProbMap};

/// Probability floor applied before any logarithm.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Per-rater, per-pixel, per-class log-likelihood maps.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertnessMaps {
    shape: GridShape,
    values: Vec<f64>,
}

impl ExpertnessMaps {
    /// `values` is rater-major: rater, then row, column, class.
    pub fn new(shape: GridShape, values: Vec<f64>) -> Result<Self> {
        let expected = shape.raters * shape.pixels() * shape.classes;
        if values.len() != expected {
            return Err(Error::shape(format!(
                "expected {expected} expertness values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v <= 0.0)) {
            return Err(Error::arg(
                "expertness entries must be finite log-probabilities",
            ));
        }
        Ok(Self { shape, values })
    }

    /// The same value everywhere.
    pub fn constant(shape: GridShape, value: f64) -> Result<Self> {
        Self::new(
            shape,
            vec![value; shape.raters * shape.pixels() * shape.classes],
        )
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn num_raters(&self) -> usize {
        self.shape.raters
    }

    pub fn rater(&self, m: usize) -> &[f64] {
        let n = self.shape.pixels() * self.shape.classes;
        &self.values[m * n..(m + 1) * n]
    }

    /// `w_m(k)` for every class at flat pixel `p`.
    pub fn pixel(&self, m: usize, p: usize) -> &[f64] {
        let k = self.shape.classes;
        let base = (m * self.shape.pixels() + p) * k;
        &self.values[base..base + k]
    }

    pub fn get(&self, m: usize, i: usize, j: usize, k: usize) -> f64 {
        self.pixel(m, i * self.shape.width + j)[k]
    }
}

/// How predicted rater label maps are turned into fusion weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionMode {
    /// Fit a confusion model to the predictions and fuse with its
    /// log-likelihoods.
    #[default]
    ConfusionLikelihood,
    /// `sum_m z_m(k) * log z~_m(k)` taken elementwise. Unvoted classes get a
    /// zero logit, so they outrank voted ones whenever the prediction is
    /// below certainty.
    LogConfidence,
}

/// Independent per-rater label noise given the true class.
#[derive(Debug, Clone, PartialEq)]
pub struct RaterGenerativeModel {
    class_prior: Vec<f64>,
    confusions: Vec<ConfusionMatrix>,
}

impl RaterGenerativeModel {
    pub fn new(class_prior: Vec<f64>, confusions: Vec<ConfusionMatrix>) -> Result<Self> {
        let k = class_prior.len();
        if k < 2 {
            return Err(Error::arg("class prior needs at least 2 classes"));
        }
        if confusions.is_empty() {
            return Err(Error::arg("model needs at least one rater"));
        }
        if class_prior.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::arg("class prior entries must be non-negative"));
        }
        let sum: f64 = class_prior.iter().sum();
        if (sum - 1.0).abs() > crate::confusion::ROW_TOLERANCE {
            return Err(Error::arg(format!("class prior sums to {sum}")));
        }
        if let Some(m) = confusions.iter().position(|c| c.classes() != k) {
            return Err(Error::shape(format!(
                "rater {m} confusion has wrong class count"
            )));
        }
        Ok(Self {
            class_prior,
            confusions,
        })
    }

    pub fn classes(&self) -> usize {
        self.class_prior.len()
    }

    pub fn num_raters(&self) -> usize {
        self.confusions.len()
    }

    pub fn class_prior(&self) -> &[f64] {
        &self.class_prior
    }

    pub fn confusions(&self) -> &[ConfusionMatrix] {
        &self.confusions
    }

    pub fn confusion(&self, m: usize) -> &ConfusionMatrix {
        &self.confusions[m]
    }

    /// Every confusion matrix mixed with the uniform one; see
    /// [`ConfusionMatrix::floored`].
    pub fn floored(&self, floor: f64) -> Result<Self> {
        let confusions = self
            .confusions
            .iter()
            .map(|c| c.floored(floor))
            .collect::<Result<_>>()?;
        Ok(Self {
            class_prior: self.class_prior.clone(),
            confusions,
        })
    }

    fn check_stack(&self, stack: &LabelStack) -> Result<()> {
        if stack.classes() != self.classes() {
            return Err(Error::shape(format!(
                "stack has {} classes, model has {}",
                stack.classes(),
                self.classes()
            )));
        }
        if stack.num_raters() != self.num_raters() {
            return Err(Error::shape(format!(
                "stack has {} raters, model has {}",
                stack.num_raters(),
                self.num_raters()
            )));
        }
        Ok(())
    }
}

/// Sum that depends only on the multiset of terms, so two classes whose
/// per-rater terms are permutations of each other tie exactly.
fn sum_sorted(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

pub fn fuse(stack: &LabelStack, expertness: &ExpertnessMaps, prior: &PriorMap) -> Result<ProbMap> {
    let plane = stack.plane();
    plane.check_plane(&expertness.shape(), "stack vs expertness")?;
    plane.check_plane(&prior.shape(), "stack vs prior")?;
    if expertness.num_raters() != stack.num_raters() {
        return Err(Error::shape(format!(
            "{} expertness maps for {} raters",
            expertness.num_raters(),
            stack.num_raters()
        )));
    }
    let (k_count, m_count) = (plane.classes, stack.num_raters());
    let mut logits = vec![0.0; plane.pixels() * k_count];
    let mut terms = vec![0.0; m_count];
    for p in 0..plane.pixels() {
        let prior_px = prior.pixel(p);
        for k in 0..k_count {
            for (m, t) in terms.iter_mut().enumerate() {
                *t = expertness.pixel(m, p)[k];
            }
            logits[p * k_count + k] = sum_sorted(&mut terms) + prior_px[k];
        }
    }
    Ok(ProbMap::from_logits(plane, logits))
}

/// Fuses the labels with weights derived from per-rater predicted label
/// maps `z~_m`, under a uniform prior.
pub fn self_fuse(
    stack: &LabelStack,
    rater_probs: &[ProbMap],
    mode: FusionMode,
    epsilon: f64,
) -> Result<ProbMap> {
    if rater_probs.len() != stack.num_raters() {
        return Err(Error::shape(format!(
            "{} rater maps for {} raters",
            rater_probs.len(),
            stack.num_raters()
        )));
    }
    let plane = stack.plane();
    for (m, map) in rater_probs.iter().enumerate() {
        plane.check_plane(&map.shape(), &format!("rater map {m}"))?;
    }
    if !(epsilon > 0.0) {
        return Err(Error::arg("epsilon must be positive"));
    }
    match mode {
        FusionMode::ConfusionLikelihood => {
            let confusion = expertness::confusion_from_rater_probs(stack, rater_probs, epsilon)?;
            let maps = expertness::expertness_from_estimate(stack, &confusion)?;
            fuse(stack, &maps, &crate::grid::uniform_prior(plane))
        }
        FusionMode::LogConfidence => {
            let k_count = plane.classes;
            let mut logits = vec![0.0; plane.pixels() * k_count];
            let mut terms = vec![0.0; stack.num_raters()];
            for p in 0..plane.pixels() {
                for k in 0..k_count {
                    for (m, t) in terms.iter_mut().enumerate() {
                        *t = if stack.label(m, p) == k {
                            rater_probs[m].pixel(p)[k].max(epsilon).ln()
                        } else {
                            0.0
                        };
                    }
                    logits[p * k_count + k] = sum_sorted(&mut terms);
                }
            }
            Ok(ProbMap::from_logits(plane, logits))
        }
    }
}

/// Exact posterior `P(truth = k | labels)` by enumerating the classes.
pub fn bayes_oracle(stack: &LabelStack, model: &RaterGenerativeModel) -> Result<ProbMap> {
    model.check_stack(stack)?;
    let plane = stack.plane();
    let k_count = plane.classes;
    let mut values = vec![0.0; plane.pixels() * k_count];
    for p in 0..plane.pixels() {
        let px = &mut values[p * k_count..(p + 1) * k_count];
        for (k, v) in px.iter_mut().enumerate() {
            *v = model
                .confusions
                .iter()
                .enumerate()
                .fold(model.class_prior[k], |acc, (m, theta)| {
                    acc * theta.get(k, stack.label(m, p))
                });
        }
        let norm: f64 = px.iter().sum();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::DegenerateModel(format!(
                "pixel {p} has zero likelihood under every class"
            )));
        }
        px.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(ProbMap::from_raw(plane, values))
}

/// `w_m(k) = log theta_m[k, c_m]` for each rater's observed label `c_m`.
pub fn expertness_from_model(
    stack: &LabelStack,
    model: &RaterGenerativeModel,
) -> Result<ExpertnessMaps> {
    model.check_stack(stack)?;
    expertness_from_confusions(stack, model.confusions())
}

pub(crate) fn expertness_from_confusions(
    stack: &LabelStack,
    confusions: &[ConfusionMatrix],
) -> Result<ExpertnessMaps> {
    let plane = stack.plane();
    let k_count = plane.classes;
    let mut values = Vec::with_capacity(confusions.len() * plane.pixels() * k_count);
    for (m, theta) in confusions.iter().enumerate() {
        if theta.min_entry() <= 0.0 {
            return Err(Error::LogDomain(format!("rater {m} confusion matrix")));
        }
        let logs: Vec<f64> = theta.values().iter().map(|v| v.ln()).collect();
        for &c in stack.rater(m).cells() {
            values.extend((0..k_count).map(|k| logs[k * k_count + c]));
        }
    }
    Ok(ExpertnessMaps {
        shape: plane.with_raters(confusions.len()),
        values,
    })
}
