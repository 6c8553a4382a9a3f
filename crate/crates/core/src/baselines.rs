//! Reference fusers: per-pixel majority vote and STAPLE.
//!
//! These are written against the generative model directly so they can
//! cross-check [`crate::calibrate::recur`].

use crate::confusion::ConfusionMatrix;
use crate::error::{Error, Result};
use crate::expertness::{estimate_confusion, ConfusionEstimate};
use crate::fusion::{bayes_oracle, RaterGenerativeModel, DEFAULT_EPSILON};
use crate::grid::{ClassGrid, LabelStack, ProbMap};

/// Vote fractions and the plurality label (ties go to the lowest class).
pub fn majority_vote(stack: &LabelStack) -> (ProbMap, ClassGrid) {
    let plane = stack.plane();
    let k_count = plane.classes;
    let m = stack.num_raters() as f64;
    let mut values = vec![0.0; plane.pixels() * k_count];
    let mut labels = Vec::with_capacity(plane.pixels());
    let mut counts = vec![0usize; k_count];
    for p in 0..plane.pixels() {
        counts.fill(0);
        for rater in 0..stack.num_raters() {
            counts[stack.label(rater, p)] += 1;
        }
        let mut best = 0;
        for (k, &c) in counts.iter().enumerate() {
            values[p * k_count + k] = c as f64 / m;
            if c > counts[best] {
                best = k;
            }
        }
        labels.push(best);
    }
    let grid = ClassGrid::new(plane.height, plane.width, k_count, labels)
        .expect("vote labels are valid classes");
    (ProbMap::from_raw(plane, values), grid)
}

/// Class frequencies of the majority-vote labels, Laplace-smoothed by
/// `epsilon` so that no class has zero prior.
pub fn empirical_class_prior(stack: &LabelStack, epsilon: f64) -> Result<Vec<f64>> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::arg("epsilon must be positive"));
    }
    let (_, labels) = majority_vote(stack);
    let k = stack.classes() as f64;
    let n = stack.pixels() as f64;
    Ok(labels
        .histogram()
        .into_iter()
        .map(|c| (c as f64 + epsilon) / (n + k * epsilon))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StapleConfig {
    pub max_iterations: usize,
    /// Stop when no confusion entry moves by this much.
    pub tol: f64,
    pub epsilon: f64,
    /// Diagonal of the symmetric starting confusion matrix.
    pub initial_diagonal: f64,
}

impl Default for StapleConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tol: 1e-7,
            epsilon: DEFAULT_EPSILON,
            initial_diagonal: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StapleResult {
    /// E-step posterior under the confusions that produced `confusion`.
    pub posterior: ProbMap,
    pub confusion: ConfusionEstimate,
    pub class_prior: Vec<f64>,
    pub iterations: usize,
    /// Smoothed observed-data log-likelihood before each M-step:
    /// `sum_p log sum_k prior(k) prod_m theta_m[k, c_m] + eps sum log theta`.
    pub log_likelihood: Vec<f64>,
}

fn penalised_log_likelihood(
    stack: &LabelStack,
    prior: &[f64],
    confusions: &[ConfusionMatrix],
    epsilon: f64,
) -> f64 {
    let data: f64 = (0..stack.pixels())
        .map(|p| {
            (0..prior.len())
                .map(|k| {
                    confusions
                        .iter()
                        .enumerate()
                        .fold(prior[k], |acc, (m, t)| acc * t.get(k, stack.label(m, p)))
                })
                .sum::<f64>()
                .ln()
        })
        .sum();
    let penalty: f64 = confusions
        .iter()
        .flat_map(|t| t.values().iter())
        .map(|v| v.ln())
        .sum();
    data + epsilon * penalty
}

/// EM with a stationary class prior taken from the majority vote.
pub fn staple(stack: &LabelStack, config: &StapleConfig) -> Result<StapleResult> {
    if config.max_iterations == 0 {
        return Err(Error::arg("need at least one EM iteration"));
    }
    if !(config.tol > 0.0) {
        return Err(Error::arg("tolerance must be positive"));
    }
    if !(config.initial_diagonal > 0.0 && config.initial_diagonal < 1.0) {
        return Err(Error::arg("initial diagonal must lie in (0, 1)"));
    }
    let k_count = stack.classes();
    let class_prior = empirical_class_prior(stack, config.epsilon)?;
    let mut confusions =
        vec![ConfusionMatrix::symmetric(k_count, config.initial_diagonal); stack.num_raters()];
    let mut log_likelihood = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let model = RaterGenerativeModel::new(class_prior.clone(), confusions.clone())?;
        let posterior = bayes_oracle(stack, &model).map_err(|e| match e {
            Error::DegenerateModel(msg) => Error::NumericalFailure(msg),
            other => other,
        })?;
        log_likelihood.push(penalised_log_likelihood(
            stack,
            &class_prior,
            &confusions,
            config.epsilon,
        ));
        let estimate = estimate_confusion(stack, &posterior, config.epsilon)?;
        let change = estimate
            .confusions
            .iter()
            .zip(&confusions)
            .fold(0.0_f64, |acc, (a, b)| acc.max(a.max_abs_diff(b)));
        if change < config.tol || iterations >= config.max_iterations {
            return Ok(StapleResult {
                posterior,
                confusion: estimate,
                class_prior,
                iterations,
                log_likelihood,
            });
        }
        confusions = estimate.confusions;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::argmax_grid;

    fn stack(h: usize, w: usize, k: usize, raters: &[&[usize]]) -> LabelStack {
        LabelStack::new(
            raters
                .iter()
                .map(|cells| ClassGrid::new(h, w, k, cells.to_vec()).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn vote_fractions_and_labels() {
        let s = stack(1, 2, 2, &[&[0, 0], &[0, 1], &[1, 1]]);
        let (probs, labels) = majority_vote(&s);
        assert!((probs.get(0, 0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((probs.get(0, 0, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(labels.cells(), &[0, 1]);
    }

    #[test]
    fn split_vote_goes_to_lowest_class() {
        let s = stack(1, 1, 2, &[&[1], &[0]]);
        let (probs, labels) = majority_vote(&s);
        assert_eq!(probs.values(), &[0.5, 0.5]);
        assert_eq!(labels.cells(), &[0]);
    }

    #[test]
    fn staple_on_unanimous_stack() {
        let cells = [0, 1, 2, 1, 0, 2, 2, 2, 0];
        let s = stack(3, 3, 3, &[&cells, &cells, &cells]);
        let result = staple(&s, &StapleConfig::default()).unwrap();
        assert_eq!(argmax_grid(&result.posterior).cells(), &cells);
        for px in result.posterior.pixels() {
            assert!(px.iter().copied().fold(0.0, f64::max) > 1.0 - 1e-6);
        }
        for theta in &result.confusion.confusions {
            for k in 0..3 {
                assert!(theta.get(k, k) > 1.0 - 1e-5);
            }
        }
    }

    #[test]
    fn staple_likelihood_is_non_decreasing() {
        let s = stack(
            2,
            4,
            2,
            &[
                &[0, 1, 1, 0, 0, 1, 1, 1],
                &[0, 1, 0, 0, 0, 1, 1, 0],
                &[1, 1, 1, 0, 0, 0, 1, 1],
            ],
        );
        let result = staple(&s, &StapleConfig::default()).unwrap();
        for pair in result.log_likelihood.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-9, "{pair:?}");
        }
    }

    #[test]
    fn staple_rejects_bad_config() {
        let s = stack(1, 1, 2, &[&[0]]);
        let cfg = StapleConfig {
            initial_diagonal: 1.0,
            ..Default::default()
        };
        assert!(staple(&s, &cfg).is_err());
    }
}
