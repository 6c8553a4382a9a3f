//! The self-calibration recurrence and the half-quadratic splitting.
//!
//! [`recur`] alternates two steps until the fused mask stops moving:
//! fuse the labels with the current per-rater log-likelihoods, then
//! re-estimate each rater's confusion matrix against the new fused mask.
//!
//! [`hq_solve`] minimises
//!
//! ```text
//! J(W, V) = 1/M sum_m [ beta/2 |W_m . Z_m - V|^2 + 1/2 |W_m - Z_m|^2 ] + gamma/2 |grad V|^2
//! ```
//!
//! by exact minimisation over `W` followed by Jacobi sweeps over `V`, with
//! `beta` growing geometrically between outer iterations.

use crate::confusion::ConfusionMatrix;
use crate::error::{Error, Result};
use crate::expertness::{
    estimate_confusion, expertness_from_estimate, predict_rater_labels, ConfusionEstimate,
};
use crate::fusion::{fuse, self_fuse, FusionMode, DEFAULT_EPSILON};
use crate::grid::{uniform_prior, GridShape, LabelStack, PriorMap, ProbMap};
use crate::metrics::{cross_entropy, ssim, SsimSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrenceConfig {
    /// Upper bound on the number of recurrences.
    pub max_recurrences: usize,
    /// Stop once the max-abs change of the fused map drops below this.
    pub tol: f64,
    pub epsilon: f64,
    pub mode: FusionMode,
    /// Log-prior added during fusion; uniform when `None`.
    pub prior: Option<PriorMap>,
    /// Diagonal of the symmetric confusion matrix every rater starts with.
    /// Defaults to `1 - (K - 1) epsilon`, which makes the first fused map a
    /// majority vote.
    pub initial_diagonal: Option<f64>,
    pub ssim: SsimSpec,
}

impl Default for RecurrenceConfig {
    fn default() -> Self {
        Self {
            max_recurrences: 4,
            tol: 1e-6,
            epsilon: DEFAULT_EPSILON,
            mode: FusionMode::default(),
            prior: None,
            initial_diagonal: None,
            ssim: SsimSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub fused: ProbMap,
    /// Confusions re-estimated against `fused`.
    pub confusion: ConfusionEstimate,
    /// SSIM between `fused` and the previous iteration's fused map.
    pub ssim_prev: Option<f64>,
    /// Cross-entropy of each rater's predicted labels against its own labels.
    pub rater_cross_entropy: Vec<f64>,
    /// Max-abs change of the fused map since the previous iteration.
    pub delta: Option<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrenceTrace {
    pub iterations: Vec<IterationRecord>,
}

impl RecurrenceTrace {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn last(&self) -> &IterationRecord {
        self.iterations.last().expect("trace is never empty")
    }

    pub fn final_fused(&self) -> &ProbMap {
        &self.last().fused
    }

    pub fn final_confusion(&self) -> &ConfusionEstimate {
        &self.last().confusion
    }
}

/// Largest odd window that fits the grid, capped at `spec.window`.
fn fitted_ssim(spec: &SsimSpec, shape: GridShape) -> SsimSpec {
    let side = shape.height.min(shape.width);
    let fit = if side % 2 == 1 { side } else { side - 1 };
    SsimSpec {
        window: spec.window.min(fit),
        ..*spec
    }
}

pub fn recur(stack: &LabelStack, config: &RecurrenceConfig) -> Result<RecurrenceTrace> {
    let plane = stack.plane();
    let k_count = plane.classes;
    if config.max_recurrences == 0 {
        return Err(Error::arg("need at least one recurrence"));
    }
    if !(config.tol > 0.0) {
        return Err(Error::arg("tolerance must be positive"));
    }
    let eps = config.epsilon;
    if !(eps > 0.0 && eps * (k_count as f64) < 1.0) {
        return Err(Error::arg(format!("epsilon {eps} must lie in (0, 1/K)")));
    }
    let diagonal = config
        .initial_diagonal
        .unwrap_or(1.0 - (k_count - 1) as f64 * eps);
    if !(diagonal > 0.0 && diagonal < 1.0) {
        return Err(Error::arg(format!(
            "initial diagonal {diagonal} must lie in (0, 1)"
        )));
    }
    let prior = match &config.prior {
        Some(p) => {
            plane.check_plane(&p.shape(), "stack vs prior")?;
            p.clone()
        }
        None => uniform_prior(plane),
    };
    let ssim_spec = fitted_ssim(&config.ssim, plane);

    let mut confusion = ConfusionEstimate {
        confusions: vec![ConfusionMatrix::symmetric(k_count, diagonal); stack.num_raters()],
        smoothing: eps,
        support: vec![vec![0.0; k_count]; stack.num_raters()],
    };
    let mut iterations: Vec<IterationRecord> = Vec::with_capacity(config.max_recurrences);
    for _ in 0..config.max_recurrences {
        let prev = iterations.last().map(|r| &r.fused);
        let fused = match config.mode {
            FusionMode::ConfusionLikelihood => {
                fuse(stack, &expertness_from_estimate(stack, &confusion)?, &prior)?
            }
            FusionMode::LogConfidence => {
                let base = match prev {
                    Some(p) => p.clone(),
                    None => fuse(stack, &expertness_from_estimate(stack, &confusion)?, &prior)?,
                };
                let predicted = predict_rater_labels(&base, &confusion)?;
                self_fuse(stack, &predicted, FusionMode::LogConfidence, eps)?
            }
        };
        confusion = estimate_confusion(stack, &fused, eps)?;
        let predicted = predict_rater_labels(&fused, &confusion)?;
        let rater_cross_entropy = predicted
            .iter()
            .zip(stack.raters())
            .map(|(pred, labels)| cross_entropy(pred, labels, eps))
            .collect::<Result<Vec<_>>>()?;
        let (ssim_prev, delta) = match prev {
            Some(p) => (
                Some(ssim(&fused, p, &ssim_spec)?),
                Some(fused.max_abs_diff(p)?),
            ),
            None => (None, None),
        };
        let converged = delta.is_some_and(|d| d < config.tol);
        iterations.push(IterationRecord {
            fused,
            confusion: confusion.clone(),
            ssim_prev,
            rater_cross_entropy,
            delta,
            converged,
        });
        if converged {
            break;
        }
    }
    Ok(RecurrenceTrace { iterations })
}

/// Whether the last recorded change is strictly below `tol`. A single
/// iteration has no change and never counts as converged.
pub fn converged(trace: &RecurrenceTrace, tol: f64) -> bool {
    trace
        .iterations
        .last()
        .and_then(|r| r.delta)
        .is_some_and(|d| d < tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Regularizer {
    /// `1/2 |grad V|^2` with forward differences and Neumann borders.
    #[default]
    TikhonovGradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HqConfig {
    pub beta0: f64,
    /// Growth factor: `beta_i = beta0 * kappa^i`.
    pub kappa: f64,
    pub gamma: f64,
    pub regularizer: Regularizer,
    /// Jacobi sweeps per V-update.
    pub inner_iterations: usize,
    pub max_outer: usize,
    /// Stop when the objective decreases by less than this.
    pub tol: f64,
}

impl Default for HqConfig {
    fn default() -> Self {
        Self {
            beta0: 1.0,
            kappa: 2.0,
            gamma: 0.1,
            regularizer: Regularizer::TikhonovGradient,
            inner_iterations: 50,
            max_outer: 20,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HqState {
    shape: GridShape,
    /// Rater-major `M x H x W x K` weights.
    pub weights: Vec<f64>,
    /// `H x W x K` auxiliary mask.
    pub aux: Vec<f64>,
    /// `beta` used at each outer iteration.
    pub betas: Vec<f64>,
    /// `J(W, V) / beta` after each outer iteration. Dividing by `beta` makes
    /// the sequence non-increasing while `beta` grows.
    pub objective: Vec<f64>,
}

impl HqState {
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn rater_weights(&self, m: usize) -> &[f64] {
        let n = self.shape.pixels() * self.shape.classes;
        &self.weights[m * n..(m + 1) * n]
    }

    /// The auxiliary mask normalised per pixel; uniform where it vanishes.
    pub fn fused(&self) -> ProbMap {
        let k = self.shape.classes;
        let mut values = self.aux.clone();
        for px in values.chunks_exact_mut(k) {
            let sum: f64 = px.iter().sum();
            if sum > 0.0 {
                px.iter_mut().for_each(|v| *v /= sum);
            } else {
                px.fill(1.0 / k as f64);
            }
        }
        ProbMap::from_raw(self.shape.as_plane(), values)
    }
}

fn check_hq(config: &HqConfig) -> Result<()> {
    let positive = [("beta0", config.beta0), ("tol", config.tol)];
    for (name, v) in positive {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::arg(format!("{name} must be positive, got {v}")));
        }
    }
    if !(config.kappa > 1.0 && config.kappa.is_finite()) {
        return Err(Error::arg(format!(
            "kappa must be > 1, got {}",
            config.kappa
        )));
    }
    if !(config.gamma >= 0.0 && config.gamma.is_finite()) {
        return Err(Error::arg(format!(
            "gamma must be >= 0, got {}",
            config.gamma
        )));
    }
    if config.inner_iterations == 0 || config.max_outer == 0 {
        return Err(Error::arg("iteration counts must be positive"));
    }
    Ok(())
}

/// 4-neighbourhood of every pixel, clipped at the border.
fn neighbours(h: usize, w: usize) -> Vec<Vec<usize>> {
    (0..h * w)
        .map(|p| {
            let (i, j) = (p / w, p % w);
            let mut n = Vec::with_capacity(4);
            if i > 0 {
                n.push(p - w);
            }
            if i + 1 < h {
                n.push(p + w);
            }
            if j > 0 {
                n.push(p - 1);
            }
            if j + 1 < w {
                n.push(p + 1);
            }
            n
        })
        .collect()
}

/// `sum over grid edges of (V_p - V_q)^2`, per class channel.
fn gradient_energy(v: &[f64], h: usize, w: usize, k: usize) -> f64 {
    let mut e = 0.0;
    for i in 0..h {
        for j in 0..w {
            let p = i * w + j;
            for c in 0..k {
                let x = v[p * k + c];
                if j + 1 < w {
                    e += (v[(p + 1) * k + c] - x).powi(2);
                }
                if i + 1 < h {
                    e += (v[(p + w) * k + c] - x).powi(2);
                }
            }
        }
    }
    e
}

pub fn hq_solve(stack: &LabelStack, config: &HqConfig) -> Result<HqState> {
    check_hq(config)?;
    let plane = stack.plane();
    let (h, w, k) = (plane.height, plane.width, plane.classes);
    let n = plane.pixels() * k;
    let m_count = stack.num_raters();
    let inv_m = 1.0 / m_count as f64;

    let z: Vec<f64> = (0..m_count)
        .flat_map(|m| stack.one_hot(m).values().to_vec())
        .collect();
    let mut aux = vec![0.0; n];
    for zm in z.chunks_exact(n) {
        aux.iter_mut().zip(zm).for_each(|(a, b)| *a += b * inv_m);
    }
    let mut weights = z.clone();
    let nbrs = neighbours(h, w);
    let mut target = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut betas = Vec::new();
    let mut objective: Vec<f64> = Vec::new();

    let mut beta = config.beta0;
    for _ in 0..config.max_outer {
        // W-step, exact per entry: w = (beta z v + z) / (beta z^2 + 1).
        for (wm, zm) in weights.chunks_exact_mut(n).zip(z.chunks_exact(n)) {
            for ((wv, &zv), &v) in wm.iter_mut().zip(zm).zip(&aux) {
                *wv = (beta * zv * v + zv) / (beta * zv * zv + 1.0);
            }
        }

        // V-step: (beta I + gamma L) V = beta mean_m(W_m . Z_m).
        target.fill(0.0);
        for (wm, zm) in weights.chunks_exact(n).zip(z.chunks_exact(n)) {
            for ((t, &wv), &zv) in target.iter_mut().zip(wm).zip(zm) {
                *t += wv * zv * inv_m;
            }
        }
        let gamma = match config.regularizer {
            Regularizer::TikhonovGradient => config.gamma,
        };
        if gamma == 0.0 {
            aux.copy_from_slice(&target);
        } else {
            for _ in 0..config.inner_iterations {
                for (p, nb) in nbrs.iter().enumerate() {
                    let diag = beta + gamma * nb.len() as f64;
                    for c in 0..k {
                        let s: f64 = nb.iter().map(|&q| aux[q * k + c]).sum();
                        next[p * k + c] = (beta * target[p * k + c] + gamma * s) / diag;
                    }
                }
                std::mem::swap(&mut aux, &mut next);
            }
        }

        let mut coupling = 0.0;
        let mut fidelity = 0.0;
        for (wm, zm) in weights.chunks_exact(n).zip(z.chunks_exact(n)) {
            for ((&wv, &zv), &v) in wm.iter().zip(zm).zip(&aux) {
                coupling += (wv * zv - v).powi(2);
                fidelity += (wv - zv).powi(2);
            }
        }
        let energy = inv_m * (0.5 * beta * coupling + 0.5 * fidelity)
            + 0.5 * gamma * gradient_energy(&aux, h, w, k);
        let value = energy / beta;
        if !value.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "half-quadratic objective became {value} at beta = {beta}"
            )));
        }
        betas.push(beta);
        objective.push(value);
        if let [.., a, b] = objective[..] {
            if a - b < config.tol {
                break;
            }
        }
        beta *= config.kappa;
    }
    Ok(HqState {
        shape: plane,
        weights,
        aux,
        betas,
        objective,
    })
}
