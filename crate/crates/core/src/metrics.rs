//! Overlap and agreement metrics.

use crate::calibrate::RecurrenceTrace;
use crate::error::{Error, Result};
use crate::grid::{ClassGrid, ProbMap};

/// Named sets of classes, each scored as one binary mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiceSpec {
    pub class_sets: Vec<(String, Vec<usize>)>,
}

impl Default for DiceSpec {
    /// Optic disc (rim and cup) and optic cup, with background = 0,
    /// rim = 1, cup = 2.
    fn default() -> Self {
        Self {
            class_sets: vec![("disc".into(), vec![1, 2]), ("cup".into(), vec![2])],
        }
    }
}

impl DiceSpec {
    /// Parses `"disc=1,2;cup=2"`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut class_sets = Vec::new();
        for part in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, list) = part
                .split_once('=')
                .ok_or_else(|| Error::arg(format!("class set `{part}` needs name=indices")))?;
            let classes = list
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::arg(format!("bad class index `{s}` in `{part}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            class_sets.push((name.trim().to_string(), classes));
        }
        if class_sets.is_empty() {
            return Err(Error::arg("no class sets given"));
        }
        Ok(Self { class_sets })
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        for (name, set) in &self.class_sets {
            if set.is_empty() {
                return Err(Error::arg(format!("class set `{name}` is empty")));
            }
            if let Some(&class) = set.iter().find(|&&c| c >= classes) {
                return Err(Error::InvalidClass { class, classes });
            }
        }
        Ok(())
    }
}

/// `2|A n B| / (|A| + |B|)` per class set; two empty masks score 1.
pub fn dice(
    pred: &ClassGrid,
    reference: &ClassGrid,
    spec: &DiceSpec,
) -> Result<Vec<(String, f64)>> {
    pred.shape()
        .check_plane(&reference.shape(), "dice operands")?;
    spec.validate(pred.classes())?;
    Ok(spec
        .class_sets
        .iter()
        .map(|(name, set)| {
            let (mut both, mut a, mut b) = (0usize, 0usize, 0usize);
            for (&p, &r) in pred.cells().iter().zip(reference.cells()) {
                let (in_p, in_r) = (set.contains(&p), set.contains(&r));
                a += in_p as usize;
                b += in_r as usize;
                both += (in_p && in_r) as usize;
            }
            let score = if a + b == 0 {
                1.0
            } else {
                2.0 * both as f64 / (a + b) as f64
            };
            (name.clone(), score)
        })
        .collect())
}

/// Mean of the per-set Dice scores.
pub fn mean_dice(pred: &ClassGrid, reference: &ClassGrid, spec: &DiceSpec) -> Result<f64> {
    let scores = dice(pred, reference, spec)?;
    Ok(scores.iter().map(|(_, s)| s).sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimSpec {
    /// Side of the square uniform window; odd.
    pub window: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimSpec {
    fn default() -> Self {
        Self {
            window: 7,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
        }
    }
}

/// Windowed SSIM with a uniform window centred on every pixel and
/// replicated borders, averaged over pixels and then over class channels.
pub fn ssim(a: &ProbMap, b: &ProbMap, spec: &SsimSpec) -> Result<f64> {
    a.shape().check_plane(&b.shape(), "ssim operands")?;
    let shape = a.shape();
    if spec.window.is_multiple_of(2) {
        return Err(Error::arg(format!(
            "ssim window must be odd, got {}",
            spec.window
        )));
    }
    if spec.window > shape.height.min(shape.width) {
        return Err(Error::shape(format!(
            "ssim window {} larger than {}x{} grid",
            spec.window, shape.height, shape.width
        )));
    }
    if !(spec.c1 > 0.0 && spec.c2 > 0.0) {
        return Err(Error::arg("ssim stabilisers must be positive"));
    }
    let (h, w) = (shape.height, shape.width);
    let n = (spec.window * spec.window) as f64;
    let mut total = 0.0;
    for k in 0..shape.classes {
        let x = a.channel(k);
        let y = b.channel(k);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let sums = [&x, &y, &xx, &yy, &xy].map(|c| box_sum(c, h, w, spec.window / 2));
        let mut channel = 0.0;
        for p in 0..h * w {
            let mx = sums[0][p] / n;
            let my = sums[1][p] / n;
            let vx = sums[2][p] / n - mx * mx;
            let vy = sums[3][p] / n - my * my;
            let cxy = sums[4][p] / n - mx * my;
            channel += ssim_term(mx, my, vx, vy, cxy, spec);
        }
        total += channel / (h * w) as f64;
    }
    Ok(total / shape.classes as f64)
}

pub(crate) fn ssim_term(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64, spec: &SsimSpec) -> f64 {
    ((2.0 * mx * my + spec.c1) * (2.0 * cxy + spec.c2))
        / ((mx * mx + my * my + spec.c1) * (vx + vy + spec.c2))
}

/// Separable box sum with clamped (replicated) borders.
fn box_sum(src: &[f64], h: usize, w: usize, radius: usize) -> Vec<f64> {
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let r = radius as isize;
    let mut rows = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            rows[i * w + j] = (-r..=r)
                .map(|d| src[i * w + clamp(j as isize + d, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            out[i * w + j] = (-r..=r)
                .map(|d| rows[clamp(i as isize + d, h) * w + j])
                .sum();
        }
    }
    out
}

/// Mean over pixels of `-log max(pred(target), epsilon)`.
pub fn cross_entropy(pred: &ProbMap, target: &ClassGrid, epsilon: f64) -> Result<f64> {
    pred.shape()
        .check_plane(&target.shape(), "cross-entropy operands")?;
    if !(epsilon > 0.0) {
        return Err(Error::arg("epsilon must be positive"));
    }
    let log_sum: f64 = pred
        .pixels()
        .zip(target.cells())
        .map(|(px, &c)| px[c].max(epsilon).ln())
        .sum();
    // Subtracting from +0 keeps a perfect prediction at +0 rather than -0.
    Ok(0.0 - log_sum / target.cells().len() as f64)
}

/// Sum over iterations of the per-rater cross-entropies plus
/// `1 - ssim` against the previous fused map (zero on the first iteration).
pub fn total_agreement(trace: &RecurrenceTrace) -> Result<f64> {
    if trace.iterations.is_empty() {
        return Err(Error::arg("empty trace"));
    }
    Ok(trace
        .iterations
        .iter()
        .map(|it| {
            let ce: f64 = it.rater_cross_entropy.iter().sum();
            ce + it.ssim_prev.map_or(0.0, |s| 1.0 - s)
        })
        .sum())
}
