//! Dense per-pixel grids shared by every other module.
//!
//! All buffers use one canonical row-major layout: row `i` over the height,
//! then column `j` over the width, then class `k`. Reductions walk the
//! buffers in that order so sums are reproducible.

use crate::error::{Error, Result};

/// Tolerance on per-pixel probability sums.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Grid dimensions: height, width, number of classes and number of raters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridShape {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub raters: usize,
}

impl GridShape {
    pub fn new(height: usize, width: usize, classes: usize, raters: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::arg(format!(
                "grid must be non-empty, got {height}x{width}"
            )));
        }
        if classes < 2 {
            return Err(Error::arg(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        if raters == 0 {
            return Err(Error::arg("need at least 1 rater"));
        }
        let total = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(classes))
            .and_then(|n| n.checked_mul(raters));
        if total.is_none() {
            return Err(Error::arg("grid size overflows the address space"));
        }
        Ok(Self {
            height,
            width,
            classes,
            raters,
        })
    }

    /// A single-plane shape (raters = 1).
    pub fn plane(height: usize, width: usize, classes: usize) -> Result<Self> {
        Self::new(height, width, classes, 1)
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Same height, width and classes; the rater count is ignored.
    pub fn same_plane(&self, other: &GridShape) -> bool {
        self.height == other.height && self.width == other.width && self.classes == other.classes
    }

    pub(crate) fn with_raters(self, raters: usize) -> Self {
        Self { raters, ..self }
    }

    pub(crate) fn as_plane(self) -> Self {
        self.with_raters(1)
    }

    pub fn check_plane(&self, other: &GridShape, what: &str) -> Result<()> {
        if self.same_plane(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.classes, other.height, other.width, other.classes
            )))
        }
    }
}

/// Hard per-pixel class assignments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassGrid {
    shape: GridShape,
    cells: Vec<usize>,
}

impl ClassGrid {
    pub fn new(height: usize, width: usize, classes: usize, cells: Vec<usize>) -> Result<Self> {
        let shape = GridShape::plane(height, width, classes)?;
        if cells.len() != shape.pixels() {
            return Err(Error::shape(format!(
                "expected {} cells, got {}",
                shape.pixels(),
                cells.len()
            )));
        }
        if let Some(&class) = cells.iter().find(|&&c| c >= classes) {
            return Err(Error::InvalidClass { class, classes });
        }
        Ok(Self { shape, cells })
    }

    pub fn filled(shape: GridShape, class: usize) -> Result<Self> {
        Self::new(
            shape.height,
            shape.width,
            shape.classes,
            vec![class; shape.pixels()],
        )
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn classes(&self) -> usize {
        self.shape.classes
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.cells[i * self.shape.width + j]
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    /// Pixel count per class.
    pub fn histogram(&self) -> Vec<usize> {
        let mut counts = vec![0; self.shape.classes];
        for &c in &self.cells {
            counts[c] += 1;
        }
        counts
    }
}

/// Per-pixel class distribution, `H x W x K`, each pixel summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    shape: GridShape,
    values: Vec<f64>,
}

impl ProbMap {
    /// Validates range and per-pixel normalisation.
    pub fn new(shape: GridShape, values: Vec<f64>) -> Result<Self> {
        let shape = shape.as_plane();
        let k = shape.classes;
        if values.len() != shape.pixels() * k {
            return Err(Error::shape(format!(
                "expected {} values, got {}",
                shape.pixels() * k,
                values.len()
            )));
        }
        for (p, px) in values.chunks_exact(k).enumerate() {
            if px.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::arg(format!("pixel {p}: probability outside [0, 1]")));
            }
            let sum: f64 = px.iter().sum();
            if (sum - 1.0).abs() > SUM_TOLERANCE {
                return Err(Error::arg(format!("pixel {p}: probabilities sum to {sum}")));
            }
        }
        Ok(Self { shape, values })
    }

    /// Caller guarantees the invariants.
    pub(crate) fn from_raw(shape: GridShape, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), shape.pixels() * shape.classes);
        Self {
            shape: shape.as_plane(),
            values,
        }
    }

    /// Per-pixel softmax over the class axis of a logit buffer.
    pub fn from_logits(shape: GridShape, mut logits: Vec<f64>) -> Self {
        for px in logits.chunks_exact_mut(shape.classes) {
            softmax_in_place(px);
        }
        Self::from_raw(shape, logits)
    }

    pub fn uniform(shape: GridShape) -> Self {
        let k = shape.classes;
        Self::from_raw(shape, vec![1.0 / k as f64; shape.pixels() * k])
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn classes(&self) -> usize {
        self.shape.classes
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(i * self.shape.width + j) * self.shape.classes + k]
    }

    /// Distribution at flat pixel index `p`.
    pub fn pixel(&self, p: usize) -> &[f64] {
        let k = self.shape.classes;
        &self.values[p * k..(p + 1) * k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn pixels(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.shape.classes)
    }

    /// Channel `k` as a row-major `H x W` buffer.
    pub fn channel(&self, k: usize) -> Vec<f64> {
        self.pixels().map(|px| px[k]).collect()
    }

    pub fn max_abs_diff(&self, other: &ProbMap) -> Result<f64> {
        self.shape.check_plane(&other.shape, "probability maps")?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs())))
    }
}

/// Unnormalised log-prior over classes at every pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorMap {
    shape: GridShape,
    logits: Vec<f64>,
}

impl PriorMap {
    pub fn new(shape: GridShape, logits: Vec<f64>) -> Result<Self> {
        let shape = shape.as_plane();
        if logits.len() != shape.pixels() * shape.classes {
            return Err(Error::shape(format!(
                "expected {} prior logits, got {}",
                shape.pixels() * shape.classes,
                logits.len()
            )));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::arg("prior logits must be finite"));
        }
        Ok(Self { shape, logits })
    }

    /// The same class distribution at every pixel, as log-probabilities.
    pub fn from_class_prior(shape: GridShape, prior: &[f64]) -> Result<Self> {
        if prior.len() != shape.classes {
            return Err(Error::shape(format!(
                "class prior has {} entries for {} classes",
                prior.len(),
                shape.classes
            )));
        }
        if prior.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::arg("class prior entries must be positive"));
        }
        let logs: Vec<f64> = prior.iter().map(|p| p.ln()).collect();
        let logits = (0..shape.pixels())
            .flat_map(|_| logs.iter().copied())
            .collect();
        Self::new(shape, logits)
    }

    /// Log of a probability map, floored at `floor`.
    pub fn from_probs(map: &ProbMap, floor: f64) -> Result<Self> {
        if !(floor > 0.0) {
            return Err(Error::arg("prior floor must be positive"));
        }
        let logits = map.values().iter().map(|&p| p.max(floor).ln()).collect();
        Self::new(map.shape(), logits)
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn pixel(&self, p: usize) -> &[f64] {
        let k = self.shape.classes;
        &self.logits[p * k..(p + 1) * k]
    }
}

/// M raters' hard label grids over one shared plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelStack {
    shape: GridShape,
    raters: Vec<ClassGrid>,
}

impl LabelStack {
    pub fn new(raters: Vec<ClassGrid>) -> Result<Self> {
        let first = raters
            .first()
            .ok_or_else(|| Error::arg("label stack needs at least one rater"))?;
        let plane = first.shape();
        for (m, grid) in raters.iter().enumerate() {
            plane.check_plane(&grid.shape(), &format!("rater {m}"))?;
        }
        Ok(Self {
            shape: plane.with_raters(raters.len()),
            raters,
        })
    }

    /// Shape including the rater count.
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    /// Shape of a single plane (raters = 1).
    pub fn plane(&self) -> GridShape {
        self.shape.as_plane()
    }

    pub fn num_raters(&self) -> usize {
        self.raters.len()
    }

    pub fn classes(&self) -> usize {
        self.shape.classes
    }

    pub fn pixels(&self) -> usize {
        self.shape.pixels()
    }

    pub fn rater(&self, m: usize) -> &ClassGrid {
        &self.raters[m]
    }

    pub fn raters(&self) -> &[ClassGrid] {
        &self.raters
    }

    /// Label of rater `m` at flat pixel `p`.
    pub fn label(&self, m: usize, p: usize) -> usize {
        self.raters[m].cells[p]
    }

    /// One-hot view of rater `m`.
    pub fn one_hot(&self, m: usize) -> ProbMap {
        one_hot_unchecked(&self.raters[m], self.shape.classes)
    }
}

pub fn one_hot(grid: &ClassGrid, classes: usize) -> Result<ProbMap> {
    GridShape::plane(grid.height(), grid.width(), classes)?;
    if let Some(&class) = grid.cells().iter().find(|&&c| c >= classes) {
        return Err(Error::InvalidClass { class, classes });
    }
    Ok(one_hot_unchecked(grid, classes))
}

fn one_hot_unchecked(grid: &ClassGrid, classes: usize) -> ProbMap {
    let shape = GridShape {
        classes,
        ..grid.shape()
    };
    let mut values = vec![0.0; grid.cells().len() * classes];
    for (p, &c) in grid.cells().iter().enumerate() {
        values[p * classes + c] = 1.0;
    }
    ProbMap::from_raw(shape, values)
}

/// Per-pixel argmax; ties go to the lowest class index.
pub fn argmax_grid(map: &ProbMap) -> ClassGrid {
    let cells = map.pixels().map(argmax).collect();
    ClassGrid {
        shape: map.shape(),
        cells,
    }
}

pub fn uniform_prior(shape: GridShape) -> PriorMap {
    let shape = shape.as_plane();
    PriorMap {
        shape,
        logits: vec![0.0; shape.pixels() * shape.classes],
    }
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// Max-shifted softmax.
pub fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    for l in logits.iter_mut() {
        *l /= sum;
    }
}
