//! Synthetic nested-ellipse masks and simulated raters.

use crate::confusion::ConfusionMatrix;
use crate::error::{Error, Result};
use crate::grid::{ClassGrid, LabelStack};

/// SplitMix64. Identical seeds give identical streams everywhere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` from the high 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Index drawn from a discrete distribution by inverse CDF.
    pub fn sample(&mut self, probs: &[f64]) -> usize {
        let u = self.next_f64();
        let mut acc = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }
}

/// Axis-aligned ellipse; centre and semi-axes are fractions of the grid
/// height (y) and width (x).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center_y: f64,
    pub center_x: f64,
    pub semi_y: f64,
    pub semi_x: f64,
}

impl Ellipse {
    pub fn centered(semi_y: f64, semi_x: f64) -> Self {
        Self {
            center_y: 0.5,
            center_x: 0.5,
            semi_y,
            semi_x,
        }
    }

    fn is_empty(&self) -> bool {
        self.semi_y <= 0.0 || self.semi_x <= 0.0
    }

    /// `(dx/a)^2 + (dy/b)^2` in pixel units.
    fn level(&self, y: f64, x: f64, height: usize, width: usize) -> f64 {
        let dy = (y - self.center_y * height as f64) / (self.semi_y * height as f64);
        let dx = (x - self.center_x * width as f64) / (self.semi_x * width as f64);
        dx * dx + dy * dy
    }

    /// Membership of the centre of pixel `(i, j)`.
    fn contains_pixel(&self, i: usize, j: usize, height: usize, width: usize) -> bool {
        !self.is_empty() && self.level(i as f64 + 0.5, j as f64 + 0.5, height, width) <= 1.0
    }

    fn validate(&self, name: &str) -> Result<()> {
        let all = [self.center_y, self.center_x, self.semi_y, self.semi_x];
        if all.iter().any(|v| !v.is_finite()) || self.semi_y < 0.0 || self.semi_x < 0.0 {
            return Err(Error::arg(format!("{name} ellipse has invalid parameters")));
        }
        if !(0.0..=1.0).contains(&self.center_y) || !(0.0..=1.0).contains(&self.center_x) {
            return Err(Error::arg(format!("{name} centre lies outside the grid")));
        }
        Ok(())
    }
}

/// Optic-disc-like gold mask: background 0, disc rim 1, cup 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoldSpec {
    pub height: usize,
    pub width: usize,
    pub disc: Ellipse,
    pub cup: Ellipse,
}

impl GoldSpec {
    /// Centred disc and cup sized so every class has a sizeable share of
    /// the grid.
    pub fn centered(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            disc: Ellipse::centered(0.42, 0.42),
            cup: Ellipse::centered(0.25, 0.25),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::arg("gold grid must be non-empty"));
        }
        self.disc.validate("disc")?;
        self.cup.validate("cup")?;
        if self.cup.is_empty() {
            return Ok(());
        }
        if self.disc.is_empty() {
            return Err(Error::arg("cup must lie strictly inside the disc"));
        }
        let (h, w) = (self.height as f64, self.width as f64);
        const STEPS: usize = 1024;
        for s in 0..STEPS {
            let t = s as f64 * std::f64::consts::TAU / STEPS as f64;
            let y = (self.cup.center_y + self.cup.semi_y * t.sin()) * h;
            let x = (self.cup.center_x + self.cup.semi_x * t.cos()) * w;
            if self.disc.level(y, x, self.height, self.width) >= 1.0 {
                return Err(Error::arg("cup must lie strictly inside the disc"));
            }
        }
        Ok(())
    }
}

pub fn make_gold(spec: &GoldSpec) -> Result<ClassGrid> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let cells = (0..h * w)
        .map(|p| {
            let (i, j) = (p / w, p % w);
            if spec.cup.contains_pixel(i, j, h, w) {
                2
            } else if spec.disc.contains_pixel(i, j, h, w) {
                1
            } else {
                0
            }
        })
        .collect();
    ClassGrid::new(h, w, 3, cells)
}

/// One simulated rater.
#[derive(Debug, Clone, PartialEq)]
pub struct RaterSpec {
    /// Per-pixel flip probabilities, row = gold class.
    pub confusion: ConfusionMatrix,
    /// Rounds of 4-connected dilation (positive) or erosion (negative)
    /// applied to every nested class region before the flips.
    pub boundary_jitter: i32,
    /// Added to the stack seed to give this rater its own stream.
    pub seed_offset: u64,
}

impl RaterSpec {
    pub fn symmetric(
        classes: usize,
        diagonal: f64,
        boundary_jitter: i32,
        seed_offset: u64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&diagonal) {
            return Err(Error::arg(format!("diagonal {diagonal} outside [0, 1]")));
        }
        Ok(Self {
            confusion: ConfusionMatrix::symmetric(classes, diagonal),
            boundary_jitter,
            seed_offset,
        })
    }
}

fn grow(mask: &[bool], h: usize, w: usize, dilate: bool) -> Vec<bool> {
    (0..h * w)
        .map(|p| {
            let (i, j) = (p / w, p % w);
            let mut nbrs = [None; 4];
            if i > 0 {
                nbrs[0] = Some(p - w);
            }
            if i + 1 < h {
                nbrs[1] = Some(p + w);
            }
            if j > 0 {
                nbrs[2] = Some(p - 1);
            }
            if j + 1 < w {
                nbrs[3] = Some(p + 1);
            }
            let mut it = nbrs.iter().flatten().map(|&q| mask[q]);
            if dilate {
                mask[p] || it.any(|v| v)
            } else {
                mask[p] && it.all(|v| v)
            }
        })
        .collect()
}

fn jitter(gold: &ClassGrid, rounds: i32) -> Vec<usize> {
    let (h, w, k) = (gold.height(), gold.width(), gold.classes());
    if rounds == 0 {
        return gold.cells().to_vec();
    }
    let mut levels: Vec<Vec<bool>> = Vec::with_capacity(k);
    for level in (1..k).rev() {
        let mut mask: Vec<bool> = gold.cells().iter().map(|&c| c >= level).collect();
        for _ in 0..rounds.unsigned_abs() {
            mask = grow(&mask, h, w, rounds > 0);
        }
        if let Some(inner) = levels.last() {
            mask.iter_mut().zip(inner).for_each(|(m, &i)| *m |= i);
        }
        levels.push(mask);
    }
    (0..h * w)
        .map(|p| {
            levels
                .iter()
                .position(|mask| mask[p])
                .map_or(0, |idx| k - 1 - idx)
        })
        .collect()
}

/// Boundary jitter followed by independent per-pixel label flips, one
/// SplitMix64 stream per rater seeded with `seed + seed_offset`.
pub fn corrupt(gold: &ClassGrid, raters: &[RaterSpec], seed: u64) -> Result<LabelStack> {
    let (h, w, k) = (gold.height(), gold.width(), gold.classes());
    if raters.is_empty() {
        return Err(Error::arg("need at least one rater"));
    }
    let max_jitter = (h.min(w) / 4) as u32;
    let mut grids = Vec::with_capacity(raters.len());
    for (m, spec) in raters.iter().enumerate() {
        if spec.confusion.classes() != k {
            return Err(Error::shape(format!(
                "rater {m} confusion has {} classes, gold has {k}",
                spec.confusion.classes()
            )));
        }
        if spec.boundary_jitter.unsigned_abs() > max_jitter {
            return Err(Error::arg(format!(
                "rater {m} jitter {} exceeds {max_jitter}",
                spec.boundary_jitter
            )));
        }
        let mut rng = Rng::new(seed.wrapping_add(spec.seed_offset));
        let cells = jitter(gold, spec.boundary_jitter)
            .into_iter()
            .map(|c| rng.sample(spec.confusion.row(c)))
            .collect();
        grids.push(ClassGrid::new(h, w, k, cells)?);
    }
    LabelStack::new(grids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // Reference stream for seed 0 from the published SplitMix64 code.
        let mut rng = Rng::new(0);
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(rng.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(rng.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn unit_floats_in_range() {
        let mut rng = Rng::new(42);
        for _ in 0..10_000 {
            let u = rng.next_f64();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn zero_radius_cup_has_no_cup_pixels() {
        let spec = GoldSpec {
            cup: Ellipse::centered(0.0, 0.0),
            ..GoldSpec::centered(32, 32)
        };
        let gold = make_gold(&spec).unwrap();
        assert_eq!(gold.histogram()[2], 0);
        assert!(gold.histogram()[1] > 0);
    }

    #[test]
    fn gold_is_deterministic() {
        let spec = GoldSpec::centered(40, 30);
        assert_eq!(make_gold(&spec).unwrap(), make_gold(&spec).unwrap());
    }

    #[test]
    fn cup_outside_disc_rejected() {
        let spec = GoldSpec {
            cup: Ellipse::centered(0.45, 0.2),
            ..GoldSpec::centered(32, 32)
        };
        assert!(make_gold(&spec).is_err());
    }

    #[test]
    fn identity_rater_copies_gold() {
        let gold = make_gold(&GoldSpec::centered(32, 32)).unwrap();
        let spec = RaterSpec::symmetric(3, 1.0, 0, 0).unwrap();
        let stack = corrupt(&gold, &[spec.clone(), spec], 42).unwrap();
        assert_eq!(stack.rater(0), &gold);
        assert_eq!(stack.rater(1), &gold);
    }

    #[test]
    fn dilation_grows_and_erosion_shrinks_regions() {
        let gold = make_gold(&GoldSpec::centered(32, 32)).unwrap();
        let base = gold.histogram();
        let grown = ClassGrid::new(32, 32, 3, jitter(&gold, 2))
            .unwrap()
            .histogram();
        let shrunk = ClassGrid::new(32, 32, 3, jitter(&gold, -2))
            .unwrap()
            .histogram();
        assert!(grown[0] < base[0] && grown[2] > base[2]);
        assert!(shrunk[0] > base[0] && shrunk[2] < base[2]);
    }

    #[test]
    fn excessive_jitter_rejected() {
        let gold = make_gold(&GoldSpec::centered(16, 16)).unwrap();
        let spec = RaterSpec::symmetric(3, 0.9, 5, 0).unwrap();
        assert!(corrupt(&gold, &[spec], 1).is_err());
    }
}
