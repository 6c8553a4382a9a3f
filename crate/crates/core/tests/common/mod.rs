//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use selfcal::baselines::empirical_class_prior;
use selfcal::calibrate::RecurrenceConfig;
use selfcal::confusion::ConfusionMatrix;
use selfcal::synth::{corrupt, make_gold, GoldSpec, RaterSpec, Rng};
use selfcal::{ClassGrid, LabelStack, PriorMap};

pub const SEED_SUITE: [u64; 5] = [42, 43, 44, 45, 46];
pub const HETEROGENEOUS: [f64; 3] = [0.9, 0.9, 0.6];
pub const HOMOGENEOUS: [f64; 3] = [0.85, 0.85, 0.85];

pub struct Fixture {
    pub gold: ClassGrid,
    pub raters: Vec<RaterSpec>,
    pub stack: LabelStack,
}

/// Centred disc/cup gold corrupted by symmetric raters with the given
/// diagonals; rater `m` uses seed offset `m`.
pub fn generative(size: usize, diagonals: &[f64], seed: u64) -> Fixture {
    let gold = make_gold(&GoldSpec::centered(size, size)).unwrap();
    let raters: Vec<RaterSpec> = diagonals
        .iter()
        .enumerate()
        .map(|(m, &d)| RaterSpec::symmetric(3, d, 0, m as u64).unwrap())
        .collect();
    let stack = corrupt(&gold, &raters, seed).unwrap();
    Fixture {
        gold,
        raters,
        stack,
    }
}

/// Default recurrence with the majority-vote class frequencies as prior.
pub fn empirical_config(stack: &LabelStack) -> RecurrenceConfig {
    let config = RecurrenceConfig::default();
    let classes = empirical_class_prior(stack, config.epsilon).unwrap();
    RecurrenceConfig {
        prior: Some(PriorMap::from_class_prior(stack.plane(), &classes).unwrap()),
        ..config
    }
}

pub fn random_grid(rng: &mut Rng, h: usize, w: usize, k: usize) -> ClassGrid {
    let cells = (0..h * w)
        .map(|_| (rng.next_u64() % k as u64) as usize)
        .collect();
    ClassGrid::new(h, w, k, cells).unwrap()
}

pub fn random_stack(rng: &mut Rng, h: usize, w: usize, k: usize, m: usize) -> LabelStack {
    LabelStack::new((0..m).map(|_| random_grid(rng, h, w, k)).collect()).unwrap()
}

/// Strictly positive entries summing to one.
pub fn random_simplex(rng: &mut Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| 0.02 + rng.next_f64()).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

pub fn random_confusion(rng: &mut Rng, k: usize) -> ConfusionMatrix {
    let values = (0..k).flat_map(|_| random_simplex(rng, k)).collect();
    ConfusionMatrix::new(k, values).unwrap()
}

pub fn range(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + (rng.next_u64() % (hi - lo + 1) as u64) as usize
}

/// SSIM by explicit window loops and two-pass moments, clamping indices at
/// the border.
pub fn ssim_direct(
    a: &selfcal::ProbMap,
    b: &selfcal::ProbMap,
    window: usize,
    c1: f64,
    c2: f64,
) -> f64 {
    let s = a.shape();
    let (h, w) = (s.height as isize, s.width as isize);
    let r = (window / 2) as isize;
    let mut total = 0.0;
    for k in 0..s.classes {
        let mut channel = 0.0;
        for i in 0..h {
            for j in 0..w {
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for di in -r..=r {
                    for dj in -r..=r {
                        let ii = (i + di).clamp(0, h - 1) as usize;
                        let jj = (j + dj).clamp(0, w - 1) as usize;
                        xs.push(a.get(ii, jj, k));
                        ys.push(b.get(ii, jj, k));
                    }
                }
                let n = xs.len() as f64;
                let mx = xs.iter().sum::<f64>() / n;
                let my = ys.iter().sum::<f64>() / n;
                let vx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n;
                let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n;
                let cxy = xs
                    .iter()
                    .zip(&ys)
                    .map(|(x, y)| (x - mx) * (y - my))
                    .sum::<f64>()
                    / n;
                channel += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
        total += channel / (h * w) as f64;
    }
    total / s.classes as f64
}

/// Random probability map with strictly positive entries.
pub fn random_probs(rng: &mut Rng, h: usize, w: usize, k: usize) -> selfcal::ProbMap {
    let shape = selfcal::GridShape::plane(h, w, k).unwrap();
    let values = (0..h * w).flat_map(|_| random_simplex(rng, k)).collect();
    selfcal::ProbMap::new(shape, values).unwrap()
}
