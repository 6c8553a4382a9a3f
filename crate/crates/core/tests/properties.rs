mod common;

use proptest::prelude::*;

use selfcal::baselines::majority_vote;
use selfcal::confusion::ConfusionMatrix;
use selfcal::expertness::{estimate_confusion, predict_rater_labels, ConfusionEstimate};
use selfcal::fusion::{
    bayes_oracle, expertness_from_model, fuse, ExpertnessMaps, RaterGenerativeModel,
};
use selfcal::io::{parse_mrl, parse_mrp, write_mrl, write_mrp};
use selfcal::metrics::{cross_entropy, dice, ssim, DiceSpec, SsimSpec};
use selfcal::{
    argmax_grid, one_hot, uniform_prior, ClassGrid, GridShape, LabelStack, PriorMap, ProbMap,
};

fn grid_strategy() -> impl Strategy<Value = ClassGrid> {
    (1usize..6, 1usize..6, 2usize..5).prop_flat_map(|(h, w, k)| {
        prop::collection::vec(0..k, h * w)
            .prop_map(move |cells| ClassGrid::new(h, w, k, cells).unwrap())
    })
}

fn stack_strategy() -> impl Strategy<Value = LabelStack> {
    (1usize..5, 1usize..5, 2usize..4, 1usize..5).prop_flat_map(|(h, w, k, m)| {
        prop::collection::vec(prop::collection::vec(0..k, h * w), m).prop_map(move |raters| {
            LabelStack::new(
                raters
                    .into_iter()
                    .map(|cells| ClassGrid::new(h, w, k, cells).unwrap())
                    .collect(),
            )
            .unwrap()
        })
    })
}

fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, k).prop_map(|raw| {
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    })
}

fn probs_strategy(h: usize, w: usize, k: usize) -> impl Strategy<Value = ProbMap> {
    prop::collection::vec(simplex(k), h * w)
        .prop_map(move |px| ProbMap::new(GridShape::plane(h, w, k).unwrap(), px.concat()).unwrap())
}

fn model_for(stack: &LabelStack) -> impl Strategy<Value = RaterGenerativeModel> {
    let k = stack.classes();
    (
        simplex(k),
        prop::collection::vec(prop::collection::vec(simplex(k), k), stack.num_raters()),
    )
        .prop_map(move |(prior, rows)| {
            let confusions = rows
                .into_iter()
                .map(|r| ConfusionMatrix::new(k, r.concat()).unwrap())
                .collect();
            RaterGenerativeModel::new(prior, confusions).unwrap()
        })
}

proptest! {
    #[test]
    fn argmax_inverts_one_hot(g in grid_strategy()) {
        prop_assert_eq!(argmax_grid(&one_hot(&g, g.classes()).unwrap()), g);
    }

    #[test]
    fn fuse_matches_product_posterior(
        (stack, model) in stack_strategy().prop_flat_map(|s| {
            let m = model_for(&s);
            (Just(s), m)
        })
    ) {
        let prior = PriorMap::from_class_prior(stack.plane(), model.class_prior()).unwrap();
        let fused = fuse(&stack, &expertness_from_model(&stack, &model).unwrap(), &prior).unwrap();
        let exact = bayes_oracle(&stack, &model).unwrap();
        prop_assert!(fused.max_abs_diff(&exact).unwrap() <= 1e-10);
    }

    #[test]
    fn fuse_ignores_per_pixel_shifts(
        (stack, model) in stack_strategy().prop_flat_map(|s| {
            let m = model_for(&s);
            (Just(s), m)
        }),
        shift in -50.0f64..50.0,
    ) {
        let expertness = expertness_from_model(&stack, &model).unwrap();
        let prior = uniform_prior(stack.plane());
        let base = fuse(&stack, &expertness, &prior).unwrap();
        // A class-independent offset on the prior must not change anything.
        let shifted = PriorMap::new(stack.plane(), vec![shift; prior.logits().len()]).unwrap();
        let moved = fuse(&stack, &expertness, &shifted).unwrap();
        prop_assert!(base.max_abs_diff(&moved).unwrap() <= 1e-12);
    }

    #[test]
    fn symmetric_expertness_reduces_to_vote(stack in stack_strategy(), diag in 0.5f64..0.99) {
        let k = stack.classes();
        let confusions = vec![ConfusionMatrix::symmetric(k, diag); stack.num_raters()];
        let model = RaterGenerativeModel::new(vec![1.0 / k as f64; k], confusions).unwrap();
        let expertness = expertness_from_model(&stack, &model).unwrap();
        let fused = fuse(&stack, &expertness, &uniform_prior(stack.plane())).unwrap();
        prop_assert_eq!(argmax_grid(&fused), majority_vote(&stack).1);
    }

    #[test]
    fn raising_an_expertness_entry_raises_its_class(
        stack in stack_strategy(),
        bump in 0.0f64..5.0,
        pick in any::<prop::sample::Index>(),
    ) {
        let shape = stack.shape();
        let k = shape.classes;
        let n = shape.pixels() * k;
        let base = ExpertnessMaps::constant(shape, -1.0).unwrap();
        let target = pick.index(n * shape.raters);
        let mut values: Vec<f64> = (0..shape.raters).flat_map(|m| base.rater(m).to_vec()).collect();
        values[target] = -1.0 + bump.min(1.0);
        let raised = ExpertnessMaps::new(shape, values).unwrap();
        let prior = uniform_prior(stack.plane());
        let before = fuse(&stack, &base, &prior).unwrap();
        let after = fuse(&stack, &raised, &prior).unwrap();
        let idx = target % n;
        prop_assert!(after.values()[idx] >= before.values()[idx] - 1e-15);
    }

    #[test]
    fn predicted_labels_stay_normalised(
        (fused, thetas) in (1usize..5, 1usize..5, 2usize..4).prop_flat_map(|(h, w, k)| {
            (probs_strategy(h, w, k), prop::collection::vec(prop::collection::vec(simplex(k), k), 1..4))
        })
    ) {
        let k = fused.shape().classes;
        let estimate = ConfusionEstimate {
            confusions: thetas.iter().map(|r| ConfusionMatrix::new(k, r.concat()).unwrap()).collect(),
            smoothing: 0.0,
            support: vec![vec![0.0; k]; thetas.len()],
        };
        for map in predict_rater_labels(&fused, &estimate).unwrap() {
            for px in map.pixels() {
                prop_assert!((px.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn hard_fusion_recovers_counted_confusion(
        (gold, stack) in (1usize..6, 1usize..6, 2usize..4, 1usize..4).prop_flat_map(|(h, w, k, m)| {
            (
                prop::collection::vec(0..k, h * w),
                prop::collection::vec(prop::collection::vec(0..k, h * w), m),
            )
                .prop_map(move |(g, rs)| {
                    let gold = ClassGrid::new(h, w, k, g).unwrap();
                    let stack = LabelStack::new(
                        rs.into_iter().map(|c| ClassGrid::new(h, w, k, c).unwrap()).collect(),
                    )
                    .unwrap();
                    (gold, stack)
                })
        })
    ) {
        let k = gold.classes();
        let estimate = estimate_confusion(&stack, &one_hot(&gold, k).unwrap(), 0.0).unwrap();
        for (m, rater) in stack.raters().iter().enumerate() {
            let mut counts = vec![vec![0usize; k]; k];
            for (&t, &c) in gold.cells().iter().zip(rater.cells()) {
                counts[t][c] += 1;
            }
            for t in 0..k {
                let row: usize = counts[t].iter().sum();
                for c in 0..k {
                    let want = if row == 0 { 1.0 / k as f64 } else { counts[t][c] as f64 / row as f64 };
                    prop_assert!((estimate.confusions[m].get(t, c) - want).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn ssim_symmetric_and_bounded(
        (a, b) in (3usize..8, 3usize..8, 2usize..4).prop_flat_map(|(h, w, k)| {
            (probs_strategy(h, w, k), probs_strategy(h, w, k))
        })
    ) {
        let spec = SsimSpec { window: 3, ..Default::default() };
        let ab = ssim(&a, &b, &spec).unwrap();
        prop_assert!((ab - ssim(&b, &a, &spec).unwrap()).abs() <= 1e-12);
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&ab));
        prop_assert!((ssim(&a, &a, &spec).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn dice_axioms(
        (a, b) in (1usize..6, 1usize..6).prop_flat_map(|(h, w)| {
            let g = move || prop::collection::vec(0usize..3, h * w)
                .prop_map(move |c| ClassGrid::new(h, w, 3, c).unwrap());
            (g(), g())
        })
    ) {
        let spec = DiceSpec::default();
        let ab = dice(&a, &b, &spec).unwrap();
        prop_assert_eq!(&ab, &dice(&b, &a, &spec).unwrap());
        prop_assert!(ab.iter().all(|(_, s)| (0.0..=1.0).contains(s)));
        prop_assert!(dice(&a, &a, &spec).unwrap().iter().all(|(_, s)| *s == 1.0));
    }

    #[test]
    fn cross_entropy_non_negative(
        (p, g) in (1usize..5, 1usize..5, 2usize..4).prop_flat_map(|(h, w, k)| {
            (
                probs_strategy(h, w, k),
                prop::collection::vec(0..k, h * w).prop_map(move |c| ClassGrid::new(h, w, k, c).unwrap()),
            )
        })
    ) {
        prop_assert!(cross_entropy(&p, &g, 1e-6).unwrap() >= 0.0);
    }

    #[test]
    fn mrl_round_trip(stack in stack_strategy()) {
        let text = write_mrl(&stack);
        let back = parse_mrl(&text).unwrap();
        prop_assert_eq!(&back, &stack);
        prop_assert_eq!(write_mrl(&back), text);
    }

    #[test]
    fn mrp_round_trip_is_bitwise(map in (1usize..5, 1usize..5, 2usize..4).prop_flat_map(|(h, w, k)| probs_strategy(h, w, k))) {
        let text = write_mrp(&map);
        let back = parse_mrp(&text).unwrap();
        for (x, y) in back.values().iter().zip(map.values()) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
        prop_assert_eq!(write_mrp(&back), text);
    }
}
