use proptest::prelude::*;

use rwloss::analysis::negcount;
use rwloss::edt::class_edt;
use rwloss::loss::{rw_loss_grad, softmax, Normalization};
use rwloss::metrics::{dice, hausdorff, permutation_test, BinaryMask, Statistic};
use rwloss::rwmaps::{is_rectified, MapSpec};
use rwloss::trainer::{AdamState, OptimizerConfig};
use rwloss::{one_hot, Geometry, LabelGrid, LogitField};

fn grid_strategy() -> impl Strategy<Value = LabelGrid> {
    (1usize..9, 1usize..9, 2usize..5).prop_flat_map(|(h, w, k)| {
        (
            proptest::collection::vec(0..k as u8, h * w),
            proptest::collection::vec(0.25f64..3.0, 2),
        )
            .prop_map(move |(labels, spacing)| {
                LabelGrid::new(Geometry::new(vec![h, w], spacing).unwrap(), labels, k).unwrap()
            })
    })
}

fn logits_for(grid: &LabelGrid, raw: &[f64]) -> LogitField {
    let k = grid.num_classes();
    let values = (0..grid.len() * k).map(|j| raw[j % raw.len()]).collect();
    LogitField::new(grid.geometry().clone(), k, values).unwrap()
}

fn mask(grid: &LabelGrid) -> BinaryMask {
    BinaryMask::from_labels(grid, 1)
}

proptest! {
    #[test]
    fn rw_gradient_rows_sum_to_zero(
        grid in grid_strategy(),
        raw in proptest::collection::vec(-6.0f64..6.0, 1..40),
        zraw in proptest::collection::vec(-3.0f64..3.0, 1..40),
    ) {
        let probs = softmax(&logits_for(&grid, &raw));
        let z = logits_for(&grid, &zraw).cast().unwrap();
        let g = rw_loss_grad(&probs, &z, Normalization::None).unwrap();
        for px in g.pixels() {
            prop_assert!(px.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn rectified_maps_never_push_two_classes_up(
        grid in grid_strategy(),
        raw in proptest::collection::vec(-8.0f64..8.0, 1..40),
    ) {
        let counts = grid.class_counts();
        prop_assume!(counts.iter().all(|&c| c < grid.len()));
        let z = MapSpec::Rrw.build(&grid).unwrap();
        prop_assert!(is_rectified(&z, &one_hot(&grid)).unwrap().is_rectified());
        let report = negcount(&softmax(&logits_for(&grid, &raw)), &z).unwrap();
        prop_assert_eq!(report.multi_negative_pixels(), 0);
    }

    #[test]
    fn signed_distance_sign_matches_membership(grid in grid_strategy()) {
        let sdf = class_edt(&grid);
        for k in 0..grid.num_classes() {
            for (i, d) in sdf.channel(k).iter().enumerate() {
                if grid.labels()[i] as usize == k {
                    prop_assert!(*d < 0.0);
                } else {
                    prop_assert!(*d > 0.0);
                }
            }
        }
    }

    #[test]
    fn dice_and_hausdorff_are_symmetric(a in grid_strategy(), seed in any::<u64>()) {
        let labels: Vec<u8> = a
            .labels()
            .iter()
            .enumerate()
            .map(|(i, &l)| ((l as u64 + seed.rotate_left(i as u32 % 64)) % 2) as u8)
            .collect();
        let b = LabelGrid::new(a.geometry().clone(), labels, 2).unwrap();
        let a = LabelGrid::new(
            a.geometry().clone(),
            a.labels().iter().map(|&l| l % 2).collect(),
            2,
        )
        .unwrap();
        let (ma, mb) = (mask(&a), mask(&b));
        let d = dice(&ma, &mb).unwrap();
        prop_assert_eq!(d, dice(&mb, &ma).unwrap());
        prop_assert!((0.0..=1.0).contains(&d));
        if ma.count() > 0 && mb.count() > 0 {
            let h = hausdorff(&ma, &mb).unwrap();
            prop_assert_eq!(h, hausdorff(&mb, &ma).unwrap());
            prop_assert_eq!(hausdorff(&ma, &ma).unwrap(), 0.0);
        }
    }

    #[test]
    fn permutation_p_value_is_a_probability(
        pairs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..30),
        seed in any::<u64>(),
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let r = permutation_test(&a, &b, 500, seed, Statistic::AbsMeanDiff).unwrap();
        prop_assert!(r.p_value > 0.0 && r.p_value <= 1.0);
        let again = permutation_test(&a, &b, 500, seed, Statistic::AbsMeanDiff).unwrap();
        prop_assert_eq!(r, again);
    }

    #[test]
    fn adam_ignores_zero_gradients(params in proptest::collection::vec(-3.0f64..3.0, 1..20)) {
        let mut adam = AdamState::new(params.len(), &OptimizerConfig::default());
        let mut p = params.clone();
        let zeros = vec![0.0; p.len()];
        for _ in 0..5 {
            adam.update(&mut p, &zeros).unwrap();
        }
        prop_assert_eq!(p, params);
    }
}

#[test]
fn adam_first_step_matches_hand_computation() {
    let cfg = OptimizerConfig::default();
    let mut adam = AdamState::new(1, &cfg);
    let mut p = vec![1.0];
    adam.update(&mut p, &[0.5]).unwrap();
    // bias-corrected moments equal g and g^2 after one step
    let expected = 1.0 - cfg.lr * 0.5 / (0.5 + cfg.eps);
    assert!((p[0] - expected).abs() < 1e-15);
    assert!(adam.update(&mut p, &[f64::NAN]).is_err());
}
