mod common;

use parakam::para::{cm_remainder, para_product};
use parakam::probes::{fit_line, random_field, random_mean_free};
use parakam::small_divisor::{delta_alpha, delta_alpha_inverse, RotationAngle};
use parakam::{DyadicCutoff, SpectralField, TorusGrid};
use proptest::prelude::*;

use common::{golden_alpha, rng};

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 32,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn blocks_resum_to_the_field(dim in 1usize..=2, k in 4usize..=24, seed in any::<u64>()) {
        let g = TorusGrid::new(dim, k).unwrap();
        let cut = DyadicCutoff::new(&g);
        prop_assert!(cut.partition_residual() < 1e-14);
        let u = random_field(&g, &mut rng(seed), 0.5);
        prop_assert!(cut.decompose(&u).sum().max_coeff_diff(&u) < 1e-13);
    }

    #[test]
    fn para_product_is_real_and_linear(seed in any::<u64>(), c in -3.0f64..3.0) {
        let g = TorusGrid::new(1, 64).unwrap();
        let cut = DyadicCutoff::new(&g);
        let mut r = rng(seed);
        let (a, u, v) = (random_field(&g, &mut r, 1.0), random_field(&g, &mut r, 1.0), random_field(&g, &mut r, 1.0));
        let lhs = para_product(&a, &(&u + &v.scale(c)), &cut).unwrap();
        let rhs = &para_product(&a, &u, &cut).unwrap() + &para_product(&a, &v, &cut).unwrap().scale(c);
        prop_assert!(lhs.max_coeff_diff(&rhs) < 1e-13);
        prop_assert!(lhs.hermitian_defect() < 1e-14);
    }

    #[test]
    fn cm_remainder_is_bilinear_in_the_symbols(seed in any::<u64>(), c in -2.0f64..2.0) {
        let g = TorusGrid::new(1, 32).unwrap();
        let cut = DyadicCutoff::new(&g);
        let mut r = rng(seed);
        let (a, b, u) = (random_field(&g, &mut r, 1.0), random_field(&g, &mut r, 1.0), random_field(&g, &mut r, 1.0));
        let lhs = cm_remainder(&a.scale(c), &b, &u, &cut).unwrap();
        let rhs = cm_remainder(&a, &b, &u, &cut).unwrap().scale(c);
        prop_assert!(lhs.max_coeff_diff(&rhs) < 1e-12);
    }

    #[test]
    fn delta_inverse_round_trips(seed in any::<u64>(), k in 8usize..=64) {
        let g = TorusGrid::new(1, k).unwrap();
        let alpha = RotationAngle::certify(golden_alpha(), 1.0, k).unwrap();
        let f = random_mean_free(&g, &mut rng(seed), 1.0);
        let v = delta_alpha_inverse(&f, &alpha).unwrap();
        prop_assert!(delta_alpha(&v, alpha.alpha).max_coeff_diff(&f) < 1e-11);
        prop_assert_eq!(v.mean(), 0.0);
    }

    #[test]
    fn json_round_trip(dim in 1usize..=3, seed in any::<u64>()) {
        let g = TorusGrid::new(dim, 4).unwrap();
        let u = random_field(&g, &mut rng(seed), 0.0);
        let back = SpectralField::from_json(&u.to_json()).unwrap();
        prop_assert!(back.max_coeff_diff(&u) <= 1e-16);
    }

    #[test]
    fn translation_commutes_with_blocks(seed in any::<u64>(), t in -6.0f64..6.0, j in 0usize..6) {
        let g = TorusGrid::new(1, 32).unwrap();
        let cut = DyadicCutoff::new(&g);
        let u = random_field(&g, &mut rng(seed), 0.5);
        let a = cut.block(&u.translate(&[t]), j);
        let b = cut.block(&u, j).translate(&[t]);
        prop_assert!(a.max_coeff_diff(&b) < 1e-14);
    }

    #[test]
    fn fit_line_recovers_exact_lines(slope in -5.0f64..5.0, icept in -10.0f64..10.0, n in 2usize..12) {
        let pts: Vec<(f64, f64)> = (0..n).map(|i| (i as f64, slope * i as f64 + icept)).collect();
        let fit = fit_line(&pts).unwrap();
        prop_assert!((fit.slope - slope).abs() < 1e-10);
        prop_assert!((fit.intercept - icept).abs() < 1e-9);
    }
}
