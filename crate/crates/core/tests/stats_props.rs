use proptest::prelude::*;
use sdo_core::bench::{delta_j_rel, quantile, spearman, Strategy, Summary};

proptest! {
    #[test]
    fn delta_of_cold_against_itself_is_zero(j in 1e-12f64..1e6) {
        prop_assert_eq!(delta_j_rel(j, j), Some(0.0));
    }

    #[test]
    fn delta_sign_follows_improvement(j in 1e-6f64..1e3, f in 0.0f64..3.0) {
        let d = delta_j_rel(j, j * f).unwrap();
        prop_assert!((d - (1.0 - f)).abs() <= 1e-12);
    }

    #[test]
    fn quantiles_are_ordered(v in prop::collection::vec(-1e3f64..1e3, 1..50)) {
        let s = Summary::of(&v).unwrap();
        prop_assert!(s.worst <= s.q25 && s.q25 <= s.median && s.median <= s.q75);
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(quantile(&v, 0.0), Some(lo));
        prop_assert_eq!(s.count, v.len());
    }

    #[test]
    fn spearman_of_monotone_maps(v in prop::collection::hash_set(-1000i32..1000, 3..30)) {
        let a: Vec<f64> = v.iter().map(|&x| x as f64).collect();
        let up: Vec<f64> = a.iter().map(|x| x.powi(3)).collect();
        let down: Vec<f64> = a.iter().map(|x| -x.exp().min(1e300)).collect();
        prop_assert!((spearman(&a, &up).unwrap() - 1.0).abs() <= 1e-12);
        let r = spearman(&a, &down).unwrap();
        prop_assert!(r <= 0.0);
    }

    #[test]
    fn strategy_names_round_trip(p in 1u32..99) {
        let s = Strategy::Sdo { fraction: p as f64 / 100.0 };
        let back: Strategy = s.to_string().parse().unwrap();
        prop_assert_eq!(back.to_string(), s.to_string());
    }
}

#[test]
fn median_of_small_sets() {
    assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), Some(2.0));
    assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), Some(2.5));
    assert_eq!(quantile(&[], 0.5), None);
    assert_eq!(delta_j_rel(0.0, 1.0), None);
}
