use emos_core::inference::{dm_test_values, stationary_bootstrap_indices};
use emos_core::{stationary_bootstrap_ci, Functional, ScoreSeries};
use chrono::NaiveDate;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn series(values: Vec<f64>) -> ScoreSeries {
    ScoreSeries::daily("x", NaiveDate::from_ymd_opt(2016, 7, 1).unwrap(), values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dm_is_antisymmetric(
        pairs in prop::collection::vec((0.0..5.0f64, 0.0..5.0f64), 10..80),
        lag in 0usize..5,
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let ab = dm_test_values(&a, &b, lag).unwrap();
        let ba = dm_test_values(&b, &a, lag).unwrap();
        prop_assert_eq!(ab.statistic, -ba.statistic);
        prop_assert_eq!(ab.p_value, ba.p_value);
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
    }

    #[test]
    fn resamples_keep_length(n in 1usize..200, block in 1.0..20.0f64, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx = stationary_bootstrap_indices(n, block, &mut rng);
        prop_assert_eq!(idx.len(), n);
        prop_assert!(idx.iter().all(|&i| i < n));
    }

    #[test]
    fn bootstrap_is_reproducible_and_nested(
        values in prop::collection::vec(-3.0..3.0f64, 5..60),
        seed in any::<u64>(),
        block in 1.0..6.0f64,
    ) {
        let s = series(values);
        let a = stationary_bootstrap_ci(Functional::Mean(&s), 200, block, 0.95, seed).unwrap();
        let b = stationary_bootstrap_ci(Functional::Mean(&s), 200, block, 0.95, seed).unwrap();
        prop_assert_eq!(&a, &b);
        let wide = stationary_bootstrap_ci(Functional::Mean(&s), 200, block, 0.99, seed).unwrap();
        prop_assert!(wide.lower <= a.lower && a.upper <= wide.upper);
        prop_assert!(a.lower <= a.point && a.point <= a.upper);
    }
}
