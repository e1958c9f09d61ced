//! Property tests for the two-sample KS screen: symmetry, rank invariance,
//! bounds, and a seeded null-calibration check for the p-value
//! approximation.

use aldi_core::stats::ks_two_sample;
use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Samples on a 1/8 grid so that a strictly increasing transform applied in
/// floating point cannot collapse two distinct values or separate a tie.
fn sample_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, 1..80)
        .prop_map(|v| v.into_iter().map(|x| (x * 8.0).round() / 8.0).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ks_is_symmetric(a in sample_strategy(), b in sample_strategy()) {
        let ab = ks_two_sample(&a, &b).unwrap();
        let ba = ks_two_sample(&b, &a).unwrap();
        prop_assert_eq!(ab.d_value, ba.d_value);
        prop_assert_eq!(ab.p_value, ba.p_value);
        prop_assert_eq!((ab.n1, ab.n2), (ba.n2, ba.n1));
    }

    #[test]
    fn ks_depends_only_on_ranks(a in sample_strategy(), b in sample_strategy()) {
        // x^3 + 2x is strictly increasing, so it preserves every comparison
        // and every tie; the statistic and p-value must not move at all.
        let t = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| x * x * x + 2.0 * x).collect() };
        let raw = ks_two_sample(&a, &b).unwrap();
        let mapped = ks_two_sample(&t(&a), &t(&b)).unwrap();
        prop_assert_eq!(raw.d_value, mapped.d_value);
        prop_assert_eq!(raw.p_value, mapped.p_value);
    }

    #[test]
    fn ks_outputs_stay_in_unit_intervals(a in sample_strategy(), b in sample_strategy()) {
        let r = ks_two_sample(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.d_value), "d = {}", r.d_value);
        prop_assert!((0.0..=1.0).contains(&r.p_value), "p = {}", r.p_value);
    }

    #[test]
    fn ks_identical_samples_have_high_p(a in sample_strategy()) {
        let r = ks_two_sample(&a, &a).unwrap();
        prop_assert_eq!(r.d_value, 0.0);
        prop_assert_eq!(r.p_value, 1.0);
    }
}

/// Draws from the same distribution should rarely look significant: with a
/// sound p-value approximation, p < 0.05 happens for roughly 5% of null
/// pairs. The acceptance band is wide because the asymptotic formula is
/// conservative at these sample sizes.
#[test]
fn null_pairs_are_rarely_significant() {
    let n_pairs = 200;
    let n = 120;
    let mut significant = 0;
    for seed in 0..n_pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        if ks_two_sample(&a, &b).unwrap().p_value < 0.05 {
            significant += 1;
        }
    }
    let fraction = significant as f64 / n_pairs as f64;
    assert!(
        (0.01..=0.12).contains(&fraction),
        "null rejection rate {fraction} outside [0.01, 0.12]"
    );
}
