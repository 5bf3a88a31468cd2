mod support;

use proptest::prelude::*;
use support::props::{self, strategies};

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn masks_sum_to_one((seed, n, d, k, scale) in strategies::masks()) {
        props::mask_sum_to_one(seed, n, d, k, scale)?;
    }

    #[test]
    fn masking_conserves_mixture_magnitude((seed, samples, k) in strategies::conservation()) {
        props::mask_conservation(seed, samples, k)?;
    }

    #[test]
    fn stft_round_trip((seed, samples, frame_ms, overlap) in strategies::cola()) {
        props::cola_round_trip(seed, samples, frame_ms, overlap)?;
    }

    #[test]
    fn kmeans_objective_is_monotone((seed, n, d, k) in strategies::kmeans()) {
        props::kmeans_monotone(seed, n, d, k)?;
    }

    #[test]
    fn si_sdr_is_scale_invariant((seed, n, a, b) in strategies::si_sdr()) {
        props::si_sdr_scale_invariant(seed, n, a, b)?;
    }

    #[test]
    fn pit_ignores_source_order((seed, n, k) in strategies::pit()) {
        props::pit_permutation_invariant(seed, n, k)?;
    }

    #[test]
    fn indicator_popcounts_are_exact((seed, samples, k, fraction) in strategies::popcount()) {
        props::popcount_exact(seed, samples, k, fraction)?;
    }
}
