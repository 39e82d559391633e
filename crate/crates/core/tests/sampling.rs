mod common;

use common::{inclusion_probabilities, ir_by_sets, median};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use randprune::mask::{
    build_ensemble_mask, derive_sampling_probs, deterministic_topk_mask, introduced_randomness,
    sample_without_replacement, BitMask, ProbVector, SamplingConfig,
};
use randprune::rng::stream;

fn empirical_inclusion(p: &ProbVector, k: usize, draws: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, &[]);
    let mut counts = vec![0usize; p.len()];
    for _ in 0..draws {
        for i in sample_without_replacement(p, k, &mut rng).unwrap() {
            counts[i] += 1;
        }
    }
    counts
        .into_iter()
        .map(|c| c as f64 / draws as f64)
        .collect()
}

#[test]
fn oracle_sanity() {
    // k = 1 is just the distribution; k = n includes everything.
    let p = [0.5, 0.25, 0.25];
    assert_eq!(inclusion_probabilities(&p, 1), p.to_vec());
    assert!(inclusion_probabilities(&p, 3)
        .iter()
        .all(|&v| (v - 1.0).abs() < 1e-12));
    // P(0 in 2 draws) = 1 - P(first two are {1,2}) = 1 - 2 * 0.25 * (0.25 / 0.75)
    let two = inclusion_probabilities(&p, 2);
    assert!((two[0] - (1.0 - 2.0 * 0.25 * (0.25 / 0.75))).abs() < 1e-12);
    assert!((two.iter().sum::<f64>() - 2.0).abs() < 1e-12);
}

#[test]
fn sampler_matches_enumeration_on_three_items() {
    let p = ProbVector::from_weights(&[0.5, 0.25, 0.25]).unwrap();
    let exact = inclusion_probabilities(p.probs(), 2);
    let seen = empirical_inclusion(&p, 2, 200_000, 77);
    for (i, (e, s)) in exact.iter().zip(&seen).enumerate() {
        assert!((e - s).abs() < 0.005, "item {i}: exact {e}, empirical {s}");
    }
}

#[test]
fn sampler_matches_enumeration_with_zero_mass_items() {
    let p = ProbVector::from_weights(&[0.0, 3.0, 1.0, 0.0, 0.5, 2.0]).unwrap();
    let exact = inclusion_probabilities(p.probs(), 3);
    let seen = empirical_inclusion(&p, 3, 200_000, 5);
    assert_eq!(seen[0], 0.0);
    assert_eq!(seen[3], 0.0);
    for (e, s) in exact.iter().zip(&seen) {
        assert!((e - s).abs() < 0.005);
    }
}

fn normal_weights(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, &[]);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn median_ir(w: &[f64], k: usize, masks: u32, cfg: &SamplingConfig, seeds: u64) -> f64 {
    let det = deterministic_topk_mask(w, k).unwrap();
    let irs = (0..seeds)
        .map(|s| {
            let ens = build_ensemble_mask(w, k, masks, cfg, &mut stream(s, &[1])).unwrap();
            introduced_randomness(&det, &ens.mask).unwrap()
        })
        .collect();
    median(irs)
}

#[test]
fn larger_ensembles_introduce_less_randomness() {
    let w = normal_weights(1000, 123);
    let cfg = SamplingConfig {
        exponent: 5,
        support_multiplier: 2.0,
        ..Default::default()
    };
    let one = median_ir(&w, 500, 1, &cfg, 50);
    let many = median_ir(&w, 500, 64, &cfg, 50);
    assert!(many <= one, "M=64 median ir {many} > M=1 median ir {one}");
}

#[test]
fn ensemble_limit_is_the_deterministic_mask() {
    let w = normal_weights(60, 4);
    let cfg = SamplingConfig {
        exponent: 5,
        support_multiplier: 2.0,
        ..Default::default()
    };
    let ens = build_ensemble_mask(&w, 20, 4000, &cfg, &mut stream(8, &[])).unwrap();
    let det = deterministic_topk_mask(&w, 20).unwrap();
    assert!(introduced_randomness(&det, &ens.mask).unwrap() < 0.1);
}

#[test]
fn ir_agrees_with_set_arithmetic() {
    let mut rng = stream(31, &[]);
    for _ in 0..200 {
        let c = rng.random_range(2..40);
        let k = rng.random_range(1..c);
        let pick = |rng: &mut randprune::rng::SeededRng| {
            let mut idx: Vec<usize> = (0..c).collect();
            rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), rng);
            BitMask::from_indices(c, &idx[..k])
        };
        let (a, b) = (pick(&mut rng), pick(&mut rng));
        let ir = introduced_randomness(&a, &b).unwrap();
        let oracle = ir_by_sets(a.bits(), b.bits());
        assert_eq!(ir.to_bits(), oracle.to_bits(), "c={c} k={k}");
    }
}

fn weights_strategy() -> impl Strategy<Value = (Vec<f64>, usize)> {
    (2usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(prop_oneof![3 => -5.0f64..5.0, 1 => Just(0.0)], n),
            1usize..=n,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn masks_have_exact_sparsity_and_avoid_zeros(
        (w, k) in weights_strategy(),
        masks in 1u32..6,
        exponent in 1u32..6,
        r in 1.0f64..3.0,
        seed: u64,
    ) {
        let cfg = SamplingConfig { exponent, support_multiplier: r, ..Default::default() };
        let nonzero = w.iter().filter(|&&v| v != 0.0).count();
        let det = deterministic_topk_mask(&w, k).unwrap();
        prop_assert_eq!(det.retained(), k);
        match build_ensemble_mask(&w, k, masks, &cfg, &mut stream(seed, &[])) {
            Ok(ens) => {
                prop_assert!(nonzero >= k);
                prop_assert_eq!(ens.mask.retained(), k);
                prop_assert_eq!(ens.counts.counts.iter().map(|&c| c as u64).sum::<u64>(), masks as u64 * k as u64);
                for i in ens.mask.retained_indices() {
                    prop_assert!(w[i] != 0.0);
                }
                prop_assert!(ens.counts.counts.iter().all(|&c| c <= masks));
                let again = build_ensemble_mask(&w, k, masks, &cfg, &mut stream(seed, &[])).unwrap();
                prop_assert_eq!(again, ens.clone());
                if k < w.len() {
                    let ir = introduced_randomness(&det, &ens.mask).unwrap();
                    prop_assert!(ir >= 0.0);
                    prop_assert_eq!(ir == 0.0, det == ens.mask);
                }
            }
            Err(_) => prop_assert!(nonzero < k),
        }
    }

    #[test]
    fn probabilities_are_normalized((w, k) in weights_strategy(), exponent in 1u32..8, r in 1.0f64..4.0) {
        let cfg = SamplingConfig { exponent, support_multiplier: r, ..Default::default() };
        if let Ok(p) = derive_sampling_probs(&w, k, &cfg) {
            prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.support().len() >= k);
            for (i, &q) in p.probs().iter().enumerate() {
                prop_assert!(q >= 0.0);
                prop_assert_eq!(q > 0.0, p.support().contains(&i));
                if w[i] == 0.0 {
                    prop_assert_eq!(q, 0.0);
                }
            }
        }
    }

    #[test]
    fn nested_stages_only_shrink((w, k) in weights_strategy(), seed: u64) {
        // stage t keeps k, stage t+1 keeps fewer, sampling from the pruned weights
        let cfg = SamplingConfig::default();
        let first = build_ensemble_mask(&w, k, 3, &cfg, &mut stream(seed, &[0]));
        if let Ok(first) = first {
            let mut pruned = w.clone();
            first.mask.apply(&mut pruned);
            let k2 = k.div_ceil(2);
            if let Ok(second) = build_ensemble_mask(&pruned, k2, 3, &cfg, &mut stream(seed, &[1])) {
                for i in second.mask.retained_indices() {
                    prop_assert!(first.mask.get(i));
                }
            }
        }
    }
}
