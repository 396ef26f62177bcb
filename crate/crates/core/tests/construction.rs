mod common;

use cmsa_bip::construction::{
    build_sampling_vector, construct_basic, construct_cp, ConstructionPlan, SamplingSource,
    SamplingVector,
};
use cmsa_bip::{BipBuilder, PropagationState, Sense};
use common::planted_instance;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn monte_carlo_marginal() {
    let inst = BipBuilder::new("two").vars(&[0.0, 0.0]).build().unwrap();
    let sv = SamplingVector::from_probs(vec![0.9, 0.1]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws = 100_000;
    let ones = (0..draws)
        .filter(|_| construct_basic(&inst, &sv, &mut rng).unwrap().values[0] == 1)
        .count();
    let freq = ones as f64 / f64::from(draws);
    assert!((freq - 0.9).abs() <= 0.01, "frequency {freq}");
}

#[test]
fn product_bernoulli_chi_square() {
    let inst = BipBuilder::new("three").vars(&[0.0; 3]).build().unwrap();
    let probs = [0.9, 0.3, 0.55];
    let sv = SamplingVector::from_probs(probs.to_vec()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let samples = 100_000;
    let mut counts = [0u32; 8];
    for _ in 0..samples {
        let v = construct_basic(&inst, &sv, &mut rng).unwrap().values;
        counts[usize::from(v[0]) | usize::from(v[1]) << 1 | usize::from(v[2]) << 2] += 1;
    }
    let stat: f64 = (0..8)
        .map(|k| {
            let p: f64 = (0..3)
                .map(|j| {
                    if (k >> j) & 1 == 1 {
                        probs[j]
                    } else {
                        1.0 - probs[j]
                    }
                })
                .product();
            let expected = p * f64::from(samples);
            (f64::from(counts[k]) - expected).powi(2) / expected
        })
        .sum();
    let p_value = 1.0 - ChiSquared::new(7.0).unwrap().cdf(stat);
    assert!(p_value > 0.001, "chi-square {stat}, p = {p_value}");
}

#[test]
fn incumbent_reproduced_with_expected_rate() {
    let inst = BipBuilder::new("five")
        .vars(&[1.0; 5])
        .row(&[(0, 1.0), (1, 1.0)], Sense::Ge, 1.0)
        .build()
        .unwrap();
    let incumbent = [1, 0, 1, 1, 0];
    let sv = build_sampling_vector(SamplingSource::Incumbent(&incumbent), 0.03).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let draws = 100_000;
    let hits = (0..draws)
        .filter(|_| construct_basic(&inst, &sv, &mut rng).unwrap().values == incumbent)
        .count();
    let rate = hits as f64 / f64::from(draws);
    assert!((rate - 0.97f64.powi(5)).abs() < 0.01, "rate {rate}");
}

#[test]
fn implication_chains_are_always_feasible() {
    // x_{j+1} >= x_j and x_0 + x_5 <= 1
    let mut b = BipBuilder::new("chain").vars(&[0.0; 6]);
    for j in 0..5 {
        b = b.row(&[(j + 1, 1.0), (j, -1.0)], Sense::Ge, 0.0);
    }
    let inst = b
        .row(&[(0, 1.0), (5, 1.0)], Sense::Le, 1.0)
        .build()
        .unwrap();
    let mut state = PropagationState::new(&inst);
    let sv = SamplingVector::from_probs(vec![0.5; 6]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..2000 {
        let plan = ConstructionPlan::random(6, true, &mut rng);
        assert!(
            construct_cp(&sv, &plan, &mut state, &mut rng)
                .unwrap()
                .feasible
        );
    }
}

#[test]
fn double_conflict_falls_back_and_restores_state() {
    // propagation alone cannot see that x0 + x1 + x2 = 1.5 is impossible
    let inst = BipBuilder::new("patho")
        .vars(&[0.0; 4])
        .row(&[(0, 1.0), (1, 1.0), (2, 1.0)], Sense::Eq, 1.5)
        .build()
        .unwrap();
    let mut state = PropagationState::new(&inst);
    assert!(state.is_consistent());
    let entry = state.snapshot();
    let sv = SamplingVector::from_probs(vec![0.5; 4]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..500 {
        let plan = ConstructionPlan::random(4, true, &mut rng);
        let s = construct_cp(&sv, &plan, &mut state, &mut rng).unwrap();
        assert!(!s.feasible);
        assert_eq!(state.snapshot(), entry);
    }
}

#[test]
fn cp_feasible_fraction_at_least_basic() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let inst = planted_instance(&mut rng, 20, 12);
    let mut state = PropagationState::new(&inst);
    let entry = state.snapshot();
    let sv = SamplingVector::from_probs(vec![0.5; 20]).unwrap();
    let (mut basic, mut cp) = (0, 0);
    for seed in 0..10_000u64 {
        let mut r1 = ChaCha8Rng::seed_from_u64(seed);
        basic += usize::from(construct_basic(&inst, &sv, &mut r1).unwrap().feasible);
        let mut r2 = ChaCha8Rng::seed_from_u64(seed);
        let plan = ConstructionPlan::random(20, true, &mut r2);
        cp += usize::from(
            construct_cp(&sv, &plan, &mut state, &mut r2)
                .unwrap()
                .feasible,
        );
    }
    assert_eq!(state.snapshot(), entry);
    assert!(cp >= basic, "cp {cp} < basic {basic}");
}
