mod common;

use std::time::{Duration, Instant};

use cmsa_bip::subsolver::{
    initial_heuristic, search_restricted, solve_restricted, RestrictedProblem,
};
use common::{brute_force_optimum, knapsack, planted_instance, random_instance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BUDGET: Duration = Duration::from_secs(10);

#[test]
fn knapsack_restrictions_match_enumeration() {
    let inst = knapsack();
    for forced in [vec![], vec![(2, 0)], vec![(0, 0)], vec![(1, 1), (2, 1)]] {
        let rp = RestrictedProblem::with_forced(&inst, &forced).unwrap();
        let got = solve_restricted(&rp, BUDGET, None)
            .unwrap()
            .map(|s| s.objective);
        assert_eq!(
            got,
            brute_force_optimum(&inst, &forced),
            "forced {forced:?}"
        );
    }
}

#[test]
fn exact_on_random_restrictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..300 {
        let n = rng.gen_range(4..=16);
        let m = rng.gen_range(2..=10);
        let inst = if trial % 2 == 0 {
            planted_instance(&mut rng, n, m)
        } else {
            random_instance(&mut rng, n, m)
        };
        let mut forced: Vec<(usize, u8)> = Vec::new();
        for j in 0..n {
            if rng.gen_bool(0.25) {
                forced.push((j, rng.gen_range(0..=1)));
            }
        }
        let rp = RestrictedProblem::with_forced(&inst, &forced).unwrap();
        let mut seen = Vec::new();
        let out = search_restricted(&rp, Instant::now() + BUDGET, None, &mut |s| {
            seen.push(s.clone())
        });
        assert!(out.complete);
        assert_eq!(
            out.best.as_ref().map(|s| s.objective),
            brute_force_optimum(&inst, &forced),
            "trial {trial}"
        );
        for s in &seen {
            assert!(s.feasible && rp.admits(&s.values));
        }
        assert!(seen.windows(2).all(|w| w[1].objective < w[0].objective));
    }
}

#[test]
fn incumbent_is_never_beaten_downwards() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let inst = planted_instance(&mut rng, 10, 6);
        let rp = RestrictedProblem::with_forced(&inst, &[]).unwrap();
        let opt = solve_restricted(&rp, BUDGET, None).unwrap().unwrap();
        let out = solve_restricted(&rp, BUDGET, Some(&opt)).unwrap().unwrap();
        assert!(out.objective <= opt.objective);
    }
}

#[test]
fn diving_never_returns_infeasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut found = 0;
    let trials = 200;
    for _ in 0..trials {
        let n = rng.gen_range(4..=14);
        let m = rng.gen_range(2..=8);
        let inst = planted_instance(&mut rng, n, m);
        if let Some(s) = initial_heuristic(&inst, BUDGET).unwrap() {
            assert!(inst.evaluate(&s.values).unwrap().feasible);
            found += 1;
        }
    }
    println!("diving found a feasible solution on {found}/{trials} planted instances");
}
