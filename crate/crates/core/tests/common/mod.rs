#![allow(dead_code)]

use cmsa_bip::{BipBuilder, BipInstance, Sense};
use rand::Rng;

/// Random BIP made feasible by a hidden assignment; integer data.
pub fn planted_instance<R: Rng>(rng: &mut R, n: usize, m: usize) -> BipInstance {
    let hidden: Vec<u8> = (0..n).map(|_| rng.gen_range(0..=1)).collect();
    let costs: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(-10..=10))).collect();
    let mut b = BipBuilder::new("planted").vars(&costs);
    for _ in 0..m {
        let mut entries = Vec::new();
        for j in 0..n {
            if rng.gen_bool(0.4) {
                let a = rng.gen_range(1..=5) * if rng.gen_bool(0.5) { 1 } else { -1 };
                entries.push((j, f64::from(a)));
            }
        }
        if entries.is_empty() {
            entries.push((rng.gen_range(0..n), 1.0));
        }
        let act: f64 = entries.iter().map(|&(j, a)| a * f64::from(hidden[j])).sum();
        let slack = f64::from(rng.gen_range(0..=3));
        let (sense, rhs) = match rng.gen_range(0..5) {
            0 | 1 => (Sense::Le, act + slack),
            2 | 3 => (Sense::Ge, act - slack),
            _ => (Sense::Eq, act),
        };
        b = b.row(&entries, sense, rhs);
    }
    b.build().unwrap()
}

/// Random BIP that need not be feasible.
pub fn random_instance<R: Rng>(rng: &mut R, n: usize, m: usize) -> BipInstance {
    let costs: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(-5..=5))).collect();
    let mut b = BipBuilder::new("random").vars(&costs);
    for _ in 0..m {
        let mut entries = Vec::new();
        for j in 0..n {
            if rng.gen_bool(0.35) {
                entries.push((j, f64::from(rng.gen_range(-4..=4))));
            }
        }
        entries.retain(|e| e.1 != 0.0);
        if entries.is_empty() {
            entries.push((rng.gen_range(0..n), 1.0));
        }
        let total: f64 = entries.iter().map(|e| e.1.abs()).sum();
        let rhs = f64::from(rng.gen_range(-(total as i32) / 2..=(total as i32) / 2 + 1));
        let sense = [Sense::Le, Sense::Ge, Sense::Eq][rng.gen_range(0..3)];
        b = b.row(&entries, sense, rhs);
    }
    b.build().unwrap()
}

pub fn assignment(n: usize, mask: u64) -> Vec<u8> {
    (0..n).map(|j| ((mask >> j) & 1) as u8).collect()
}

/// All feasible assignments as bit masks.
pub fn feasible_masks(instance: &BipInstance) -> Vec<u64> {
    let n = instance.n();
    (0..1u64 << n)
        .filter(|&mask| instance.evaluate(&assignment(n, mask)).unwrap().feasible)
        .collect()
}

/// Minimum normalized objective, optionally under forcings.
pub fn brute_force_optimum(instance: &BipInstance, forced: &[(usize, u8)]) -> Option<f64> {
    let n = instance.n();
    (0..1u64 << n)
        .map(|mask| assignment(n, mask))
        .filter(|v| forced.iter().all(|&(j, x)| v[j] == x))
        .map(|v| instance.evaluate(&v).unwrap())
        .filter(|s| s.feasible)
        .map(|s| s.objective)
        .min_by(f64::total_cmp)
}

pub fn knapsack() -> BipInstance {
    BipBuilder::new("knap")
        .vars(&[-3.0, -4.0, -5.0])
        .row(&[(0, 2.0), (1, 3.0), (2, 4.0)], Sense::Le, 6.0)
        .build()
        .unwrap()
}
