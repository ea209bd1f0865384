//! Random chain instances for property checks and verification runs.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::chain::{stationary_distribution, BinaryStationarySpec, HmmSpec, Matrix, Transitions};

/// Stationary binary chain with `|r| <= r_max` and every transition
/// probability at least `min_entry`.
pub fn binary_stationary<R: Rng + ?Sized>(rng: &mut R, r_max: f64, min_entry: f64) -> BinaryStationarySpec {
    loop {
        let r = rng.random_range(-r_max..=r_max);
        let p1 = rng.random_range(0.15..0.85);
        let p01 = (1.0 - r) * p1;
        let p10 = (1.0 - r) * (1.0 - p1);
        let b = BinaryStationarySpec { p01, p10 };
        if b.min_transition() >= min_entry {
            return b;
        }
    }
}

/// A stochastic row with every entry at least `floor`.
pub fn floored_row<R: Rng + ?Sized>(rng: &mut R, k: usize, floor: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = w.iter().sum();
    let free = 1.0 - k as f64 * floor;
    let mut row: Vec<f64> = w.iter().map(|x| floor + free * x / total).collect();
    // Push rounding into the largest entry so the row sums to one.
    let err = 1.0 - row.iter().sum::<f64>();
    let i = (0..k).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
    row[i] += err;
    row
}

pub fn floored_matrix<R: Rng + ?Sized>(rng: &mut R, k: usize, floor: f64) -> Matrix {
    let rows: Vec<f64> = (0..k).flat_map(|_| floored_row(rng, k, floor)).collect();
    Matrix::from_row_slice(k, k, &rows)
}

fn random_partition<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Vec<bool> {
    loop {
        let h1: Vec<bool> = (0..k).map(|_| rng.random_bool(0.5)).collect();
        if h1.iter().any(|&b| b) && !h1.iter().all(|&b| b) {
            return h1;
        }
    }
}

fn names(k: usize) -> Vec<String> {
    (0..k).map(|i| i.to_string()).collect()
}

/// Stationary K-state chain started in its stationary law, κ = 1.
pub fn stationary_spec<R: Rng + ?Sized>(rng: &mut R, k: usize, floor: f64) -> HmmSpec {
    let q = floored_matrix(rng, k, floor);
    let pi = stationary_distribution(&q).expect("floored chain is irreducible");
    HmmSpec {
        states: names(k),
        h1: random_partition(rng, k),
        initial: pi.iter().copied().collect(),
        transitions: Transitions::Stationary(q),
        kappa: 1,
        phi_star: floor,
    }
}

/// Time-varying chain with one stored matrix per step of `[lo, hi]`. The law
/// at index 0 is obtained by pushing a random positive law at `lo` forward,
/// so backward propagation from 0 is feasible on the whole window in exact
/// arithmetic. Fast-mixing matrices amplify rounding in that inversion by
/// roughly `1/|λ₂|` per step, so keep `lo` modest or use
/// [`persistent_binary_time_varying`] for long backward windows.
pub fn time_varying_spec<R: Rng + ?Sized>(rng: &mut R, k: usize, lo: i64, hi: i64, floor: f64) -> HmmSpec {
    assert!(lo <= 0 && hi > lo);
    let matrices: Vec<Matrix> = (lo..hi).map(|_| floored_matrix(rng, k, floor)).collect();
    from_matrices(rng, k, lo, matrices, floor)
}

/// Binary time-varying chain whose steps all have `r = 1 - p01 - p10` in
/// `[r_min, 1 - 2 floor]`, which keeps backward propagation of the marginal
/// well conditioned over long windows.
pub fn persistent_binary_time_varying<R: Rng + ?Sized>(rng: &mut R, lo: i64, hi: i64, r_min: f64, floor: f64) -> HmmSpec {
    assert!(lo <= 0 && hi > lo);
    assert!(r_min > 0.0 && r_min < 1.0 - 2.0 * floor);
    let matrices: Vec<Matrix> = (lo..hi)
        .map(|_| loop {
            let p01 = rng.random_range(floor..0.5);
            let p10 = rng.random_range(floor..0.5);
            if 1.0 - p01 - p10 >= r_min {
                break Matrix::from_row_slice(2, 2, &[1.0 - p01, p01, p10, 1.0 - p10]);
            }
        })
        .collect();
    from_matrices(rng, 2, lo, matrices, floor)
}

fn from_matrices<R: Rng + ?Sized>(rng: &mut R, k: usize, lo: i64, matrices: Vec<Matrix>, floor: f64) -> HmmSpec {
    let mut law = nalgebra::DVector::from_vec(floored_row(rng, k, 0.1 / k as f64));
    for m in &matrices[..(-lo) as usize] {
        law = m.transpose() * law;
    }
    let s = law.sum();
    law /= s;
    HmmSpec {
        states: names(k),
        h1: random_partition(rng, k),
        initial: law.iter().copied().collect(),
        transitions: Transitions::TimeVarying { offset: lo, matrices },
        kappa: 1,
        phi_star: floor,
    }
}
