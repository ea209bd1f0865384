//! Reproducible Monte Carlo plumbing: per-replicate seed streams and running
//! moment summaries.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Seed for replicate `k` of a run with base seed `base`.
pub fn replicate_seed(base: u64, k: u64) -> u64 {
    base ^ k
}

pub fn replicate_rng(base: u64, k: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(replicate_seed(base, k))
}

/// Runs `f(k, rng_k)` for `k in 0..replicates` in parallel; results come back
/// in replicate order, independent of the thread count.
pub fn run_replicates<T, F>(replicates: usize, base_seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> T + Sync,
{
    (0..replicates)
        .into_par_iter()
        .map(|k| {
            let mut rng = replicate_rng(base_seed, k as u64);
            f(k, &mut rng)
        })
        .collect()
}

/// Running mean and standard error (Welford).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MeanSe {
    n: u64,
    mean: f64,
    m2: f64,
}

impl MeanSe {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        let mut s = Self::default();
        xs.iter().for_each(|&x| s.push(x));
        s
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            f64::NAN
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }

    /// `|mean - target| <= k_se * SE`.
    pub fn brackets(&self, target: f64, k_se: f64) -> bool {
        (self.mean - target).abs() <= k_se * self.std_error()
    }
}
