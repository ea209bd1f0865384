//! Oracle false-discovery-rate control on posterior null probabilities.
//!
//! `q_i` is the posterior probability that null `i` is true. The procedure
//! sorts the `q_i`, takes the largest `r` whose prefix sum is at most `α r`,
//! and rejects the `r` smallest. Among all rejection sets whose mean `q` is at
//! most `α`, this maximizes `R - Σ q`, the expected number of true rejections.

use std::ops::{Add, Sub};

use crate::chain::ValidatedSpec;
use crate::engine::{PosteriorResult, Scenario};
use crate::error::{Error, Result};
use crate::mc::run_replicates;
use crate::models::InteractionModel;
use crate::trajectory::simulate_with_rng;

/// Exhaustive search limit.
pub const BRUTE_FORCE_MAX: usize = 20;

/// Units per 1 in the scaled-integer representation.
pub const MICRO: i64 = 1_000_000;

/// Arithmetic the step-up rule needs; implemented for `f64` and for exact
/// scaled integers.
pub trait Amount: Copy + PartialOrd + Add<Output = Self> + Sub<Output = Self> {
    fn zero() -> Self;
    fn times(self, j: usize) -> Self;
}

impl Amount for f64 {
    fn zero() -> Self {
        0.0
    }
    fn times(self, j: usize) -> Self {
        self * j as f64
    }
}

impl Amount for i64 {
    fn zero() -> Self {
        0
    }
    fn times(self, j: usize) -> Self {
        self * j as i64
    }
}

/// Indices sorted by `(q, index)`.
fn order<T: Amount>(q: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..q.len()).collect();
    idx.sort_by(|&a, &b| q[a].partial_cmp(&q[b]).expect("comparable q").then(a.cmp(&b)));
    idx
}

/// Rejected indices (ascending) of the two-step rule.
pub fn step_up<T: Amount>(q: &[T], alpha: T) -> Vec<usize> {
    let idx = order(q);
    let mut sum = T::zero();
    let mut r = 0;
    for (j, &i) in idx.iter().enumerate() {
        sum = sum + q[i];
        if sum <= alpha.times(j + 1) {
            r = j + 1;
        }
    }
    let mut rejected = idx[..r].to_vec();
    rejected.sort_unstable();
    rejected
}

/// Best rejection set under `Σ_S q <= α |S|` and its objective `|S| - Σ_S q`
/// (`one` is the representation of 1).
pub fn brute_force_search<T: Amount>(q: &[T], alpha: T, one: T) -> Result<(Vec<usize>, T)> {
    let n = q.len();
    if n > BRUTE_FORCE_MAX {
        return Err(Error::TooManyHypotheses { n, limit: BRUTE_FORCE_MAX });
    }
    let mut best_mask = 0u32;
    let mut best = T::zero();
    for mask in 1u32..(1u32 << n) {
        let mut sum = T::zero();
        let mut size = 0;
        for (i, &qi) in q.iter().enumerate() {
            if mask >> i & 1 == 1 {
                sum = sum + qi;
                size += 1;
            }
        }
        if sum <= alpha.times(size) {
            let obj = one.times(size) - sum;
            if obj > best {
                best = obj;
                best_mask = mask;
            }
        }
    }
    let set = (0..n).filter(|&i| best_mask >> i & 1 == 1).collect();
    Ok((set, best))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestOutcome {
    pub alpha: f64,
    pub q: Vec<f64>,
    /// Ascending indices.
    pub rejected: Vec<usize>,
    /// Mean `q` over the rejected set, 0 when nothing is rejected.
    pub expected_fdr: f64,
    /// `R - Σ_{rejected} q_i`.
    pub expected_true_rejections: f64,
}

fn check_inputs(q: &[f64], alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    if let Some((index, &value)) = q.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidQ { index, value });
    }
    Ok(())
}

pub fn oracle_bh(q: &[f64], alpha: f64) -> Result<TestOutcome> {
    check_inputs(q, alpha)?;
    let rejected = step_up(q, alpha);
    let sum: f64 = rejected.iter().map(|&i| q[i]).sum();
    let r = rejected.len();
    Ok(TestOutcome {
        alpha,
        q: q.to_vec(),
        expected_fdr: if r == 0 { 0.0 } else { sum / r as f64 },
        expected_true_rejections: r as f64 - sum,
        rejected,
    })
}

pub fn brute_force_optimal(q: &[f64], alpha: f64) -> Result<(Vec<usize>, f64)> {
    check_inputs(q, alpha)?;
    brute_force_search(q, alpha, 1.0)
}

/// `q` in units of `1e-6` when every entry has at most six decimals.
pub fn to_micro(q: &[f64]) -> Option<Vec<i64>> {
    q.iter()
        .map(|&v| {
            let s = v * MICRO as f64;
            let r = s.round();
            ((s - r).abs() < 1e-6).then_some(r as i64)
        })
        .collect()
}

/// Exact-arithmetic variants on scaled integers.
pub fn oracle_bh_micro(q: &[i64], alpha: i64) -> (Vec<usize>, i64) {
    let rejected = step_up(q, alpha);
    let obj = MICRO * rejected.len() as i64 - rejected.iter().map(|&i| q[i]).sum::<i64>();
    (rejected, obj)
}

pub fn brute_force_optimal_micro(q: &[i64], alpha: i64) -> Result<(Vec<usize>, i64)> {
    brute_force_search(q, alpha, MICRO)
}

/// Realized outcome of a rejection set against the simulated truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Realized {
    pub rejections: usize,
    pub false_rejections: usize,
    /// `V / max(R, 1)`.
    pub fdp: f64,
    pub true_rejections: usize,
}

pub fn evaluate_against_truth(rejected: &[usize], eta: &[usize], is_h1: impl Fn(usize) -> bool) -> Realized {
    let r = rejected.len();
    let v = rejected.iter().filter(|&&i| !is_h1(eta[i])).count();
    Realized { rejections: r, false_rejections: v, fdp: v as f64 / r.max(1) as f64, true_rejections: r - v }
}

/// `1 / (1 + e^x)` without overflow.
fn null_probability(log_odds: f64) -> f64 {
    if log_odds > 0.0 {
        let e = (-log_odds).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + log_odds.exp())
    }
}

/// Which likelihood ratio feeds the q-values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Flr,
    Llr,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Flr => "FLR",
            Method::Llr => "LLR",
        }
    }
}

/// `q_t` for every index of a posterior window, ordered by index.
pub fn q_values(post: &PosteriorResult, method: Method) -> Vec<f64> {
    post.entries
        .iter()
        .map(|e| {
            null_probability(match method {
                Method::Flr => e.log_flr,
                Method::Llr => e.log_llr,
            })
        })
        .collect()
}

/// One replicate of the FLR/LLR comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub flr_rejected: Vec<usize>,
    pub llr_rejected: Vec<usize>,
    pub flr: Realized,
    pub llr: Realized,
}

#[derive(Clone, Copy, Debug)]
pub struct ComparisonConfig {
    pub epsilon: f64,
    pub m: usize,
    pub n: usize,
    pub alpha: f64,
    pub replicates: usize,
    pub seed: u64,
}

/// Simulates `replicates` windows and runs the oracle procedure on every
/// index of each window, once with full and once with local ratios.
pub fn compare_methods(
    spec: &ValidatedSpec,
    model: &dyn InteractionModel,
    cfg: &ComparisonConfig,
) -> Result<Vec<ReplicateRecord>> {
    run_replicates(cfg.replicates, cfg.seed, |k, rng| -> Result<ReplicateRecord> {
        let traj = simulate_with_rng(spec, model, cfg.epsilon, cfg.m, cfg.n, None, rng)?;
        let post = Scenario::new(spec, model, &traj)?.posterior(cfg.epsilon, cfg.m, cfg.n)?;
        let flr = oracle_bh(&q_values(&post, Method::Flr), cfg.alpha)?.rejected;
        let llr = oracle_bh(&q_values(&post, Method::Llr), cfg.alpha)?.rejected;
        let h1 = |a: usize| spec.is_h1(a);
        Ok(ReplicateRecord {
            replicate: k,
            flr: evaluate_against_truth(&flr, traj.eta(), h1),
            llr: evaluate_against_truth(&llr, traj.eta(), h1),
            flr_rejected: flr,
            llr_rejected: llr,
        })
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        let q = [0.01, 0.05, 0.2, 0.5];
        let out = oracle_bh(&q, 0.1).unwrap();
        assert_eq!(out.rejected, vec![0, 1, 2]);
        assert!((out.expected_fdr - 0.26 / 3.0).abs() < 1e-15);
        assert!((out.expected_true_rejections - 2.74).abs() < 1e-12);
        let (set, best) = brute_force_optimal(&q, 0.1).unwrap();
        assert_eq!(set, vec![0, 1, 2]);
        assert!((best - out.expected_true_rejections).abs() < 1e-12);
    }

    #[test]
    fn boundary_cases() {
        let all_zero = oracle_bh(&[0.0; 5], 0.05).unwrap();
        assert_eq!(all_zero.rejected.len(), 5);
        assert_eq!(all_zero.expected_fdr, 0.0);
        assert!(oracle_bh(&[0.3, 0.6, 0.9], 0.2).unwrap().rejected.is_empty());
        // Mean exactly at the level qualifies.
        assert_eq!(oracle_bh_micro(&[100_000], 100_000).0, vec![0]);
        assert_eq!(brute_force_optimal_micro(&[100_000], 100_000).unwrap().1, 900_000);
        assert!(matches!(oracle_bh(&[0.2, 1.3], 0.1), Err(Error::InvalidQ { index: 1, .. })));
        assert!(matches!(oracle_bh(&[0.2], 1.0), Err(Error::InvalidAlpha(_))));
        assert!(matches!(brute_force_optimal(&[0.1; 21], 0.1), Err(Error::TooManyHypotheses { .. })));
    }

    #[test]
    fn ties_at_the_cut_keep_the_level() {
        // Prefix sums 0.0, 0.5, 1.0: r = 2, and the tied third value would
        // push the mean above 0.3.
        let q = [0.0, 0.5, 0.5];
        let out = oracle_bh(&q, 0.3).unwrap();
        assert_eq!(out.rejected, vec![0, 1]);
        assert!(out.expected_fdr <= 0.3);
    }

    #[test]
    fn realized_counts() {
        let eta = [0, 1, 1, 0];
        let h1 = |a: usize| a == 1;
        assert_eq!(
            evaluate_against_truth(&[], &eta, h1),
            Realized { rejections: 0, false_rejections: 0, fdp: 0.0, true_rejections: 0 }
        );
        assert_eq!(evaluate_against_truth(&[0, 3], &eta, h1).fdp, 1.0);
        let r = evaluate_against_truth(&[0, 1, 2], &eta, h1);
        assert_eq!((r.rejections, r.false_rejections, r.true_rejections), (3, 1, 2));
    }

    #[test]
    fn null_probability_is_stable() {
        assert_eq!(null_probability(0.0), 0.5);
        assert!(null_probability(800.0) >= 0.0 && null_probability(800.0) < 1e-300);
        assert_eq!(null_probability(-800.0), 1.0);
    }

    #[test]
    fn realized_fdr_stays_near_level() {
        use crate::chain::BinaryStationarySpec;
        use crate::mc::MeanSe;
        let spec = BinaryStationarySpec::symmetric(0.5).unwrap().validated().unwrap();
        let model = crate::models::ModelSelector::TranslationGaussian.build().unwrap();
        let cfg = ComparisonConfig { epsilon: 1.0, m: 10, n: 10, alpha: 0.1, replicates: 600, seed: 9 };
        let recs = compare_methods(&spec, model.as_ref(), &cfg).unwrap();
        for pick in [|r: &ReplicateRecord| r.flr.fdp, |r: &ReplicateRecord| r.llr.fdp] {
            let fdp = MeanSe::from_slice(&recs.iter().map(pick).collect::<Vec<_>>());
            assert!(fdp.mean() <= 0.1 + 3.0 * fdp.std_error(), "{fdp:?}");
        }
    }

    fn micro_q(n: usize) -> impl Strategy<Value = Vec<i64>> {
        prop::collection::vec(0i64..=MICRO, n)
    }

    proptest! {
        #[test]
        fn matches_exhaustive_optimum(q in micro_q(10), alpha in 1i64..MICRO) {
            let (_, obj) = oracle_bh_micro(&q, alpha);
            let (_, best) = brute_force_optimal_micro(&q, alpha).unwrap();
            prop_assert_eq!(obj, best);
        }

        #[test]
        fn rejections_grow_with_alpha(q in prop::collection::vec(0.0f64..=1.0, 1..30), a in 0.001f64..0.5, b in 0.001f64..0.5) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let small = oracle_bh(&q, lo).unwrap().rejected;
            let large = oracle_bh(&q, hi).unwrap().rejected;
            prop_assert!(small.iter().all(|i| large.contains(i)));
        }

        #[test]
        fn level_and_lower_set(q in prop::collection::vec(0.0f64..=1.0, 1..30), alpha in 0.001f64..0.9) {
            let out = oracle_bh(&q, alpha).unwrap();
            if !out.rejected.is_empty() {
                prop_assert!(out.expected_fdr <= alpha + 1e-12);
            }
            let worst = out.rejected.iter().map(|&i| q[i]).fold(f64::NEG_INFINITY, f64::max);
            for (j, &qj) in q.iter().enumerate() {
                if qj < worst {
                    prop_assert!(out.rejected.contains(&j));
                }
            }
        }
    }
}
