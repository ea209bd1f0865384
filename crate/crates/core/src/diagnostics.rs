//! Contraction of the L-matrix row ratios and convergence of Λ.

use rayon::prelude::*;

use crate::chain::Matrix;
use crate::engine::{Direction, LMatrixSequence, Scenario};
use crate::error::{Error, Result};

/// Slack for the finite-n algebraic checks.
pub const CHECK_SLACK: f64 = 1e-12;

/// Points at or below this are left out of the rate fit.
const FIT_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContractionRow {
    pub n: usize,
    pub delta: f64,
    /// `Δ_{n,1}` and `Δ_{n,2}` from finite differences in ε.
    pub delta_nu1: Option<f64>,
    pub delta_nu2: Option<f64>,
    /// `α γ^n` when κ = 1.
    pub bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub n: usize,
    pub what: &'static str,
    pub value: f64,
    pub limit: f64,
}

/// κ = 1 constants: `α = 1/φ - 1` and `γ = 1 - inf_n min/max` of the ratios
/// `P(e,d)/P(e,c)`; `floor_gamma` is the value implied by the floor alone.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KappaOneBound {
    pub phi: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub floor_gamma: f64,
}

impl KappaOneBound {
    pub fn at(&self, n: usize) -> f64 {
        self.alpha * self.gamma.powi(n as i32)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContractionTrace {
    pub direction: Direction,
    pub epsilon: f64,
    pub rows: Vec<ContractionRow>,
    /// Least-squares slope of `ln Δ_n` against `n` over the tail half.
    pub fitted_rate: Option<f64>,
    pub bound: Option<KappaOneBound>,
    pub violations: Vec<Violation>,
}

/// `γ` for a run of one-step matrices.
pub fn gamma_of(mats: &[&Matrix]) -> f64 {
    let mut worst = f64::INFINITY;
    for m in mats {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for e in 0..m.nrows() {
            let row = m.row(e);
            let mn = row.min();
            let mx = row.max();
            lo = lo.min(mn / mx);
            hi = hi.max(mx / mn);
        }
        worst = worst.min(lo / hi);
    }
    1.0 - worst
}

fn step_matrices<'a>(scenario: &'a Scenario<'_>, direction: Direction, n_max: usize) -> Result<Vec<&'a Matrix>> {
    let w = scenario.window();
    (0..n_max as i64)
        .map(|u| match direction {
            Direction::Forward => w.forward(u),
            Direction::Backward => w.reverse(-u),
        })
        .collect()
}

/// Floor used for a direction: the declared floor forward, and the smaller
/// of it and the observed reverse floor backward.
pub fn effective_floor(scenario: &Scenario<'_>, direction: Direction) -> f64 {
    let phi = scenario.spec().phi_star();
    match direction {
        Direction::Forward => phi,
        Direction::Backward => scenario.window().reverse_floor().map_or(phi, |f| f.min(phi)),
    }
}

pub fn kappa_one_bound(scenario: &Scenario<'_>, direction: Direction, n_max: usize) -> Result<KappaOneBound> {
    if scenario.spec().kappa() != 1 {
        return Err(Error::KappaNotOne(scenario.spec().kappa()));
    }
    let phi = effective_floor(scenario, direction);
    let mats = step_matrices(scenario, direction, n_max.max(1))?;
    let ratio = phi / (1.0 - phi);
    Ok(KappaOneBound { phi, alpha: 1.0 / phi - 1.0, gamma: gamma_of(&mats), floor_gamma: 1.0 - ratio * ratio })
}

fn sequence(scenario: &Scenario<'_>, epsilon: f64, direction: Direction, n_max: usize) -> Result<LMatrixSequence> {
    scenario.filter(epsilon)?.l_sequence(direction, 0, n_max)
}

/// `Δ_{n,ν}` from per-entry finite differences of the ratio matrices.
fn delta_derivative(stencil: &[&LMatrixSequence], weights: &[f64], scale: f64, n: usize) -> f64 {
    let k = stencil[0].matrix(n).nrows();
    let ratio_derivative = |a: usize, b: usize, c: usize| -> f64 {
        stencil
            .iter()
            .zip(weights)
            .map(|(s, w)| {
                let m = s.matrix(n);
                w * m[(b, c)] / m[(a, c)]
            })
            .sum::<f64>()
            / scale
    };
    let mut best = 0.0f64;
    for a in 0..k {
        for b in 0..k {
            let vals: Vec<f64> = (0..k).map(|c| ratio_derivative(a, b, c)).collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            best = best.max(hi - lo);
        }
    }
    best
}

/// Slope of `ln y` against `x` by least squares.
pub fn log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|p| p.1 > FIT_FLOOR).map(|&(x, y)| (x, y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn tail_rate(rows: &[(f64, f64)]) -> Option<f64> {
    let tail = &rows[rows.len() / 2..];
    let usable = tail.iter().filter(|p| p.1 > FIT_FLOOR).count();
    if usable >= 2 {
        log_slope(tail)
    } else {
        log_slope(rows)
    }
}

pub struct TraceOptions {
    pub derivatives: bool,
    pub h1: f64,
    pub h2: f64,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self { derivatives: true, h1: 1e-5, h2: 1e-3 }
    }
}

/// `Δ_n(ε)` for `κ <= n <= n_max` with monotonicity and, for κ = 1, the
/// bound `Δ_n <= α γ^n`.
pub fn delta_trace(
    scenario: &Scenario<'_>,
    epsilon: f64,
    direction: Direction,
    n_max: usize,
    opts: &TraceOptions,
) -> Result<ContractionTrace> {
    let kappa = scenario.spec().kappa();
    let base = sequence(scenario, epsilon, direction, n_max)?;
    let stencils = if opts.derivatives {
        Some((
            sequence(scenario, epsilon - opts.h1, direction, n_max)?,
            sequence(scenario, epsilon + opts.h1, direction, n_max)?,
            sequence(scenario, epsilon - opts.h2, direction, n_max)?,
            sequence(scenario, epsilon + opts.h2, direction, n_max)?,
        ))
    } else {
        None
    };
    let bound = if kappa == 1 { Some(kappa_one_bound(scenario, direction, n_max)?) } else { None };
    let mut rows = Vec::new();
    let mut violations = Vec::new();
    let mut prev: Option<f64> = None;
    for n in kappa.max(1)..=n_max {
        let delta = base.delta(n);
        let (d1, d2) = match &stencils {
            Some((lo1, hi1, lo2, hi2)) => (
                Some(delta_derivative(&[lo1, hi1], &[-1.0, 1.0], 2.0 * opts.h1, n)),
                Some(delta_derivative(&[lo2, &base, hi2], &[1.0, -2.0, 1.0], opts.h2 * opts.h2, n)),
            ),
            None => (None, None),
        };
        if let Some(p) = prev {
            if delta > p + CHECK_SLACK * p.max(1.0) {
                violations.push(Violation { n, what: "delta_increase", value: delta, limit: p });
            }
        }
        let b = bound.map(|b| b.at(n));
        if let Some(limit) = b {
            if delta > limit + CHECK_SLACK * limit.max(1.0) {
                violations.push(Violation { n, what: "delta_bound", value: delta, limit });
            }
        }
        prev = Some(delta);
        rows.push(ContractionRow { n, delta, delta_nu1: d1, delta_nu2: d2, bound: b });
    }
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, r.delta)).collect();
    Ok(ContractionTrace {
        direction,
        epsilon,
        fitted_rate: if pts.is_empty() { None } else { tail_rate(&pts) },
        rows,
        bound,
        violations,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LambdaRow {
    pub n: usize,
    pub lambda: Vec<f64>,
    pub delta: f64,
    /// `max_a |Λ_{n,a} - Λ_{n_last,a}|`.
    pub gap_to_last: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LambdaTrace {
    pub direction: Direction,
    pub epsilon: f64,
    pub rows: Vec<LambdaRow>,
    pub violations: Vec<Violation>,
}

/// Λ along an increasing schedule with the envelope
/// `|Λ_{n,a} - Λ_{s,a}| <= 2Δ_n + Δ_s` checked for every pair `s >= n >= κ`,
/// and, for κ = 1, `φ/(1-φ) <= Λ <= (1-φ)/φ` at every scheduled `n`.
pub fn lambda_convergence_trace(
    scenario: &Scenario<'_>,
    epsilon: f64,
    direction: Direction,
    schedule: &[usize],
) -> Result<LambdaTrace> {
    if schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("schedule must be strictly increasing".into()));
    }
    let kappa = scenario.spec().kappa();
    let n_max = schedule.last().copied().unwrap_or(0);
    let seq = sequence(scenario, epsilon, direction, n_max)?;
    let mut rows = Vec::with_capacity(schedule.len());
    for &n in schedule {
        rows.push(LambdaRow { n, lambda: seq.lambda_vector(n)?, delta: seq.delta(n), gap_to_last: 0.0 });
    }
    let mut violations = Vec::new();
    if let Some(last) = rows.last().cloned() {
        for r in &mut rows {
            r.gap_to_last = r.lambda.iter().zip(&last.lambda).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        }
    }
    for (i, rn) in rows.iter().enumerate() {
        if rn.n < kappa {
            continue;
        }
        for rs in &rows[i..] {
            let limit = 2.0 * rn.delta + rs.delta;
            for (a, b) in rn.lambda.iter().zip(&rs.lambda) {
                let gap = (a - b).abs();
                if gap > limit + CHECK_SLACK * limit.max(1.0) {
                    violations.push(Violation { n: rs.n, what: "lambda_envelope", value: gap, limit });
                }
            }
        }
    }
    if kappa == 1 {
        let phi = effective_floor(scenario, direction);
        let (lo, hi) = (phi / (1.0 - phi), (1.0 - phi) / phi);
        for r in rows.iter().filter(|r| r.n >= 1) {
            for &l in &r.lambda {
                if l < lo - CHECK_SLACK * lo || l > hi + CHECK_SLACK * hi {
                    violations.push(Violation { n: r.n, what: "lambda_range", value: l, limit: if l < lo { lo } else { hi } });
                }
            }
        }
    }
    Ok(LambdaTrace { direction, epsilon, rows, violations })
}

/// `max_{ε in grid} max_a |Λ_{n,a}(ε) - Λ_{n_max,a}(ε)|` for each `n`, over
/// `points` equally spaced ε in `[-ε0, ε0]`.
pub fn uniformity_probe(
    scenario: &Scenario<'_>,
    eps0: f64,
    points: usize,
    direction: Direction,
    n_max: usize,
) -> Result<Vec<(usize, f64)>> {
    let grid: Vec<f64> = (0..points)
        .map(|i| if points == 1 { 0.0 } else { -eps0 + 2.0 * eps0 * i as f64 / (points - 1) as f64 })
        .collect();
    let per_eps = grid
        .par_iter()
        .map(|&e| -> Result<Vec<f64>> {
            let seq = sequence(scenario, e, direction, n_max)?;
            let last = seq.lambda_vector(n_max)?;
            (1..=n_max)
                .map(|n| {
                    let l = seq.lambda_vector(n)?;
                    Ok(l.iter().zip(&last).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((1..=n_max)
        .map(|n| (n, per_eps.iter().map(|v| v[n - 1]).fold(0.0, f64::max)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::BinaryStationarySpec;
    use crate::models::{ModelSelector, Potential, TranslationModel};
    use crate::random;
    use crate::trajectory::simulate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian() -> TranslationModel {
        TranslationModel::new(Potential::gaussian())
    }

    #[test]
    fn independent_chain_forgets_at_once() {
        let spec = BinaryStationarySpec::new(0.3, 0.7).unwrap().validated().unwrap();
        let model = gaussian();
        let tr = simulate(&spec, &model, 1.0, 0, 10, 1).unwrap();
        let sc = Scenario::new(&spec, &model, &tr).unwrap();
        let t = delta_trace(&sc, 1.0, Direction::Forward, 10, &TraceOptions::default()).unwrap();
        assert!(t.rows.iter().all(|r| r.delta < 1e-15));
        assert!(t.violations.is_empty());
        assert_eq!(t.fitted_rate, None);
    }

    #[test]
    fn random_instances_contract() {
        let model = gaussian();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for i in 0..25 {
            let b = random::binary_stationary(&mut rng, 0.9, 0.03);
            let spec = b.validated().unwrap();
            let eps = rng.random_range(0.0..2.0);
            let tr = simulate(&spec, &model, eps, 30, 30, i).unwrap();
            let sc = Scenario::new(&spec, &model, &tr).unwrap();
            for dir in [Direction::Forward, Direction::Backward] {
                let t = delta_trace(&sc, eps, dir, 30, &TraceOptions::default()).unwrap();
                assert!(t.violations.is_empty(), "{:?}", t.violations);
                if b.r().abs() > 1e-3 {
                    assert!(t.fitted_rate.unwrap() < 0.0);
                }
                let bound = t.bound.unwrap();
                assert!(bound.gamma <= bound.floor_gamma + 1e-12);
                let schedule: Vec<usize> = (1..=30).collect();
                let l = lambda_convergence_trace(&sc, eps, dir, &schedule).unwrap();
                assert!(l.violations.is_empty(), "{:?}", l.violations);
            }
        }
    }

    #[test]
    fn three_state_and_time_varying_chains_contract() {
        let model = ModelSelector::ScalingGaussian.build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..10 {
            let spec = if i % 2 == 0 {
                random::stationary_spec(&mut rng, 3, 0.08)
            } else {
                random::time_varying_spec(&mut rng, 3, -12, 12, 0.08)
            }
            .validate()
            .unwrap();
            let tr = simulate(&spec, model.as_ref(), 0.7, 12, 12, i).unwrap();
            let sc = Scenario::new(&spec, model.as_ref(), &tr).unwrap();
            for dir in [Direction::Forward, Direction::Backward] {
                let t = delta_trace(&sc, 0.7, dir, 12, &TraceOptions::default()).unwrap();
                assert!(t.violations.is_empty(), "{:?}", t.violations);
                let l = lambda_convergence_trace(&sc, 0.7, dir, &[1, 2, 4, 8, 12]).unwrap();
                assert!(l.violations.is_empty(), "{:?}", l.violations);
            }
        }
    }

    #[test]
    fn zero_signal_symmetric_lambda_is_flat() {
        let spec = BinaryStationarySpec::symmetric(0.6).unwrap().validated().unwrap();
        let model = gaussian();
        let tr = simulate(&spec, &model, 0.0, 0, 8, 3).unwrap();
        let sc = Scenario::new(&spec, &model, &tr).unwrap();
        let l = lambda_convergence_trace(&sc, 0.0, Direction::Forward, &[1, 3, 8]).unwrap();
        assert!(l.rows.iter().all(|r| r.gap_to_last < 1e-15));
        let t = delta_trace(&sc, 0.0, Direction::Forward, 8, &TraceOptions::default()).unwrap();
        // ε-derivatives of the first ratio matrix vanish.
        assert!(t.rows[0].delta_nu1.unwrap() < 1e-9);
    }

    #[test]
    fn uniform_gap_decays() {
        let spec = BinaryStationarySpec::symmetric(0.5).unwrap().validated().unwrap();
        let model = gaussian();
        let tr = simulate(&spec, &model, 0.5, 0, 30, 5).unwrap();
        let sc = Scenario::new(&spec, &model, &tr).unwrap();
        let gaps = uniformity_probe(&sc, 1.0, 21, Direction::Forward, 30).unwrap();
        let pts: Vec<(f64, f64)> = gaps[..20].iter().map(|&(n, g)| (n as f64, g)).collect();
        assert!(log_slope(&pts).unwrap() < 0.0);
    }

    #[test]
    fn gamma_formula_on_a_known_matrix() {
        let q = Matrix::from_row_slice(2, 2, &[0.75, 0.25, 0.25, 0.75]);
        // min ratio 1/3 per row, so γ = 1 - (1/3)².
        assert!((gamma_of(&[&q]) - (1.0 - 1.0 / 9.0)).abs() < 1e-15);
    }
}
