//! Weak-signal derivatives at ε = 0 of the log-ratio correction `r(ε)`
//! (forward) and `r̄(ε)` (backward) for binary chains, plus the expectation
//! identities they satisfy.
//!
//! Term `t` of the forward expansion uses the observation at index `t` and
//! the chain law between 0 and `t`; the backward expansion uses index `-t`
//! and the reverse conditionals. Sums run over ascending `t`, then `s`.

use rand::RngCore;

use crate::chain::{Matrix, ValidatedSpec};
use crate::engine::{Direction, Scenario};
use crate::error::{Error, Result};
use crate::fd;
use crate::mc::{run_replicates, MeanSe};
use crate::models::InteractionModel;
use crate::trajectory::{simulate_with_rng, Trajectory};

/// Default target for the truncated tail of `Σ |D_{0t}|`.
pub const TAIL_TARGET: f64 = 1e-10;

/// `(d_t'(0), d_t''(0), ℓ_t'(0, 0))` for a single noise point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TermDerivs {
    pub d1: f64,
    pub d2: f64,
    /// `ℓ_t'(0, 0)`, the derivative of `ln ψ_t(ε, 0)`.
    pub ell0: f64,
}

/// Derivatives of `d(ε) = ln ψ(ε, 1) - ln ψ(ε, 0)` at zero for noise `z` and
/// hidden state `eta`.
pub fn term_derivs(model: &dyn InteractionModel, z: &[f64], eta: usize) -> TermDerivs {
    let x = model.phi(z, 0.0);
    let p = model.lambda_partials_at_zero(x);
    let phi_v = model.phi_partial_v(z, 0.0);
    let (a0, a1) = (model.theta_d1(0, 0.0), model.theta_d1(1, 0.0));
    let (b0, b1) = (model.theta_d2(0, 0.0), model.theta_d2(1, 0.0));
    let te = model.theta_d1(eta, 0.0);
    let gap = a1 - a0;
    TermDerivs {
        d1: gap * p.dtheta,
        d2: 2.0 * gap * te * p.dx_dtheta * phi_v + (a1 * a1 - a0 * a0) * p.dtheta2 + (b1 - b0) * p.dtheta,
        ell0: p.dx * phi_v * te + p.dtheta * a0,
    }
}

/// `(d_t'(0), d_t''(0))` at trajectory index `t`.
pub fn dt_derivs(model: &dyn InteractionModel, traj: &Trajectory, t: i64) -> (f64, f64) {
    let d = term_derivs(model, traj.noise_at(t), traj.eta_at(t));
    (d.d1, d.d2)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpansionTerm {
    pub t: usize,
    pub d0t: f64,
    pub d1: f64,
    pub d2: f64,
    /// Partial sums of `r'(0)` and `r''(0)` through this term; these equal
    /// the derivatives of the finite-`t` log ratio.
    pub cum_r1: f64,
    pub cum_r2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpansionResult {
    pub direction: Direction,
    pub terms: Vec<ExpansionTerm>,
    /// `(s, t, u_{st})` for `1 <= s < t <= T`; empty for closed forms.
    pub u: Vec<(usize, usize, f64)>,
    pub r1: f64,
    pub r2: f64,
    pub truncation: usize,
    /// `max_t |d_t'(0)| · Σ_{t>T} |D_{0t}|`.
    pub tail_bound: f64,
}

fn require_binary(spec: &ValidatedSpec) -> Result<()> {
    if spec.is_binary() {
        Ok(())
    } else {
        Err(Error::NotBinary)
    }
}

/// `Σ_{t>T} c^{⌊t/κ⌋}`.
fn floor_tail(c: f64, kappa: usize, truncation: usize) -> f64 {
    let mut sum = 0.0;
    let mut t = truncation + 1;
    loop {
        let term = c.powi((t / kappa) as i32);
        sum += term;
        if term < 1e-20 * sum.max(1e-300) || term == 0.0 || t > truncation + 10_000_000 {
            break;
        }
        t += 1;
    }
    sum
}

fn geometric_tail(r: f64, truncation: usize) -> f64 {
    let a = r.abs();
    if a == 0.0 {
        0.0
    } else {
        a.powi(truncation as i32 + 1) / (1.0 - a)
    }
}

/// Stationary first-order chain `(p01, p10)` when transitions are
/// homogeneous; `None` otherwise.
fn stationary_pair(spec: &ValidatedSpec) -> Option<(f64, f64)> {
    if spec.is_stationary() {
        let q = spec.transition(0);
        Some((q[(0, 1)], q[(1, 0)]))
    } else {
        None
    }
}

/// Contraction factor bounding `|D_{0t}|` per κ steps in a direction.
fn floor_factor(scenario: &Scenario<'_>, direction: Direction) -> f64 {
    let spec = scenario.spec();
    let phi = match direction {
        Direction::Forward => spec.phi_star(),
        Direction::Backward => scenario.window().reverse_floor().map_or(spec.phi_star(), |f| f.min(spec.phi_star())),
    };
    (1.0 - 2.0 * phi).max(0.0)
}

fn tail_sum(scenario: &Scenario<'_>, direction: Direction, truncation: usize) -> f64 {
    let spec = scenario.spec();
    match stationary_pair(spec) {
        Some((p01, p10)) if spec.kappa() == 1 || direction == Direction::Forward => {
            geometric_tail(1.0 - p01 - p10, truncation)
        }
        _ => floor_tail(floor_factor(scenario, direction), spec.kappa(), truncation),
    }
}

/// Smallest `T >= 1` whose geometric tail is below `TAIL_TARGET`.
pub fn default_truncation(scenario: &Scenario<'_>, direction: Direction) -> usize {
    let mut t = 1;
    while tail_sum(scenario, direction, t) >= TAIL_TARGET && t < 100_000 {
        t += 1;
    }
    t
}

/// `|r|^T / (1 - |r|) < TAIL_TARGET` for a stationary binary chain.
pub fn stationary_truncation(r: f64) -> usize {
    let a = r.abs();
    if a == 0.0 {
        return 1;
    }
    let mut t = 1usize;
    while a.powi(t as i32) / (1.0 - a) >= TAIL_TARGET {
        t += 1;
    }
    t
}

/// One-step matrices `M_0, …, M_{T-1}` and trajectory indices `1..=T` in the
/// requested direction.
fn directional_inputs(scenario: &Scenario<'_>, direction: Direction, truncation: usize) -> Result<(Vec<Matrix>, Vec<i64>)> {
    let w = scenario.window();
    let mut mats = Vec::with_capacity(truncation);
    let mut idx = Vec::with_capacity(truncation);
    for u in 0..truncation as i64 {
        match direction {
            Direction::Forward => {
                mats.push(w.forward(u)?.clone());
                idx.push(u + 1);
            }
            Direction::Backward => {
                mats.push(w.reverse(-u)?.clone());
                idx.push(-u - 1);
            }
        }
    }
    Ok((mats, idx))
}

/// General second-order expansion along a sequence of one-step matrices.
fn expand_general(mats: &[Matrix], derivs: &[TermDerivs]) -> (Vec<ExpansionTerm>, Vec<(usize, usize, f64)>, f64, f64) {
    let big_t = mats.len();
    let dd = |m: &Matrix| m[(1, 1)] - m[(0, 1)];
    // p0[s] = P_{0s}, s = 0..=T.
    let mut p0 = Vec::with_capacity(big_t + 1);
    p0.push(Matrix::identity(2, 2));
    for m in mats {
        let next = p0.last().unwrap() * m;
        p0.push(next);
    }
    let d0: Vec<f64> = p0.iter().map(dd).collect();

    let mut terms = Vec::with_capacity(big_t);
    let mut u_all = Vec::new();
    let (mut r1, mut r2) = (0.0, 0.0);
    for t in 1..=big_t {
        let d = derivs[t - 1];
        let pt = &p0[t];
        r1 += d0[t] * d.d1;
        r2 += d0[t] * (d.d2 + (pt[(1, 0)] - pt[(0, 1)]) * d.d1 * d.d1);
        // D_{st} for s = t-1 down to 1 by left-multiplying one-step matrices.
        let mut pst = Matrix::identity(2, 2);
        let mut u_row = vec![0.0; t];
        for s in (1..t).rev() {
            pst = &mats[s] * &pst;
            let dst = dd(&pst);
            let ds = derivs[s - 1];
            let ps = &p0[s];
            u_row[s] = d0[s] * (dst * ps[(0, 0)] - d0[t]) * ds.d1 + d0[s] * dst * ds.ell0
                - d0[t] * (ds.ell0 + ps[(0, 1)] * ds.d1);
        }
        let mut inner = 0.0;
        for (s, &u) in u_row.iter().enumerate().skip(1) {
            inner += u;
            u_all.push((s, t, u));
        }
        r2 += 2.0 * d.d1 * inner;
        terms.push(ExpansionTerm { t, d0t: d0[t], d1: d.d1, d2: d.d2, cum_r1: r1, cum_r2: r2 });
    }
    (terms, u_all, r1, r2)
}

fn derivs_along(scenario: &Scenario<'_>, idx: &[i64]) -> Vec<TermDerivs> {
    let traj = scenario.trajectory();
    idx.iter()
        .map(|&t| term_derivs(scenario.model(), traj.noise_at(t), traj.eta_at(t)))
        .collect()
}

fn expansion(scenario: &Scenario<'_>, direction: Direction, truncation: usize) -> Result<ExpansionResult> {
    require_binary(scenario.spec())?;
    if truncation == 0 {
        return Err(Error::InvalidArgument("truncation must be at least 1".into()));
    }
    let (mats, idx) = directional_inputs(scenario, direction, truncation)?;
    let derivs = derivs_along(scenario, &idx);
    let (terms, u, r1, r2) = expand_general(&mats, &derivs);
    let max_d1 = derivs.iter().map(|d| d.d1.abs()).fold(0.0, f64::max);
    Ok(ExpansionResult {
        direction,
        terms,
        u,
        r1,
        r2,
        truncation,
        tail_bound: max_d1 * tail_sum(scenario, direction, truncation),
    })
}

/// `r'(0) = Σ_{t≤T} D_{0t} d_t'(0)` (second-order fields are filled too).
pub fn r_prime(scenario: &Scenario<'_>, truncation: usize) -> Result<ExpansionResult> {
    expansion(scenario, Direction::Forward, truncation)
}

/// `r''(0)` including the `u_{st}` cross terms.
pub fn r_double_prime(scenario: &Scenario<'_>, truncation: usize) -> Result<ExpansionResult> {
    require_binary(scenario.spec())?;
    if truncation < 2 {
        return Err(Error::InvalidArgument("second-order expansion needs truncation >= 2".into()));
    }
    expansion(scenario, Direction::Forward, truncation)
}

/// The same expansion for `r̄(ε)`, built on negative indices and the reverse
/// conditionals of the chain.
pub fn backward_expansion(scenario: &Scenario<'_>, truncation: usize) -> Result<ExpansionResult> {
    expansion(scenario, Direction::Backward, truncation)
}

/// Closed forms for a stationary binary chain:
/// `r' = Σ r^t d_t'` and
/// `r'' = Σ r^t {d_t'' + (p0-p1)(1-r^t) d_t'^2} + 2(p0-p1) Σ_t r^t d_t' Σ_{s<t} (1-r^s) d_s'`.
pub fn stationary_expansion(scenario: &Scenario<'_>, direction: Direction, truncation: usize) -> Result<ExpansionResult> {
    let spec = scenario.spec();
    require_binary(spec)?;
    let (p01, p10) = stationary_pair(spec).ok_or(Error::NotStationary)?;
    if direction == Direction::Backward {
        // The reverse chain is Q only when the chain starts in its stationary law.
        let p1 = p01 / (p01 + p10);
        if (spec.initial()[1] - p1).abs() > 1e-12 {
            return Err(Error::NotStationary);
        }
    }
    if truncation == 0 {
        return Err(Error::InvalidArgument("truncation must be at least 1".into()));
    }
    let r = 1.0 - p01 - p10;
    let (p0, p1) = (p10 / (p01 + p10), p01 / (p01 + p10));
    let idx: Vec<i64> = (1..=truncation as i64)
        .map(|t| if direction == Direction::Forward { t } else { -t })
        .collect();
    for &t in &idx {
        if !scenario.trajectory().contains(t) {
            let traj = scenario.trajectory();
            return Err(Error::IndexOutOfWindow { index: t, lo: traj.lo(), hi: traj.hi() });
        }
    }
    let derivs = derivs_along(scenario, &idx);
    let mut terms = Vec::with_capacity(truncation);
    let (mut r1, mut r2) = (0.0, 0.0);
    let mut inner = 0.0;
    let mut rt = 1.0;
    for t in 1..=truncation {
        rt *= r;
        let d = derivs[t - 1];
        r1 += rt * d.d1;
        r2 += rt * (d.d2 + (p0 - p1) * (1.0 - rt) * d.d1 * d.d1) + 2.0 * (p0 - p1) * rt * d.d1 * inner;
        inner += (1.0 - rt) * d.d1;
        terms.push(ExpansionTerm { t, d0t: rt, d1: d.d1, d2: d.d2, cum_r1: r1, cum_r2: r2 });
    }
    let max_d1 = derivs.iter().map(|d| d.d1.abs()).fold(0.0, f64::max);
    Ok(ExpansionResult {
        direction,
        terms,
        u: Vec::new(),
        r1,
        r2,
        truncation,
        tail_bound: max_d1 * geometric_tail(r, truncation),
    })
}

/// `E[r''(0) | η] = Var[d'(0)] Σ_{t≤T} D_{0t} [2η_t - P_{0t}(1,1) - P_{0t}(0,1)]`
/// where `eta[t]` is the state at index `t` for `t = 0..=T`.
pub fn expected_r2_given_eta(spec: &ValidatedSpec, model: &dyn InteractionModel, eta: &[usize]) -> Result<f64> {
    require_binary(spec)?;
    model.check_expectation_moments()?;
    let var = model.score_contrast_variance();
    let mut p = Matrix::identity(2, 2);
    let mut sum = 0.0;
    for t in 1..eta.len() {
        p *= spec.transition(t as i64 - 1);
        let d = p[(1, 1)] - p[(0, 1)];
        sum += d * (2.0 * eta[t] as f64 - p[(1, 1)] - p[(0, 1)]);
    }
    Ok(var * sum)
}

/// `E[r''(0) | η_0] = (2η_0 - 1) Var[d'(0)] Σ_{t≤T} D_{0t}^2`.
pub fn expected_r2_given_eta0(spec: &ValidatedSpec, model: &dyn InteractionModel, eta0: usize, truncation: usize) -> Result<f64> {
    require_binary(spec)?;
    model.check_expectation_moments()?;
    let mut p = Matrix::identity(2, 2);
    let mut sum = 0.0;
    for t in 1..=truncation {
        p *= spec.transition(t as i64 - 1);
        let d = p[(1, 1)] - p[(0, 1)];
        sum += d * d;
    }
    Ok((2.0 * eta0 as f64 - 1.0) * model.score_contrast_variance() * sum)
}

/// Untruncated stationary value, `Σ_{t≥1} r^{2t} = r² / (1 - r²)`.
pub fn expected_r2_given_eta0_stationary(spec: &ValidatedSpec, model: &dyn InteractionModel, eta0: usize) -> Result<f64> {
    require_binary(spec)?;
    model.check_expectation_moments()?;
    let (p01, p10) = stationary_pair(spec).ok_or(Error::NotStationary)?;
    let r = 1.0 - p01 - p10;
    Ok((2.0 * eta0 as f64 - 1.0) * model.score_contrast_variance() * r * r / (1.0 - r * r))
}

fn redraw_noise(model: &dyn InteractionModel, traj: &Trajectory, rng: &mut dyn RngCore) -> Result<Trajectory> {
    let mut z = vec![0.0; traj.z().len()];
    for chunk in z.chunks_mut(model.noise_dim()) {
        model.sample_noise(rng, chunk);
    }
    Trajectory::new(model, traj.eta().to_vec(), z, traj.epsilon(), traj.m(), traj.n())
}

/// Monte Carlo mean of `r'(0)` over fresh noise with the hidden path `eta`
/// (states at indices `0..=T`) held fixed.
pub fn expected_r1_given_eta_check(
    spec: &ValidatedSpec,
    model: &dyn InteractionModel,
    eta: &[usize],
    replicates: usize,
    seed: u64,
) -> Result<MeanSe> {
    require_binary(spec)?;
    model.check_expectation_moments()?;
    if eta.len() < 2 {
        return Err(Error::InvalidArgument("need a hidden path covering indices 0..=T with T >= 1".into()));
    }
    let truncation = eta.len() - 1;
    let template = Trajectory::new(model, eta.to_vec(), vec![0.0; eta.len() * model.noise_dim()], 0.0, 0, truncation)?;
    let values = run_replicates(replicates, seed, |_, rng| -> Result<f64> {
        let traj = redraw_noise(model, &template, rng)?;
        let sc = Scenario::new(spec, model, &traj)?;
        Ok(r_prime(&sc, truncation)?.r1)
    });
    let values = values.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(MeanSe::from_slice(&values))
}

/// Monte Carlo mean of `r''(0)` with `η_0` fixed and the rest of the chain
/// and the noise simulated.
pub fn mc_r2_given_eta0(
    spec: &ValidatedSpec,
    model: &dyn InteractionModel,
    eta0: usize,
    truncation: usize,
    replicates: usize,
    seed: u64,
) -> Result<MeanSe> {
    require_binary(spec)?;
    model.check_expectation_moments()?;
    let values = run_replicates(replicates, seed, |_, rng| -> Result<f64> {
        let traj = simulate_with_rng(spec, model, 0.0, 0, truncation, Some(eta0), rng)?;
        let sc = Scenario::new(spec, model, &traj)?;
        Ok(r_double_prime(&sc, truncation)?.r2)
    });
    let values = values.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(MeanSe::from_slice(&values))
}

/// Two independent Monte Carlo estimates of a derivative of `E[ln Λ_{n,a}(ε)]`:
/// the finite difference of sample means, and the sample mean of
/// per-replicate finite differences taken at a much smaller step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterchangeCheck {
    pub order: u8,
    pub derivative_of_mean: MeanSe,
    pub mean_of_derivative: MeanSe,
}

impl InterchangeCheck {
    /// z-score of the difference using both standard errors.
    pub fn z_score(&self) -> f64 {
        let se = (self.derivative_of_mean.std_error().powi(2) + self.mean_of_derivative.std_error().powi(2)).sqrt();
        let diff = self.derivative_of_mean.mean() - self.mean_of_derivative.mean();
        if se == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            diff.abs() / se
        }
    }

    pub fn agrees(&self, k_se: f64, abs_tol: f64) -> bool {
        let diff = (self.derivative_of_mean.mean() - self.mean_of_derivative.mean()).abs();
        diff <= abs_tol || self.z_score() <= k_se
    }
}

#[derive(Clone, Copy, Debug)]
pub struct InterchangeConfig {
    pub n: i64,
    pub label: usize,
    pub epsilon: f64,
    pub replicates: usize,
    pub seed: u64,
    /// Step for differencing the sample means.
    pub outer_h: f64,
    /// Step for per-replicate differences.
    pub inner_h: f64,
}

/// Interchange of expectation and ε-differentiation for `ln Λ_{n,a}`, at
/// orders one and two. Requires κ = 1.
pub fn interchange_check(
    spec: &ValidatedSpec,
    model: &dyn InteractionModel,
    cfg: &InterchangeConfig,
) -> Result<[InterchangeCheck; 2]> {
    if spec.kappa() != 1 {
        return Err(Error::KappaNotOne(spec.kappa()));
    }
    let (m, n) = if cfg.n >= 0 { (0, cfg.n as usize) } else { ((-cfg.n) as usize, 0) };
    let sample = |seed: u64| -> Result<Vec<Trajectory>> {
        run_replicates(cfg.replicates, seed, |_, rng| simulate_with_rng(spec, model, cfg.epsilon, m, n, None, rng))
            .into_iter()
            .collect()
    };
    let set_a = sample(cfg.seed)?;
    let set_b = sample(cfg.seed.wrapping_add(0x9E37_79B9_7F4A_7C15))?;
    let log_lambda = |traj: &Trajectory, eps: f64| -> Result<f64> {
        Scenario::new(spec, model, traj)?.log_lambda(eps, cfg.n, cfg.label)
    };
    let e = cfg.epsilon;

    // A stencil applied to sample means equals the sample mean of the
    // per-replicate stencil values; the latter also yields a standard error.
    let h = cfg.outer_h;
    let stencil = |w: [f64; 3], scale: f64| -> Result<MeanSe> {
        let v = set_a
            .iter()
            .map(|tr| {
                Ok((w[0] * log_lambda(tr, e - h)? + w[1] * log_lambda(tr, e)? + w[2] * log_lambda(tr, e + h)?) / scale)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MeanSe::from_slice(&v))
    };
    let d1_of_mean = stencil([-1.0, 0.0, 1.0], 2.0 * h)?;
    let d2_of_mean = stencil([1.0, -2.0, 1.0], h * h)?;

    let hi_res = |tr: &Trajectory, order: u8| -> Result<f64> {
        let f = |x: f64| log_lambda(tr, x).unwrap_or(f64::NAN);
        let v = if order == 1 {
            fd::central_first(f, e, cfg.inner_h)
        } else {
            fd::central_second(f, e, cfg.inner_h)
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::DegenerateDenominator)
        }
    };
    let d1_b = set_b.iter().map(|tr| hi_res(tr, 1)).collect::<Result<Vec<_>>>()?;
    let d2_b = set_b.iter().map(|tr| hi_res(tr, 2)).collect::<Result<Vec<_>>>()?;
    Ok([
        InterchangeCheck { order: 1, derivative_of_mean: d1_of_mean, mean_of_derivative: MeanSe::from_slice(&d1_b) },
        InterchangeCheck { order: 2, derivative_of_mean: d2_of_mean, mean_of_derivative: MeanSe::from_slice(&d2_b) },
    ])
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
    fn gaussian_translation_term_derivatives() {
        let m = gaussian();
        let d = term_derivs(&m, &[0.8], 1);
        assert!((d.d1 - 0.8).abs() < 1e-15);
        assert!((d.d2 - 1.0).abs() < 1e-15);
        assert!((term_derivs(&m, &[-2.3], 1).d2 - 1.0).abs() < 1e-15);
        assert!((term_derivs(&m, &[0.4], 0).d2 + 1.0).abs() < 1e-15);
    }

    #[test]
    fn term_derivatives_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for sel in [ModelSelector::TranslationGaussian, ModelSelector::ScalingGaussian, ModelSelector::TStatistic { nu: 16 }] {
            let model = sel.build().unwrap();
            let mut z = vec![0.0; model.noise_dim()];
            for _ in 0..40 {
                model.sample_noise(&mut rng, &mut z);
                let eta = rng.random_range(0..2);
                let d = |e: f64| model.ell(&z, eta, 1, e) - model.ell(&z, eta, 0, e);
                let got = term_derivs(model.as_ref(), &z, eta);
                let fd1 = fd::central_first(d, 0.0, 1e-4);
                let fd2 = fd::central_second(d, 0.0, 1e-4);
                assert!((got.d1 - fd1).abs() < 1e-6 * got.d1.abs().max(1.0), "{} d1", model.name());
                assert!((got.d2 - fd2).abs() < 1e-4 * got.d2.abs().max(1.0), "{} d2 {} {}", model.name(), got.d2, fd2);
                let e0 = fd::central_first(|e| model.ell(&z, eta, 0, e), 0.0, 1e-5);
                assert!((got.ell0 - e0).abs() < 1e-6 * e0.abs().max(1.0));
            }
        }
    }

    #[test]
    fn example_one_first_order_sum() {
        let b = BinaryStationarySpec::symmetric(0.5).unwrap();
        let spec = b.validated().unwrap();
        let model = gaussian();
        let tr = simulate(&spec, &model, 0.0, 0, 30, 2).unwrap();
        let sc = Scenario::new(&spec, &model, &tr).unwrap();
        let res = r_prime(&sc, 30).unwrap();
        let want: f64 = (1..=30).map(|t| 0.5f64.powi(t) * tr.noise_at(t as i64)[0]).sum();
        assert!((res.r1 - want).abs() < 1e-13);
        // Symmetric chain: the (p0 - p1) factors vanish.
        let d2: f64 = (1..=30).map(|t| 0.5f64.powi(t) * (2.0 * tr.eta_at(t as i64) as f64 - 1.0)).sum();
        let st = stationary_expansion(&sc, Direction::Forward, 30).unwrap();
        assert!((st.r2 - d2).abs() < 1e-13);
    }

    #[test]
    fn independent_chain_has_no_correction() {
        let spec = BinaryStationarySpec::new(0.4, 0.6).unwrap().validated().unwrap();
        let model = gaussian();
        let tr = simulate(&spec, &model, 0.0, 5, 5, 3).unwrap();
        let sc = Scenario::new(&spec, &model, &tr).unwrap();
        for res in [r_double_prime(&sc, 5).unwrap(), backward_expansion(&sc, 5).unwrap()] {
            assert!(res.r1.abs() < 1e-15 && res.r2.abs() < 1e-15);
            assert_eq!(res.tail_bound, 0.0);
        }
    }

    #[test]
    fn general_form_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let model = ModelSelector::ScalingGaussian.build().unwrap();
        for i in 0..50 {
            let b = random::binary_stationary(&mut rng, 0.9, 0.02);
            let spec = b.validated().unwrap();
            let tr = simulate(&spec, model.as_ref(), 0.0, 12, 12, i).unwrap();
            let sc = Scenario::new(&spec, model.as_ref(), &tr).unwrap();
            for dir in [Direction::Forward, Direction::Backward] {
                let g = expansion(&sc, dir, 12).unwrap();
                let c = stationary_expansion(&sc, dir, 12).unwrap();
                assert!((g.r1 - c.r1).abs() < 1e-12);
                assert!((g.r2 - c.r2).abs() < 1e-12, "{} vs {}", g.r2, c.r2);
            }
        }
    }

    #[test]
    fn first_and_second_order_match_differences_of_the_dp() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = ModelSelector::TStatistic { nu: 16 }.build().unwrap();
        for i in 0..6 {
            let spec = random::time_varying_spec(&mut rng, 2, -8, 8, 0.1);
            let spec = crate::chain::HmmSpec { h1: vec![false, true], ..spec }.validate().unwrap();
            let tr = simulate(&spec, model.as_ref(), 0.0, 8, 8, i).unwrap();
            let sc = Scenario::new(&spec, model.as_ref(), &tr).unwrap();
            for (dir, n) in [(Direction::Forward, 8i64), (Direction::Backward, -8)] {
                let res = expansion(&sc, dir, 8).unwrap();
                let f = |e: f64| sc.log_lambda_contrast(e, n).unwrap();
                let d1 = fd::central_first(f, 0.0, 1e-5);
                let d2 = fd::central_second(f, 0.0, 1e-3);
                assert!((res.r1 - d1).abs() <= 1e-6f64.max(1e-4 * res.r1.abs()));
                assert!((res.r2 - d2).abs() <= 1e-3f64.max(1e-3 * res.r2.abs()), "{} vs {d2}", res.r2);
            }
        }
    }

    #[test]
    fn u_terms_are_not_symmetric() {
        let spec = BinaryStationarySpec::new(0.2, 0.5).unwrap().validated().unwrap();
        let model = gaussian();
        let tr = simulate(&spec, &model, 0.0, 0, 6, 8).unwrap();
        let sc = Scenario::new(&spec, &model, &tr).unwrap();
        let res = r_double_prime(&sc, 6).unwrap();
        assert!(res.u.iter().all(|&(s, t, _)| s < t));
        let derivs = derivs_along(&sc, &(1..=6).collect::<Vec<_>>());
        // Weighting u_{st} by d_s' instead of d_t' must change the cross term.
        let swapped: f64 = res.u.iter().map(|&(s, _, u)| derivs[s - 1].d1 * u).sum();
        let forward: f64 = res.u.iter().map(|&(_, t, u)| derivs[t - 1].d1 * u).sum();
        assert!((forward - swapped).abs() > 1e-8);
    }

    #[test]
    fn expectation_closed_forms() {
        let spec = BinaryStationarySpec::symmetric(0.5).unwrap().validated().unwrap();
        let model = gaussian();
        let v1 = expected_r2_given_eta0_stationary(&spec, &model, 1).unwrap();
        assert!((v1 - 1.0 / 3.0).abs() < 1e-15);
        assert!((expected_r2_given_eta0_stationary(&spec, &model, 0).unwrap() + 1.0 / 3.0).abs() < 1e-15);
        assert!((expected_r2_given_eta0(&spec, &model, 1, 60).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let t12 = ModelSelector::TStatistic { nu: 12 }.build().unwrap();
        assert_eq!(
            expected_r2_given_eta0(&spec, t12.as_ref(), 1, 5),
            Err(Error::DegreesOfFreedomTooSmall(12))
        );
    }

    #[test]
    fn monte_carlo_expectations_bracket() {
        let spec = BinaryStationarySpec::symmetric(0.5).unwrap().validated().unwrap();
        let model = gaussian();
        let r2 = mc_r2_given_eta0(&spec, &model, 1, 30, 4000, 10).unwrap();
        assert!(r2.brackets(1.0 / 3.0, 4.0), "{r2:?}");
        let eta = vec![1, 0, 0, 1, 1, 1, 0, 1, 0, 0, 1];
        let r1 = expected_r1_given_eta_check(&spec, &model, &eta, 4000, 11).unwrap();
        assert!(r1.brackets(0.0, 4.0));
        let scaling = ModelSelector::ScalingGaussian.build().unwrap();
        let r1 = expected_r1_given_eta_check(&spec, scaling.as_ref(), &eta, 4000, 12).unwrap();
        assert!(r1.brackets(0.0, 4.0));
    }

    #[test]
    fn truncation_rules() {
        assert_eq!(stationary_truncation(0.0), 1);
        let t = stationary_truncation(0.5);
        assert!(0.5f64.powi(t as i32) / 0.5 < 1e-10 && 0.5f64.powi(t as i32 - 1) / 0.5 >= 1e-10);
        let spec = BinaryStationarySpec::symmetric(0.5).unwrap().validated().unwrap();
        let model = gaussian();
        let tr = simulate(&spec, &model, 0.0, 0, 60, 1).unwrap();
        let sc = Scenario::new(&spec, &model, &tr).unwrap();
        let big_t = default_truncation(&sc, Direction::Forward);
        let a = r_prime(&sc, big_t).unwrap();
        let b = r_prime(&sc, big_t + 10).unwrap();
        assert!((a.r1 - b.r1).abs() <= a.tail_bound);
    }

    #[test]
    fn non_binary_is_refused() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = random::stationary_spec(&mut rng, 3, 0.1).validate().unwrap();
        let model = gaussian();
        let tr = simulate(&spec, &model, 0.0, 2, 2, 1).unwrap();
        let sc = Scenario::new(&spec, &model, &tr).unwrap();
        assert_eq!(r_prime(&sc, 2).unwrap_err(), Error::NotBinary);
    }

    #[test]
    fn interchange_holds_for_gaussian() {
        let spec = BinaryStationarySpec::symmetric(0.4).unwrap().validated().unwrap();
        let model = gaussian();
        let cfg = InterchangeConfig { n: 6, label: 1, epsilon: 0.3, replicates: 800, seed: 4, outer_h: 1e-2, inner_h: 1e-4 };
        for c in interchange_check(&spec, &model, &cfg).unwrap() {
            assert!(c.agrees(4.0, 1e-6), "{c:?}");
        }
    }
}
