//! Exact filtering: the ψ table, rescaled L-matrix recursions, Λ ratios,
//! posteriors with full and local likelihood ratios, and a path-enumeration
//! oracle for all of them.

use crate::chain::{ChainWindow, Matrix, ValidatedSpec};
use crate::error::{Error, Result};
use crate::models::InteractionModel;
use crate::trajectory::Trajectory;

/// Normalized L entries below this trigger an extra mid-step rescale.
pub const UNDERFLOW_GUARD: f64 = 1e-280;

/// Largest path count the enumeration oracle will visit.
pub const BRUTE_FORCE_LIMIT: u64 = 1 << 20;

/// `ln ψ_t(ε, c)` with `ψ_t(ε, c) = f(X_t(ε), θ_c(ε))`.
pub fn psi(model: &dyn InteractionModel, traj: &Trajectory, t: i64, epsilon: f64, c: usize) -> Result<f64> {
    if !traj.contains(t) {
        return Err(Error::IndexOutOfWindow { index: t, lo: traj.lo(), hi: traj.hi() });
    }
    let x = traj.observation(model, t, epsilon);
    let v = model.log_density(x, model.theta(c, epsilon));
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteDensity { t, label: c, epsilon })
    }
}

/// `ln ψ_t(ε, c)` for every index of a window and every label.
#[derive(Clone, Debug, PartialEq)]
pub struct PsiTable {
    lo: i64,
    hi: i64,
    k: usize,
    log: Vec<f64>,
}

impl PsiTable {
    pub fn compute(model: &dyn InteractionModel, traj: &Trajectory, k: usize, epsilon: f64) -> Result<Self> {
        let mut log = Vec::with_capacity(traj.len() * k);
        for t in traj.indices() {
            for c in 0..k {
                log.push(psi(model, traj, t, epsilon, c)?);
            }
        }
        Ok(Self { lo: traj.lo(), hi: traj.hi(), k, log })
    }

    /// Table from raw log values laid out index-major.
    pub fn from_log_values(lo: i64, hi: i64, k: usize, log: Vec<f64>) -> Result<Self> {
        if hi < lo || log.len() != (hi - lo + 1) as usize * k {
            return Err(Error::InvalidArgument("psi table shape mismatch".into()));
        }
        if let Some(i) = log.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteDensity { t: lo + (i / k) as i64, label: i % k, epsilon: f64::NAN });
        }
        Ok(Self { lo, hi, k, log })
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn hi(&self) -> i64 {
        self.hi
    }

    pub fn row(&self, t: i64) -> &[f64] {
        let p = (t - self.lo) as usize;
        &self.log[p * self.k..(p + 1) * self.k]
    }

    pub fn get(&self, t: i64, c: usize) -> f64 {
        self.row(t)[c]
    }

    /// Multiplies every `ψ_t(·)` at index `t` by `exp(log_factor)`.
    pub fn scale_index(&mut self, t: i64, log_factor: f64) {
        let p = (t - self.lo) as usize;
        for v in &mut self.log[p * self.k..(p + 1) * self.k] {
            *v += log_factor;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Indices `origin + 1, origin + 2, ...` through `P_{t-1,t}`.
    Forward,
    /// Indices `origin - 1, origin - 2, ...` through reverse conditionals.
    Backward,
}

/// One rescaled L-matrix: `L = exp(log_scale) * matrix`, `max(matrix) = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct LStep {
    pub log_scale: f64,
    pub matrix: Matrix,
}

/// `L_0 = I, L_1, ..., L_steps` in one direction from `origin`.
#[derive(Clone, Debug, PartialEq)]
pub struct LMatrixSequence {
    direction: Direction,
    origin: i64,
    steps: Vec<LStep>,
}

impl LMatrixSequence {
    pub fn build(window: &ChainWindow, psi: &PsiTable, direction: Direction, origin: i64, steps: usize) -> Result<Self> {
        let k = window.num_states();
        let mut out = Vec::with_capacity(steps + 1);
        out.push(LStep { log_scale: 0.0, matrix: Matrix::identity(k, k) });
        for s in 1..=steps as i64 {
            let (t, trans) = match direction {
                Direction::Forward => (origin + s, window.forward(origin + s - 1)?),
                Direction::Backward => (origin - s, window.reverse(origin - s + 1)?),
            };
            if t < psi.lo() || t > psi.hi() {
                return Err(Error::IndexOutOfWindow { index: t, lo: psi.lo(), hi: psi.hi() });
            }
            let prev = out.last().unwrap();
            let mut m = &prev.matrix * trans;
            let mut log_scale = prev.log_scale;
            let mx = m.max();
            if mx > 0.0 && mx < UNDERFLOW_GUARD {
                m /= mx;
                log_scale += mx.ln();
            }
            let row = psi.row(t);
            let peak = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (b, &lp) in row.iter().enumerate() {
                let w = (lp - peak).exp();
                m.column_mut(b).scale_mut(w);
            }
            log_scale += peak;
            let mx = m.max();
            if !(mx > 0.0 && mx.is_finite()) {
                return Err(Error::DegenerateDenominator);
            }
            m /= mx;
            log_scale += mx.ln();
            out.push(LStep { log_scale, matrix: m });
        }
        Ok(Self { direction, origin, steps: out })
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn origin(&self) -> i64 {
        self.origin
    }

    /// Largest available step count.
    pub fn len(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn step(&self, n: usize) -> &LStep {
        &self.steps[n]
    }

    pub fn matrix(&self, n: usize) -> &Matrix {
        &self.steps[n].matrix
    }

    /// `ln Σ_b L_{n,ab}` including the accumulated scale.
    pub fn log_row_sum(&self, n: usize, a: usize) -> f64 {
        self.steps[n].log_scale + self.steps[n].matrix.row(a).sum().ln()
    }

    /// `Λ_{n,a} = Σ_b L_{n,ab} / Σ_b L_{n,ıb}` with `ı` the first state.
    pub fn lambda(&self, n: usize, a: usize) -> Result<f64> {
        let m = &self.steps[n].matrix;
        let den = m.row(0).sum();
        if !(den > 0.0 && den.is_finite()) {
            return Err(Error::DegenerateDenominator);
        }
        Ok(m.row(a).sum() / den)
    }

    pub fn lambda_vector(&self, n: usize) -> Result<Vec<f64>> {
        (0..self.steps[n].matrix.nrows()).map(|a| self.lambda(n, a)).collect()
    }

    /// `(min_e, max_e)` of `L_{n,be} / L_{n,ae}`.
    pub fn row_ratio_extrema(&self, n: usize, a: usize, b: usize) -> (f64, f64) {
        let m = &self.steps[n].matrix;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for e in 0..m.ncols() {
            let q = m[(b, e)] / m[(a, e)];
            lo = lo.min(q);
            hi = hi.max(q);
        }
        (lo, hi)
    }

    /// `Δ_n = max_{a,b,c,d} |L_{bc}/L_{ac} - L_{bd}/L_{ad}|`; infinite while
    /// some entry is still zero.
    pub fn delta(&self, n: usize) -> f64 {
        let m = &self.steps[n].matrix;
        if m.iter().any(|&v| !(v > 0.0)) {
            return f64::INFINITY;
        }
        let k = m.nrows();
        let mut best = 0.0f64;
        for a in 0..k {
            for b in 0..k {
                let (lo, hi) = self.row_ratio_extrema(n, a, b);
                best = best.max(hi - lo);
            }
        }
        best
    }
}

/// Per-index output of the filter.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorEntry {
    pub t: i64,
    pub posterior: Vec<f64>,
    /// `ρ_{t,mn}`, posterior odds of H1 against H0.
    pub rho: f64,
    pub log_flr: f64,
    pub log_llr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorResult {
    pub m: usize,
    pub n: usize,
    pub epsilon: f64,
    pub entries: Vec<PosteriorEntry>,
}

impl PosteriorResult {
    pub fn at(&self, t: i64) -> &PosteriorEntry {
        &self.entries[(t + self.m as i64) as usize]
    }
}

fn lse(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let mx = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + xs.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

fn ln_prob(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Filtering quantities on a fixed ψ table.
#[derive(Clone, Debug)]
pub struct Filter<'a> {
    spec: &'a ValidatedSpec,
    window: &'a ChainWindow,
    psi: PsiTable,
}

impl<'a> Filter<'a> {
    pub fn new(spec: &'a ValidatedSpec, window: &'a ChainWindow, psi: PsiTable) -> Result<Self> {
        if psi.lo() < window.lo() || psi.hi() > window.hi() {
            return Err(Error::IndexOutOfWindow { index: psi.lo(), lo: window.lo(), hi: window.hi() });
        }
        Ok(Self { spec, window, psi })
    }

    pub fn psi(&self) -> &PsiTable {
        &self.psi
    }

    pub fn window(&self) -> &ChainWindow {
        self.window
    }

    fn k(&self) -> usize {
        self.window.num_states()
    }

    fn check_sub_window(&self, m: usize, n: usize) -> Result<()> {
        let (lo, hi) = (-(m as i64), n as i64);
        if lo < self.psi.lo() {
            return Err(Error::IndexOutOfWindow { index: lo, lo: self.psi.lo(), hi: self.psi.hi() });
        }
        if hi > self.psi.hi() {
            return Err(Error::IndexOutOfWindow { index: hi, lo: self.psi.lo(), hi: self.psi.hi() });
        }
        Ok(())
    }

    pub fn l_sequence(&self, direction: Direction, origin: i64, steps: usize) -> Result<LMatrixSequence> {
        LMatrixSequence::build(self.window, &self.psi, direction, origin, steps)
    }

    /// `Σ_{H1} w_a / Σ_{H0} w_a` in log scale.
    fn log_odds(&self, logw: &[f64]) -> f64 {
        let k = self.k();
        let h1 = lse((0..k).filter(|&a| self.spec.is_h1(a)).map(|a| logw[a]));
        let h0 = lse((0..k).filter(|&a| !self.spec.is_h1(a)).map(|a| logw[a]));
        h1 - h0
    }

    fn log_llr(&self, t: i64) -> Result<f64> {
        let p = self.window.marginal(t)?;
        let w: Vec<f64> = (0..self.k()).map(|a| ln_prob(p[a]) + self.psi.get(t, a)).collect();
        Ok(self.log_odds(&w))
    }

    fn entry(&self, t: i64, logw: Vec<f64>) -> Result<PosteriorEntry> {
        let total = lse(logw.iter().copied());
        let posterior = logw.iter().map(|w| (w - total).exp()).collect();
        let log_flr = self.log_odds(&logw);
        Ok(PosteriorEntry { t, posterior, rho: log_flr.exp(), log_flr, log_llr: self.log_llr(t)? })
    }

    /// Forward-backward over `[-m, n]` in log scale.
    pub fn posterior(&self, m: usize, n: usize) -> Result<PosteriorResult> {
        self.check_sub_window(m, n)?;
        let k = self.k();
        let (lo, hi) = (-(m as i64), n as i64);
        let len = (hi - lo + 1) as usize;
        let mut alpha = vec![vec![0.0; k]; len];
        let p_lo = self.window.marginal(lo)?;
        for a in 0..k {
            alpha[0][a] = ln_prob(p_lo[a]) + self.psi.get(lo, a);
        }
        for i in 1..len {
            let t = lo + i as i64;
            let q = self.window.forward(t - 1)?;
            for b in 0..k {
                let acc = lse((0..k).map(|a| alpha[i - 1][a] + ln_prob(q[(a, b)])));
                alpha[i][b] = acc + self.psi.get(t, b);
            }
        }
        let mut beta = vec![vec![0.0; k]; len];
        for i in (0..len - 1).rev() {
            let t = lo + i as i64;
            let q = self.window.forward(t)?;
            for a in 0..k {
                beta[i][a] =
                    lse((0..k).map(|b| ln_prob(q[(a, b)]) + self.psi.get(t + 1, b) + beta[i + 1][b]));
            }
        }
        let entries = (0..len)
            .map(|i| {
                let w = (0..k).map(|a| alpha[i][a] + beta[i][a]).collect();
                self.entry(lo + i as i64, w)
            })
            .collect::<Result<_>>()?;
        Ok(PosteriorResult { m, n, epsilon: f64::NAN, entries })
    }

    /// `ρ_{t,mn}` assembled from `ψ_t P_t Λ_{-(t+m)} Λ_{n-t}` around index `t`.
    pub fn rho_via_lambda(&self, t: i64, m: usize, n: usize) -> Result<f64> {
        self.check_sub_window(m, n)?;
        let (lo, hi) = (-(m as i64), n as i64);
        if t < lo || t > hi {
            return Err(Error::IndexOutOfWindow { index: t, lo, hi });
        }
        let back = self.l_sequence(Direction::Backward, t, (t - lo) as usize)?;
        let fwd = self.l_sequence(Direction::Forward, t, (hi - t) as usize)?;
        let p = self.window.marginal(t)?;
        let k = self.k();
        let w: Vec<f64> = (0..k)
            .map(|a| {
                ln_prob(p[a])
                    + self.psi.get(t, a)
                    + back.lambda(back.len(), a).map(f64::ln).unwrap_or(f64::NAN)
                    + fwd.lambda(fwd.len(), a).map(f64::ln).unwrap_or(f64::NAN)
            })
            .collect();
        if w.iter().any(|v| v.is_nan()) {
            return Err(Error::DegenerateDenominator);
        }
        Ok(self.log_odds(&w).exp())
    }

    fn path_limit(k: usize, len: usize) -> Result<()> {
        let paths = (k as f64).powi(len as i32);
        if paths > BRUTE_FORCE_LIMIT as f64 {
            Err(Error::WindowTooLarge { paths, limit: BRUTE_FORCE_LIMIT })
        } else {
            Ok(())
        }
    }

    /// Exact posterior by summing over every hidden path in `[-m, n]`.
    pub fn brute_force_posterior(&self, m: usize, n: usize) -> Result<PosteriorResult> {
        self.check_sub_window(m, n)?;
        let k = self.k();
        let (lo, hi) = (-(m as i64), n as i64);
        let len = (hi - lo + 1) as usize;
        Self::path_limit(k, len)?;
        let p_lo = self.window.marginal(lo)?;
        let trans: Vec<&Matrix> = (lo..hi).map(|t| self.window.forward(t)).collect::<Result<_>>()?;
        let mut acc = vec![vec![f64::NEG_INFINITY; k]; len];
        let mut path = vec![0usize; len];
        loop {
            let mut w = ln_prob(p_lo[path[0]]) + self.psi.get(lo, path[0]);
            for i in 1..len {
                w += ln_prob(trans[i - 1][(path[i - 1], path[i])]) + self.psi.get(lo + i as i64, path[i]);
            }
            if w > f64::NEG_INFINITY {
                for i in 0..len {
                    let cell = &mut acc[i][path[i]];
                    *cell = lse([*cell, w]);
                }
            }
            if !advance(&mut path, k) {
                break;
            }
        }
        let entries = acc
            .into_iter()
            .enumerate()
            .map(|(i, w)| self.entry(lo + i as i64, w))
            .collect::<Result<_>>()?;
        Ok(PosteriorResult { m, n, epsilon: f64::NAN, entries })
    }

    /// `ln Σ_b L_{n,ab}` by enumerating the `K^steps` continuations of a
    /// path that starts in state `a` at `origin`.
    pub fn brute_force_log_row_sum(&self, direction: Direction, origin: i64, steps: usize, a: usize) -> Result<f64> {
        let k = self.k();
        Self::path_limit(k, steps)?;
        let mut trans = Vec::with_capacity(steps);
        let mut idx = Vec::with_capacity(steps);
        for s in 1..=steps as i64 {
            match direction {
                Direction::Forward => {
                    trans.push(self.window.forward(origin + s - 1)?);
                    idx.push(origin + s);
                }
                Direction::Backward => {
                    trans.push(self.window.reverse(origin - s + 1)?);
                    idx.push(origin - s);
                }
            }
        }
        let mut total = f64::NEG_INFINITY;
        let mut path = vec![0usize; steps];
        loop {
            let mut prev = a;
            let mut w = 0.0;
            for i in 0..steps {
                w += ln_prob(trans[i][(prev, path[i])]) + self.psi.get(idx[i], path[i]);
                prev = path[i];
            }
            total = lse([total, w]);
            if !advance(&mut path, k) {
                break;
            }
        }
        Ok(total)
    }

    /// `Λ_{n,a}` from enumeration.
    pub fn brute_force_lambda(&self, direction: Direction, origin: i64, steps: usize, a: usize) -> Result<f64> {
        let num = self.brute_force_log_row_sum(direction, origin, steps, a)?;
        let den = self.brute_force_log_row_sum(direction, origin, steps, 0)?;
        Ok((num - den).exp())
    }
}

/// Odometer increment; false once every path has been visited.
fn advance(path: &mut [usize], k: usize) -> bool {
    for d in path.iter_mut().rev() {
        *d += 1;
        if *d < k {
            return true;
        }
        *d = 0;
    }
    false
}

/// A spec, a model and one trajectory, evaluated at arbitrary signal
/// strength with the noise held fixed.
pub struct Scenario<'a> {
    spec: &'a ValidatedSpec,
    model: &'a dyn InteractionModel,
    traj: &'a Trajectory,
    window: ChainWindow,
}

impl<'a> Scenario<'a> {
    pub fn new(spec: &'a ValidatedSpec, model: &'a dyn InteractionModel, traj: &'a Trajectory) -> Result<Self> {
        let window = spec.window(traj.lo(), traj.hi())?;
        Ok(Self { spec, model, traj, window })
    }

    pub fn spec(&self) -> &ValidatedSpec {
        self.spec
    }

    pub fn model(&self) -> &dyn InteractionModel {
        self.model
    }

    pub fn trajectory(&self) -> &Trajectory {
        self.traj
    }

    pub fn window(&self) -> &ChainWindow {
        &self.window
    }

    pub fn psi_table(&self, epsilon: f64) -> Result<PsiTable> {
        PsiTable::compute(self.model, self.traj, self.spec.num_states(), epsilon)
    }

    pub fn filter(&self, epsilon: f64) -> Result<Filter<'_>> {
        Filter::new(self.spec, &self.window, self.psi_table(epsilon)?)
    }

    pub fn forward_l(&self, epsilon: f64, n: usize) -> Result<LMatrixSequence> {
        self.filter(epsilon)?.l_sequence(Direction::Forward, 0, n)
    }

    pub fn backward_l(&self, epsilon: f64, n: usize) -> Result<LMatrixSequence> {
        self.filter(epsilon)?.l_sequence(Direction::Backward, 0, n)
    }

    pub fn posterior(&self, epsilon: f64, m: usize, n: usize) -> Result<PosteriorResult> {
        let mut r = self.filter(epsilon)?.posterior(m, n)?;
        r.epsilon = epsilon;
        Ok(r)
    }

    pub fn brute_force_posterior(&self, epsilon: f64, m: usize, n: usize) -> Result<PosteriorResult> {
        let mut r = self.filter(epsilon)?.brute_force_posterior(m, n)?;
        r.epsilon = epsilon;
        Ok(r)
    }

    /// `ln Λ_{n,a}(ε)` at origin 0; negative `n` runs backward.
    pub fn log_lambda(&self, epsilon: f64, n: i64, a: usize) -> Result<f64> {
        let f = self.filter(epsilon)?;
        let seq = if n >= 0 {
            f.l_sequence(Direction::Forward, 0, n as usize)?
        } else {
            f.l_sequence(Direction::Backward, 0, (-n) as usize)?
        };
        Ok(seq.lambda(seq.len(), a)?.ln())
    }

    /// `λ_n(ε) = ln Σ_b L_{n,1b} - ln Σ_b L_{n,0b}` for a binary chain.
    pub fn log_lambda_contrast(&self, epsilon: f64, n: i64) -> Result<f64> {
        if !self.spec.is_binary() {
            return Err(Error::NotBinary);
        }
        self.log_lambda(epsilon, n, 1)
    }

    /// `ln(FLR / LLR)` at index 0 over `[-m, n]`.
    pub fn log_flr_over_llr(&self, epsilon: f64, m: usize, n: usize) -> Result<f64> {
        let r = self.posterior(epsilon, m, n)?;
        let e = r.at(0);
        Ok(e.log_flr - e.log_llr)
    }
}

/// `ρ_{t,mn}` along an increasing schedule of windows.
#[derive(Clone, Debug, PartialEq)]
pub struct MartingaleProbe {
    pub rho: Vec<f64>,
    /// Largest `|ρ_{i+1} - ρ_i|` over the second half of the schedule.
    pub tail_max_diff: f64,
    /// `|ρ_last - ρ_previous|`.
    pub last_diff: f64,
}

pub fn martingale_convergence_probe(
    scenario: &Scenario<'_>,
    epsilon: f64,
    t: i64,
    schedule: &[(usize, usize)],
) -> Result<MartingaleProbe> {
    if schedule.windows(2).any(|w| w[1].0 < w[0].0 || w[1].1 < w[0].1) {
        return Err(Error::InvalidArgument("window schedule must be nondecreasing".into()));
    }
    let filter = scenario.filter(epsilon)?;
    let rho = schedule
        .iter()
        .map(|&(m, n)| {
            let r = filter.posterior(m, n)?;
            if t < -(m as i64) || t > n as i64 {
                return Err(Error::IndexOutOfWindow { index: t, lo: -(m as i64), hi: n as i64 });
            }
            Ok(r.at(t).rho)
        })
        .collect::<Result<Vec<_>>>()?;
    let start = rho.len() / 2;
    let tail_max_diff = rho[start.max(1).min(rho.len())..]
        .iter()
        .zip(&rho[start.max(1) - 1..])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let last_diff = match rho.len() {
        0 | 1 => 0.0,
        l => (rho[l - 1] - rho[l - 2]).abs(),
    };
    Ok(MartingaleProbe { rho, tail_max_diff, last_diff })
}
