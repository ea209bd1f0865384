//! Hidden-state, noise and observation paths over an index window `[-m, n]`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chain::{Matrix, ValidatedSpec};
use crate::error::{Error, Result};
use crate::models::InteractionModel;

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    m: usize,
    n: usize,
    eta: Vec<usize>,
    noise_dim: usize,
    z: Vec<f64>,
    epsilon: f64,
    x: Vec<f64>,
}

impl Trajectory {
    /// Assembles a trajectory from stored states and noise; `z` is laid out
    /// index-major with `model.noise_dim()` values per index.
    pub fn new(
        model: &dyn InteractionModel,
        eta: Vec<usize>,
        z: Vec<f64>,
        epsilon: f64,
        m: usize,
        n: usize,
    ) -> Result<Self> {
        let len = m + n + 1;
        let dim = model.noise_dim();
        if eta.len() != len || z.len() != len * dim {
            return Err(Error::InvalidArgument(format!(
                "window [-{m}, {n}] needs {len} states and {} noise values, got {} and {}",
                len * dim,
                eta.len(),
                z.len()
            )));
        }
        let x = eta
            .iter()
            .zip(z.chunks(dim))
            .map(|(&a, zt)| model.phi(zt, model.theta(a, epsilon)))
            .collect();
        Ok(Self { m, n, eta, noise_dim: dim, z, epsilon, x })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lo(&self) -> i64 {
        -(self.m as i64)
    }

    pub fn hi(&self) -> i64 {
        self.n as i64
    }

    pub fn len(&self) -> usize {
        self.eta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta.is_empty()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn indices(&self) -> impl Iterator<Item = i64> {
        self.lo()..=self.hi()
    }

    fn pos(&self, t: i64) -> usize {
        assert!(
            t >= self.lo() && t <= self.hi(),
            "index {t} outside trajectory window [{}, {}]",
            self.lo(),
            self.hi()
        );
        (t - self.lo()) as usize
    }

    pub fn contains(&self, t: i64) -> bool {
        t >= self.lo() && t <= self.hi()
    }

    pub fn eta_at(&self, t: i64) -> usize {
        self.eta[self.pos(t)]
    }

    pub fn noise_at(&self, t: i64) -> &[f64] {
        let p = self.pos(t);
        &self.z[p * self.noise_dim..(p + 1) * self.noise_dim]
    }

    pub fn x_at(&self, t: i64) -> f64 {
        self.x[self.pos(t)]
    }

    pub fn eta(&self) -> &[usize] {
        &self.eta
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    /// `X_t(ε) = φ(Z_t, θ_{η_t}(ε))` for a signal strength other than the
    /// stored one.
    pub fn observation(&self, model: &dyn InteractionModel, t: i64, epsilon: f64) -> f64 {
        model.phi(self.noise_at(t), model.theta(self.eta_at(t), epsilon))
    }

    /// Restriction to `[-m', n']` with `m' <= m`, `n' <= n`.
    pub fn sub_window(&self, m: usize, n: usize) -> Result<Self> {
        if m > self.m || n > self.n {
            return Err(Error::IndexOutOfWindow {
                index: if m > self.m { -(m as i64) } else { n as i64 },
                lo: self.lo(),
                hi: self.hi(),
            });
        }
        let a = self.m - m;
        let b = a + m + n + 1;
        Ok(Self {
            m,
            n,
            eta: self.eta[a..b].to_vec(),
            noise_dim: self.noise_dim,
            z: self.z[a * self.noise_dim..b * self.noise_dim].to_vec(),
            epsilon: self.epsilon,
            x: self.x[a..b].to_vec(),
        })
    }

    /// The same path re-indexed so that index `t` becomes 0.
    pub fn recentered(&self, t: i64) -> Result<Self> {
        if !self.contains(t) {
            return Err(Error::IndexOutOfWindow { index: t, lo: self.lo(), hi: self.hi() });
        }
        let mut out = self.clone();
        out.m = (self.m as i64 + t) as usize;
        out.n = (self.n as i64 - t) as usize;
        Ok(out)
    }
}

fn draw(rng: &mut dyn RngCore, probs: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

fn row(m: &Matrix, a: usize) -> impl Iterator<Item = f64> + '_ {
    (0..m.ncols()).map(move |b| m[(a, b)])
}

/// Simulates `(η, Z, X)` over `[-m, n]`.
///
/// `η_0` is drawn from the declared law at index 0 (or fixed to `eta0`),
/// later states follow the forward transitions, earlier states the reverse
/// conditionals; noise is iid from the model and independent of `η`.
pub fn simulate_with_rng(
    spec: &ValidatedSpec,
    model: &dyn InteractionModel,
    epsilon: f64,
    m: usize,
    n: usize,
    eta0: Option<usize>,
    rng: &mut dyn RngCore,
) -> Result<Trajectory> {
    let window = spec.centered_window(m, n)?;
    let len = m + n + 1;
    let mut eta = vec![0usize; len];
    let origin = m;
    eta[origin] = match eta0 {
        Some(a) if a < spec.num_states() => a,
        Some(a) => return Err(Error::InvalidArgument(format!("state index {a} out of range"))),
        None => draw(rng, window.marginal(0)?.iter().copied()),
    };
    for t in 1..=n as i64 {
        let prev = eta[origin + t as usize - 1];
        eta[origin + t as usize] = draw(rng, row(window.forward(t - 1)?, prev));
    }
    for t in (-(m as i64)..0).rev() {
        let next = eta[(origin as i64 + t + 1) as usize];
        eta[(origin as i64 + t) as usize] = draw(rng, row(window.reverse(t + 1)?, next));
    }
    let dim = model.noise_dim();
    let mut z = vec![0.0; len * dim];
    for chunk in z.chunks_mut(dim) {
        model.sample_noise(rng, chunk);
    }
    Trajectory::new(model, eta, z, epsilon, m, n)
}

/// Seeded simulation; identical seeds give identical trajectories.
pub fn simulate(
    spec: &ValidatedSpec,
    model: &dyn InteractionModel,
    epsilon: f64,
    m: usize,
    n: usize,
    seed: u64,
) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_with_rng(spec, model, epsilon, m, n, None, &mut rng)
}
