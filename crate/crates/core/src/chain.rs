//! The hidden signal chain: state space, null partition, transition laws and
//! the uniform minorization floor.
//!
//! Indices are signed. `P_{t,t+1}` is the one-step matrix used between
//! indices `t` and `t+1`; time-varying chains store a contiguous run of such
//! matrices and reuse the nearest stored one outside that run.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

const STOCHASTIC_TOL: f64 = 1e-12;
const FLOOR_SLACK: f64 = 1e-12;

/// One-step transition law of the hidden chain.
#[derive(Clone, Debug, PartialEq)]
pub enum Transitions {
    Stationary(Matrix),
    /// `matrices[i]` is `P_{offset+i, offset+i+1}`.
    TimeVarying { offset: i64, matrices: Vec<Matrix> },
}

impl Transitions {
    /// `P_{t,t+1}`, extending a time-varying run by its nearest stored matrix.
    pub fn at(&self, t: i64) -> &Matrix {
        match self {
            Transitions::Stationary(q) => q,
            Transitions::TimeVarying { offset, matrices } => {
                let last = matrices.len() as i64 - 1;
                let i = (t - offset).clamp(0, last);
                &matrices[i as usize]
            }
        }
    }

    pub fn is_stationary(&self) -> bool {
        matches!(self, Transitions::Stationary(_))
    }

    fn matrices(&self) -> Vec<(i64, &Matrix)> {
        match self {
            Transitions::Stationary(q) => vec![(0, q)],
            Transitions::TimeVarying { offset, matrices } => matrices
                .iter()
                .enumerate()
                .map(|(i, m)| (offset + i as i64, m))
                .collect(),
        }
    }
}

/// Unvalidated description of a finite-state hidden chain.
#[derive(Clone, Debug, PartialEq)]
pub struct HmmSpec {
    pub states: Vec<String>,
    /// `true` when the state belongs to H1 (the null is false).
    pub h1: Vec<bool>,
    /// Marginal law of the chain at index 0.
    pub initial: Vec<f64>,
    pub transitions: Transitions,
    pub kappa: usize,
    pub phi_star: f64,
}

/// A spec whose invariants have been checked.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidatedSpec {
    spec: HmmSpec,
    verified_floor: f64,
}

impl HmmSpec {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn validate(self) -> Result<ValidatedSpec> {
        validate_spec(self)
    }
}

/// Checks every structural invariant and the κ-step floor. Returns the spec
/// annotated with the smallest κ-step transition probability observed.
pub fn validate_spec(spec: HmmSpec) -> Result<ValidatedSpec> {
    let k = spec.states.len();
    if k < 2 {
        return Err(Error::InvalidSpec(format!("need at least 2 states, got {k}")));
    }
    if spec.h1.len() != k {
        return Err(Error::InvalidSpec("null partition length differs from state count".into()));
    }
    if !spec.h1.iter().any(|&b| b) {
        return Err(Error::EmptyPartitionClass("H1"));
    }
    if spec.h1.iter().all(|&b| b) {
        return Err(Error::EmptyPartitionClass("H0"));
    }
    if spec.kappa == 0 {
        return Err(Error::InvalidSpec("kappa must be a positive integer".into()));
    }
    if !(spec.phi_star > 0.0 && spec.phi_star <= 1.0 / k as f64 + 1e-15) {
        return Err(Error::InvalidSpec(format!(
            "phi_star = {} must lie in (0, 1/K]",
            spec.phi_star
        )));
    }
    if spec.initial.len() != k {
        return Err(Error::InvalidInitial(format!("length {} for {k} states", spec.initial.len())));
    }
    let total: f64 = spec.initial.iter().sum();
    if spec.initial.iter().any(|&p| !(p > 0.0)) || (total - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::InvalidInitial(format!("{:?}", spec.initial)));
    }
    if let Transitions::TimeVarying { matrices, .. } = &spec.transitions {
        if matrices.is_empty() {
            return Err(Error::InvalidSpec("time-varying transitions need at least one matrix".into()));
        }
    }
    for (index, m) in spec.transitions.matrices() {
        if m.nrows() != k || m.ncols() != k {
            return Err(Error::InvalidSpec(format!(
                "transition matrix at index {index} is {}x{}, expected {k}x{k}",
                m.nrows(),
                m.ncols()
            )));
        }
        for row in 0..k {
            let r = m.row(row);
            let sum: f64 = r.iter().sum();
            if r.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::NonStochasticRow { index, row, sum });
            }
        }
    }

    // Every distinct κ-step product starts within κ of the stored run.
    let starts: Vec<i64> = match &spec.transitions {
        Transitions::Stationary(_) => vec![0],
        Transitions::TimeVarying { offset, matrices } => {
            let kappa = spec.kappa as i64;
            (offset - kappa..=offset + matrices.len() as i64).collect()
        }
    };
    let mut floor = f64::INFINITY;
    for s in starts {
        let t = s + spec.kappa as i64;
        let p = product(&spec.transitions, s, t, k);
        for a in 0..k {
            for b in 0..k {
                let value = p[(a, b)];
                if value < spec.phi_star - FLOOR_SLACK {
                    return Err(Error::FloorViolation {
                        s,
                        t,
                        a,
                        b,
                        value,
                        phi_star: spec.phi_star,
                        kappa: spec.kappa,
                    });
                }
                floor = floor.min(value);
            }
        }
    }
    Ok(ValidatedSpec { spec, verified_floor: floor })
}

fn product(transitions: &Transitions, s: i64, t: i64, k: usize) -> Matrix {
    let mut p = Matrix::identity(k, k);
    for u in s..t {
        p *= transitions.at(u);
    }
    p
}

impl ValidatedSpec {
    pub fn spec(&self) -> &HmmSpec {
        &self.spec
    }

    pub fn num_states(&self) -> usize {
        self.spec.states.len()
    }

    pub fn kappa(&self) -> usize {
        self.spec.kappa
    }

    pub fn phi_star(&self) -> f64 {
        self.spec.phi_star
    }

    /// Smallest κ-step transition probability seen during validation.
    pub fn verified_floor(&self) -> f64 {
        self.verified_floor
    }

    pub fn is_h1(&self, a: usize) -> bool {
        self.spec.h1[a]
    }

    pub fn initial(&self) -> &[f64] {
        &self.spec.initial
    }

    pub fn transitions(&self) -> &Transitions {
        &self.spec.transitions
    }

    pub fn transition(&self, t: i64) -> &Matrix {
        self.spec.transitions.at(t)
    }

    pub fn is_stationary(&self) -> bool {
        self.spec.transitions.is_stationary()
    }

    /// Two states with H1 = {1}.
    pub fn is_binary(&self) -> bool {
        self.spec.h1 == [false, true]
    }

    /// `P_{st}`, the product of the one-step matrices between `s` and `t`.
    pub fn k_step(&self, s: i64, t: i64) -> Result<Matrix> {
        if s > t {
            return Err(Error::IndexOrder { s, t });
        }
        Ok(product(&self.spec.transitions, s, t, self.num_states()))
    }

    /// Builds the two-sided chain law over the index window `[lo, hi]`.
    pub fn window(&self, lo: i64, hi: i64) -> Result<ChainWindow> {
        ChainWindow::new(self, lo, hi)
    }

    /// Window `[-m, n]`.
    pub fn centered_window(&self, m: usize, n: usize) -> Result<ChainWindow> {
        ChainWindow::new(self, -(m as i64), n as i64)
    }
}

/// Stationary law `π` with `π Q = π`.
pub fn stationary_distribution(q: &Matrix) -> Result<Vector> {
    let k = q.nrows();
    let mut a = q.transpose() - Matrix::identity(k, k);
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    let mut rhs = Vector::zeros(k);
    rhs[k - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidSpec("transition matrix has no unique stationary law".into()))?;
    Ok(pi)
}

/// The two-sided law of the hidden chain restricted to `[lo, hi]`.
///
/// Marginals at negative indices are propagated backward from the declared
/// law at index 0. Reverse conditionals `R_t(a, b) = P(η_{t-1} = b | η_t = a)`
/// follow from the marginals and the forward matrices.
#[derive(Clone, Debug)]
pub struct ChainWindow {
    lo: i64,
    hi: i64,
    k: usize,
    marginals: Vec<Vector>,
    forward: Vec<Matrix>,
    reverse: Vec<Matrix>,
    reverse_floor: Option<f64>,
}

impl ChainWindow {
    fn new(spec: &ValidatedSpec, lo: i64, hi: i64) -> Result<Self> {
        if lo > hi {
            return Err(Error::IndexOrder { s: lo, t: hi });
        }
        let k = spec.num_states();
        let span_lo = lo.min(0);
        let span_hi = hi.max(0);
        let p0 = Vector::from_column_slice(spec.initial());

        let stationary_law = match spec.transitions() {
            Transitions::Stationary(q) => {
                let pi = stationary_distribution(q)?;
                ((&pi - &p0).amax() < 1e-12).then_some(pi)
            }
            Transitions::TimeVarying { .. } => None,
        };

        let mut marg = vec![Vector::zeros(k); (span_hi - span_lo + 1) as usize];
        let idx = |t: i64| (t - span_lo) as usize;
        marg[idx(0)] = stationary_law.clone().unwrap_or_else(|| p0.clone());
        for t in 1..=span_hi {
            let prev = &marg[idx(t - 1)];
            let next = spec.transition(t - 1).transpose() * prev;
            marg[idx(t)] = next;
        }
        for t in (span_lo..0).rev() {
            let next = marg[idx(t + 1)].clone();
            let cur = match &stationary_law {
                Some(pi) => pi.clone(),
                None => {
                    let m = spec.transition(t);
                    let mut x = m.transpose().lu().solve(&next).ok_or_else(|| {
                        Error::BackwardMarginal { index: t, reason: "singular transition matrix".into() }
                    })?;
                    if x.iter().any(|&p| !(p > 0.0)) {
                        return Err(Error::BackwardMarginal {
                            index: t,
                            reason: format!("non-positive entry in {:?}", x.as_slice()),
                        });
                    }
                    let s = x.sum();
                    x /= s;
                    x
                }
            };
            marg[idx(t)] = cur;
        }

        let marginals: Vec<Vector> = (lo..=hi).map(|t| marg[idx(t)].clone()).collect();
        let forward: Vec<Matrix> = (lo..hi).map(|t| spec.transition(t).clone()).collect();
        let mut reverse = Vec::with_capacity((hi - lo) as usize);
        for t in lo + 1..=hi {
            let cur = &marg[idx(t)];
            let prev = &marg[idx(t - 1)];
            let m = spec.transition(t - 1);
            let r = Matrix::from_fn(k, k, |a, b| prev[b] * m[(b, a)] / cur[a]);
            reverse.push(r);
        }
        let kappa = spec.kappa() as i64;
        let mut window = ChainWindow { lo, hi, k, marginals, forward, reverse, reverse_floor: None };
        if hi - lo >= kappa {
            let mut floor = f64::INFINITY;
            for t in lo + kappa..=hi {
                let p = window.reverse_k_step(t, t - kappa)?;
                floor = floor.min(p.min());
            }
            window.reverse_floor = Some(floor);
        }
        Ok(window)
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn hi(&self) -> i64 {
        self.hi
    }

    pub fn num_states(&self) -> usize {
        self.k
    }

    fn check(&self, t: i64) -> Result<()> {
        if t < self.lo || t > self.hi {
            Err(Error::IndexOutOfWindow { index: t, lo: self.lo, hi: self.hi })
        } else {
            Ok(())
        }
    }

    /// `P_t`, the marginal law at index `t`.
    pub fn marginal(&self, t: i64) -> Result<&Vector> {
        self.check(t)?;
        Ok(&self.marginals[(t - self.lo) as usize])
    }

    /// `P_{t,t+1}`; requires `lo <= t < hi`.
    pub fn forward(&self, t: i64) -> Result<&Matrix> {
        self.check(t)?;
        self.check(t + 1)?;
        Ok(&self.forward[(t - self.lo) as usize])
    }

    /// `P(η_{t-1} = b | η_t = a)`; requires `lo < t <= hi`.
    pub fn reverse(&self, t: i64) -> Result<&Matrix> {
        self.check(t)?;
        self.check(t - 1)?;
        Ok(&self.reverse[(t - self.lo - 1) as usize])
    }

    /// `P_{st}` for `s <= t` inside the window.
    pub fn k_step(&self, s: i64, t: i64) -> Result<Matrix> {
        if s > t {
            return Err(Error::IndexOrder { s, t });
        }
        self.check(s)?;
        self.check(t)?;
        let mut p = Matrix::identity(self.k, self.k);
        for u in s..t {
            p *= &self.forward[(u - self.lo) as usize];
        }
        Ok(p)
    }

    /// `P(η_t = b | η_s = a)` for `t <= s`, built from reverse conditionals.
    pub fn reverse_k_step(&self, s: i64, t: i64) -> Result<Matrix> {
        if t > s {
            return Err(Error::IndexOrder { s: t, t: s });
        }
        self.check(s)?;
        self.check(t)?;
        let mut p = Matrix::identity(self.k, self.k);
        for u in (t + 1..=s).rev() {
            p *= &self.reverse[(u - self.lo - 1) as usize];
        }
        Ok(p)
    }

    /// Smallest κ-step reverse conditional in the window, when the window
    /// spans at least κ steps.
    pub fn reverse_floor(&self) -> Option<f64> {
        self.reverse_floor
    }
}

/// Stationary first-order binary chain parameterized by its switching
/// probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryStationarySpec {
    pub p01: f64,
    pub p10: f64,
}

impl BinaryStationarySpec {
    pub fn new(p01: f64, p10: f64) -> Result<Self> {
        if !(p01 > 0.0 && p01 < 1.0 && p10 > 0.0 && p10 < 1.0) {
            return Err(Error::InvalidSpec(format!(
                "p01 = {p01} and p10 = {p10} must lie in (0, 1)"
            )));
        }
        Ok(Self { p01, p10 })
    }

    /// Symmetric chain with second eigenvalue `r`.
    pub fn symmetric(r: f64) -> Result<Self> {
        let p = (1.0 - r) / 2.0;
        Self::new(p, p)
    }

    pub fn p0(&self) -> f64 {
        self.p10 / (self.p01 + self.p10)
    }

    pub fn p1(&self) -> f64 {
        self.p01 / (self.p01 + self.p10)
    }

    /// Second eigenvalue `1 - p01 - p10`.
    pub fn r(&self) -> f64 {
        1.0 - self.p01 - self.p10
    }

    pub fn q(&self) -> Matrix {
        Matrix::from_row_slice(2, 2, &[1.0 - self.p01, self.p01, self.p10, 1.0 - self.p10])
    }

    /// `D_{0t} = P_{0t}(1,1) - P_{0t}(0,1) = r^t`.
    pub fn d_coefficient(&self, t: u32) -> f64 {
        self.r().powi(t as i32)
    }

    /// Smallest one-step transition probability.
    pub fn min_transition(&self) -> f64 {
        self.p01.min(self.p10).min(1.0 - self.p01).min(1.0 - self.p10)
    }

    /// General spec with stationary initial law, κ = 1 and the floor set to
    /// the smallest transition probability.
    pub fn to_spec(&self) -> HmmSpec {
        self.to_spec_with_floor(self.min_transition())
    }

    pub fn to_spec_with_floor(&self, phi_star: f64) -> HmmSpec {
        HmmSpec {
            states: vec!["0".into(), "1".into()],
            h1: vec![false, true],
            initial: vec![self.p0(), self.p1()],
            transitions: Transitions::Stationary(self.q()),
            kappa: 1,
            phi_star,
        }
    }

    pub fn validated(&self) -> Result<ValidatedSpec> {
        self.to_spec().validate()
    }
}

/// On-disk form of a spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpecFile {
    Binary {
        p01: f64,
        p10: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        phi_star: Option<f64>,
    },
    General(GeneralSpecFile),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneralSpecFile {
    pub states: Vec<String>,
    pub h1_states: Vec<String>,
    /// Omitted means the stationary law of a time-homogeneous chain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
    pub transitions: TransitionsFile,
    #[serde(default = "default_kappa")]
    pub kappa: usize,
    pub phi_star: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transitions_offset: Option<i64>,
}

fn default_kappa() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TransitionsFile {
    Single(Vec<Vec<f64>>),
    Sequence(Vec<Vec<Vec<f64>>>),
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let k = rows.len();
    if k == 0 || rows.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidSpec("transition matrix must be square and nonempty".into()));
    }
    Ok(Matrix::from_fn(k, k, |i, j| rows[i][j]))
}

impl SpecFile {
    pub fn into_spec(self) -> Result<HmmSpec> {
        match self {
            SpecFile::Binary { p01, p10, phi_star } => {
                let b = BinaryStationarySpec::new(p01, p10)?;
                Ok(match phi_star {
                    Some(f) => b.to_spec_with_floor(f),
                    None => b.to_spec(),
                })
            }
            SpecFile::General(g) => {
                let transitions = match &g.transitions {
                    TransitionsFile::Single(rows) => Transitions::Stationary(matrix_from_rows(rows)?),
                    TransitionsFile::Sequence(list) => Transitions::TimeVarying {
                        offset: g.transitions_offset.unwrap_or(0),
                        matrices: list.iter().map(|m| matrix_from_rows(m)).collect::<Result<_>>()?,
                    },
                };
                for h in &g.h1_states {
                    if !g.states.contains(h) {
                        return Err(Error::InvalidSpec(format!("h1 state {h:?} is not a declared state")));
                    }
                }
                let h1 = g.states.iter().map(|s| g.h1_states.contains(s)).collect();
                let initial = match (g.initial, &transitions) {
                    (Some(p), _) => p,
                    (None, Transitions::Stationary(q)) => stationary_distribution(q)?.as_slice().to_vec(),
                    (None, Transitions::TimeVarying { .. }) => {
                        return Err(Error::InvalidSpec(
                            "initial law is required for time-varying transitions".into(),
                        ))
                    }
                };
                Ok(HmmSpec {
                    states: g.states,
                    h1,
                    initial,
                    transitions,
                    kappa: g.kappa,
                    phi_star: g.phi_star,
                })
            }
        }
    }

    pub fn from_spec(spec: &HmmSpec) -> Self {
        let rows = |m: &Matrix| -> Vec<Vec<f64>> {
            (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
        };
        let (transitions, transitions_offset) = match &spec.transitions {
            Transitions::Stationary(q) => (TransitionsFile::Single(rows(q)), None),
            Transitions::TimeVarying { offset, matrices } => {
                (TransitionsFile::Sequence(matrices.iter().map(rows).collect()), Some(*offset))
            }
        };
        SpecFile::General(GeneralSpecFile {
            states: spec.states.clone(),
            h1_states: spec
                .states
                .iter()
                .zip(&spec.h1)
                .filter(|(_, &h)| h)
                .map(|(s, _)| s.clone())
                .collect(),
            initial: Some(spec.initial.clone()),
            transitions,
            kappa: spec.kappa,
            phi_star: spec.phi_star,
            transitions_offset,
        })
    }
}

impl HmmSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: SpecFile =
            serde_json::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        file.into_spec()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&SpecFile::from_spec(self)).expect("spec serializes")
    }
}
