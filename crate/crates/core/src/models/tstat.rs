use rand::RngCore;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use super::{InteractionModel, LambdaPartials};
use crate::error::{Error, Result};

const SERIES_RTOL: f64 = 1e-14;
const SERIES_MAX_TERMS: usize = 100_000;

/// t-statistics from `ν + 1` Gaussian replicates with unknown scale.
///
/// The noise point is `(ζ, S)` with `ζ ~ N(0, 1)` and `S² ~ χ²_ν`, the
/// observation is `√ν (ζ + v) / S`, and `θ_a(ε) = √(ν+1) a ε`, so that the
/// observation follows a noncentral t law with noncentrality `ϑ`.
#[derive(Clone, Debug)]
pub struct TStatisticModel {
    nu: u32,
    name: String,
    chi2: ChiSquared<f64>,
    /// `ln C_ν`, the log normalizer of the central t density.
    log_c: f64,
    /// `Γ((ν+2)/2) / Γ((ν+1)/2)`, seed of the gamma-ratio recursion.
    g1: f64,
    c1: f64,
    c2: f64,
}

impl TStatisticModel {
    pub fn new(nu: u32) -> Result<Self> {
        if nu == 0 {
            return Err(Error::InvalidArgument("degrees of freedom must be positive".into()));
        }
        let n = nu as f64;
        let log_c = 0.5 * n * n.ln() + ln_gamma((n + 1.0) / 2.0)
            - 0.5 * std::f64::consts::PI.ln()
            - ln_gamma(n / 2.0);
        let g1 = (ln_gamma((n + 2.0) / 2.0) - ln_gamma((n + 1.0) / 2.0)).exp();
        let g2 = ((n + 1.0) / 2.0) / g1;
        Ok(Self {
            nu,
            name: format!("t_statistic_nu{nu}"),
            chi2: ChiSquared::new(n).expect("positive degrees of freedom"),
            log_c,
            g1,
            c1: std::f64::consts::SQRT_2 * g1,
            c2: 2.0 * g1 * g2,
        })
    }

    pub fn nu(&self) -> u32 {
        self.nu
    }

    /// `c_k = Γ((ν+k+1)/2) 2^{k/2} / Γ((ν+1)/2)` for k = 1, 2.
    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    /// `Var[d'(0)] = ½ [ν Γ(ν/2) / Γ((ν+1)/2)]²`.
    pub fn score_contrast_variance_closed_form(&self) -> f64 {
        let n = self.nu as f64;
        0.5 * (n * (ln_gamma(n / 2.0) - ln_gamma((n + 1.0) / 2.0)).exp()).powi(2)
    }

    fn log_central(&self, x: f64) -> f64 {
        let n = self.nu as f64;
        self.log_c - 0.5 * (n + 1.0) * (n + x * x).ln()
    }

    /// Sums `S(y) = Σ_k c_k y^k / k!` and `S'(y)`.
    fn series(&self, y: f64) -> (f64, f64) {
        let n = self.nu as f64;
        let mut sum = 1.0;
        let mut dsum = 0.0;
        let mut term = 1.0;
        // u_k = c_k y^{k-1} / (k-1)!
        let mut u = 0.0;
        let mut g = self.g1;
        for k in 1..SERIES_MAX_TERMS {
            let kf = k as f64;
            let step = std::f64::consts::SQRT_2 * g;
            term *= y * step / kf;
            u = if k == 1 { step } else { u * y * step / (kf - 1.0) };
            sum += term;
            dsum += u;
            let past_peak = y.abs() * step < kf;
            if past_peak
                && term.abs() < SERIES_RTOL * sum.abs()
                && u.abs() <= SERIES_RTOL * dsum.abs().max(f64::MIN_POSITIVE)
            {
                break;
            }
            if past_peak && term == 0.0 {
                break;
            }
            g = ((n + kf) / 2.0) / g;
        }
        (sum, dsum)
    }
}

/// `ln t_{ν,ϑ}(x)` from the series around the central t density.
pub fn noncentral_t_log_density(nu: u32, x: f64, vartheta: f64) -> Result<f64> {
    Ok(TStatisticModel::new(nu)?.log_density(x, vartheta))
}

impl InteractionModel for TStatisticModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn noise_dim(&self) -> usize {
        2
    }

    fn phi(&self, z: &[f64], v: f64) -> f64 {
        (self.nu as f64).sqrt() * (z[0] + v) / z[1]
    }

    fn phi_partial_v(&self, z: &[f64], _v: f64) -> f64 {
        (self.nu as f64).sqrt() / z[1]
    }

    fn theta(&self, label: usize, epsilon: f64) -> f64 {
        (self.nu as f64 + 1.0).sqrt() * label as f64 * epsilon
    }

    fn theta_d1(&self, label: usize, _epsilon: f64) -> f64 {
        (self.nu as f64 + 1.0).sqrt() * label as f64
    }

    fn theta_d2(&self, _label: usize, _epsilon: f64) -> f64 {
        0.0
    }

    fn log_density(&self, x: f64, vartheta: f64) -> f64 {
        let w = x / (self.nu as f64 + x * x).sqrt();
        let (s, _) = self.series(w * vartheta);
        self.log_central(x) - 0.5 * vartheta * vartheta + s.ln()
    }

    fn log_density_grad(&self, x: f64, vartheta: f64) -> (f64, f64) {
        let n = self.nu as f64;
        let q = n + x * x;
        let w = x / q.sqrt();
        let dw = n / q.powf(1.5);
        let (s, ds) = self.series(w * vartheta);
        let ratio = ds / s;
        let dx = -(n + 1.0) * x / q + vartheta * dw * ratio;
        let dth = -vartheta + w * ratio;
        (dx, dth)
    }

    fn lambda_partials_at_zero(&self, x: f64) -> LambdaPartials {
        let n = self.nu as f64;
        let q = n + x * x;
        LambdaPartials {
            dtheta: self.c1 * x / q.sqrt(),
            dtheta2: (self.c2 - self.c1 * self.c1) * x * x / q - 1.0,
            dx_dtheta: self.c1 * n / q.powf(1.5),
            dx: -(n + 1.0) * x / q,
        }
    }

    fn sample_noise(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        out[0] = StandardNormal.sample(rng);
        out[1] = self.chi2.sample(rng).sqrt();
    }

    fn fisher_info_at_zero(&self) -> f64 {
        self.c1 * self.c1 / (self.nu as f64 + 1.0)
    }

    fn check_expectation_moments(&self) -> Result<()> {
        if self.nu <= 12 {
            Err(Error::DegreesOfFreedomTooSmall(self.nu))
        } else {
            Ok(())
        }
    }
}
