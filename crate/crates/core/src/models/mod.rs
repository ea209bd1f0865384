//! Noise/signal interaction families.
//!
//! A model bundles the observation map `x = φ(z, v)`, the parameter maps
//! `θ_a(ε)`, the log-density `λ(x, ϑ) = ln f(x, ϑ)` of `φ(Z, ϑ)`, and the
//! partial derivatives the weak-signal expansions consume. Parameters are
//! univariate.

use std::sync::Arc;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc::MeanSe;

mod potential;
mod scaling;
mod tstat;
mod translation;

pub use potential::Potential;
pub use scaling::ScalingModel;
pub use tstat::{noncentral_t_log_density, TStatisticModel};
pub use translation::TranslationModel;

/// Partial derivatives of `λ(x, ϑ)` at `ϑ = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaPartials {
    /// ∂λ/∂ϑ
    pub dtheta: f64,
    /// ∂²λ/∂ϑ²
    pub dtheta2: f64,
    /// ∂²λ/∂x∂ϑ
    pub dx_dtheta: f64,
    /// ∂λ/∂x
    pub dx: f64,
}

pub trait InteractionModel: Send + Sync {
    fn name(&self) -> &str;

    /// Dimension of a noise point.
    fn noise_dim(&self) -> usize;

    /// Observation map `φ(z, v)`.
    fn phi(&self, z: &[f64], v: f64) -> f64;

    /// `∂φ/∂v` at `(z, v)`.
    fn phi_partial_v(&self, z: &[f64], v: f64) -> f64;

    /// `θ_a(ε)` for the state with index `label`.
    fn theta(&self, label: usize, epsilon: f64) -> f64;

    /// `θ_a'(ε)`.
    fn theta_d1(&self, label: usize, epsilon: f64) -> f64;

    /// `θ_a''(ε)`.
    fn theta_d2(&self, label: usize, epsilon: f64) -> f64;

    /// `λ(x, ϑ)`, normalized so that `exp(λ(·, ϑ))` integrates to one.
    fn log_density(&self, x: f64, vartheta: f64) -> f64;

    /// `(∂λ/∂x, ∂λ/∂ϑ)` at an arbitrary `(x, ϑ)`.
    fn log_density_grad(&self, x: f64, vartheta: f64) -> (f64, f64);

    fn lambda_partials_at_zero(&self, x: f64) -> LambdaPartials;

    fn sample_noise(&self, rng: &mut dyn RngCore, out: &mut [f64]);

    /// Closed-form Fisher information `J(0)` of `f(·, ϑ)` at `ϑ = 0`.
    fn fisher_info_at_zero(&self) -> f64;

    /// Whether moments needed by expectation identities exist.
    fn check_expectation_moments(&self) -> Result<()> {
        Ok(())
    }

    /// `Var[d'(0)] = [θ_1'(0) - θ_0'(0)]² J(0)`.
    fn score_contrast_variance(&self) -> f64 {
        let gap = self.theta_d1(1, 0.0) - self.theta_d1(0, 0.0);
        gap * gap * self.fisher_info_at_zero()
    }

    /// `ℓ(ε) = λ(φ(z, θ_a(ε)), θ_b(ε))`, the log-density of the observation
    /// generated under `a` evaluated under `b`.
    fn ell(&self, z: &[f64], a: usize, b: usize, epsilon: f64) -> f64 {
        let x = self.phi(z, self.theta(a, epsilon));
        self.log_density(x, self.theta(b, epsilon))
    }

    /// `dℓ/dε` by the chain rule.
    fn ell_derivative(&self, z: &[f64], a: usize, b: usize, epsilon: f64) -> f64 {
        let v = self.theta(a, epsilon);
        let x = self.phi(z, v);
        let (dx, dth) = self.log_density_grad(x, self.theta(b, epsilon));
        dx * self.phi_partial_v(z, v) * self.theta_d1(a, epsilon) + dth * self.theta_d1(b, epsilon)
    }
}

/// Model selection as it appears in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSelector {
    TranslationGaussian,
    ScalingGaussian,
    TStatistic { nu: u32 },
}

impl ModelSelector {
    pub fn build(&self) -> Result<Arc<dyn InteractionModel>> {
        Ok(match self {
            ModelSelector::TranslationGaussian => Arc::new(TranslationModel::new(Potential::gaussian())),
            ModelSelector::ScalingGaussian => Arc::new(ScalingModel::new(Potential::gaussian())),
            ModelSelector::TStatistic { nu } => Arc::new(TStatisticModel::new(*nu)?),
        })
    }
}

/// Monte Carlo check of the two Fisher identities against `J(0)`.
#[derive(Clone, Debug)]
pub struct FisherCheck {
    pub closed_form: f64,
    /// Mean of `(∂λ/∂ϑ)²` at `x = φ(z, 0)`.
    pub score_squared: MeanSe,
    /// Mean of `∂²λ/∂x∂ϑ · ∂φ/∂v` at `v = 0`.
    pub cross: MeanSe,
}

impl FisherCheck {
    pub fn brackets(&self, k_se: f64) -> bool {
        self.score_squared.brackets(self.closed_form, k_se) && self.cross.brackets(self.closed_form, k_se)
    }
}

pub fn fisher_info_check(model: &dyn InteractionModel, samples: usize, seed: u64) -> Result<FisherCheck> {
    model.check_expectation_moments()?;
    if samples < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = vec![0.0; model.noise_dim()];
    let mut sq = MeanSe::default();
    let mut cross = MeanSe::default();
    for _ in 0..samples {
        model.sample_noise(&mut rng, &mut z);
        let x = model.phi(&z, 0.0);
        let p = model.lambda_partials_at_zero(x);
        sq.push(p.dtheta * p.dtheta);
        cross.push(p.dx_dtheta * model.phi_partial_v(&z, 0.0));
    }
    Ok(FisherCheck { closed_form: model.fisher_info_at_zero(), score_squared: sq, cross })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn models() -> Vec<Arc<dyn InteractionModel>> {
        vec![
            ModelSelector::TranslationGaussian.build().unwrap(),
            ModelSelector::ScalingGaussian.build().unwrap(),
            ModelSelector::TStatistic { nu: 16 }.build().unwrap(),
        ]
    }

    #[test]
    fn degenerate_at_zero() {
        for m in models() {
            assert_eq!(m.theta(0, 0.0), 0.0);
            assert_eq!(m.theta(1, 0.0), 0.0);
        }
    }

    #[test]
    fn chain_rule_matches_central_differences() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in models() {
            let mut z = vec![0.0; m.noise_dim()];
            for _ in 0..100 {
                m.sample_noise(&mut rng, &mut z);
                let a = rng.random_range(0..2);
                let b = rng.random_range(0..2);
                let eps: f64 = rng.random_range(-0.3..0.3);
                let h = 1e-5;
                let fd = (m.ell(&z, a, b, eps + h) - m.ell(&z, a, b, eps - h)) / (2.0 * h);
                let an = m.ell_derivative(&z, a, b, eps);
                assert!(
                    (fd - an).abs() <= 1e-6 * an.abs().max(1.0),
                    "{}: fd {fd} analytic {an}",
                    m.name()
                );
            }
        }
    }

    #[test]
    fn score_has_mean_zero() {
        for m in models() {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut z = vec![0.0; m.noise_dim()];
            let mut acc = MeanSe::default();
            for _ in 0..100_000 {
                m.sample_noise(&mut rng, &mut z);
                acc.push(m.lambda_partials_at_zero(m.phi(&z, 0.0)).dtheta);
            }
            assert!(acc.brackets(0.0, 4.0), "{}: {acc:?}", m.name());
        }
    }

    #[test]
    fn fisher_identities_bracket_closed_form() {
        for m in models() {
            let c = fisher_info_check(m.as_ref(), 100_000, 17).unwrap();
            assert!(c.brackets(4.0), "{}: {c:?}", m.name());
        }
    }

    #[test]
    fn selector_parses_config_shapes() {
        let t: ModelSelector = serde_json::from_str(r#"{"model":"t_statistic","nu":16}"#).unwrap();
        assert_eq!(t, ModelSelector::TStatistic { nu: 16 });
        let g: ModelSelector = serde_json::from_str(r#"{"model":"translation_gaussian"}"#).unwrap();
        assert_eq!(g, ModelSelector::TranslationGaussian);
        assert!(serde_json::from_str::<ModelSelector>(r#"{"model":"cauchy"}"#).is_err());
    }
}
