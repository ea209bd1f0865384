use rand::RngCore;

use super::{InteractionModel, LambdaPartials, Potential};

/// Additive interaction `φ(z, v) = z + v` with `θ_a(ε) = εa`, so that
/// `λ(x, ϑ) = -V(x - ϑ)`.
#[derive(Clone, Debug)]
pub struct TranslationModel {
    potential: Potential,
    name: String,
}

impl TranslationModel {
    pub fn new(potential: Potential) -> Self {
        let name = format!("translation_{}", potential.name());
        Self { potential, name }
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }
}

impl InteractionModel for TranslationModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn phi(&self, z: &[f64], v: f64) -> f64 {
        z[0] + v
    }

    fn phi_partial_v(&self, _z: &[f64], _v: f64) -> f64 {
        1.0
    }

    fn theta(&self, label: usize, epsilon: f64) -> f64 {
        epsilon * label as f64
    }

    fn theta_d1(&self, label: usize, _epsilon: f64) -> f64 {
        label as f64
    }

    fn theta_d2(&self, _label: usize, _epsilon: f64) -> f64 {
        0.0
    }

    fn log_density(&self, x: f64, vartheta: f64) -> f64 {
        -self.potential.v(x - vartheta)
    }

    fn log_density_grad(&self, x: f64, vartheta: f64) -> (f64, f64) {
        let g = self.potential.dv(x - vartheta);
        (-g, g)
    }

    fn lambda_partials_at_zero(&self, x: f64) -> LambdaPartials {
        let d1 = self.potential.dv(x);
        let d2 = self.potential.d2v(x);
        LambdaPartials { dtheta: d1, dtheta2: -d2, dx_dtheta: d2, dx: -d1 }
    }

    fn sample_noise(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        out[0] = self.potential.sample(rng);
    }

    fn fisher_info_at_zero(&self) -> f64 {
        self.potential.translation_fisher()
    }
}
