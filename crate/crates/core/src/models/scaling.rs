use rand::RngCore;

use super::{InteractionModel, LambdaPartials, Potential};

/// Multiplicative interaction `φ(z, v) = e^{-v} z` with `θ_a(ε) = εa`, so
/// that `λ(x, v) = v - V(e^v x)`.
#[derive(Clone, Debug)]
pub struct ScalingModel {
    potential: Potential,
    name: String,
}

impl ScalingModel {
    pub fn new(potential: Potential) -> Self {
        let name = format!("scaling_{}", potential.name());
        Self { potential, name }
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }
}

impl InteractionModel for ScalingModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn phi(&self, z: &[f64], v: f64) -> f64 {
        (-v).exp() * z[0]
    }

    fn phi_partial_v(&self, z: &[f64], v: f64) -> f64 {
        -(-v).exp() * z[0]
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
        vartheta - self.potential.v(vartheta.exp() * x)
    }

    fn log_density_grad(&self, x: f64, vartheta: f64) -> (f64, f64) {
        let s = vartheta.exp();
        let g = self.potential.dv(s * x);
        (-s * g, 1.0 - s * x * g)
    }

    fn lambda_partials_at_zero(&self, x: f64) -> LambdaPartials {
        let d1 = self.potential.dv(x);
        let d2 = self.potential.d2v(x);
        LambdaPartials {
            dtheta: 1.0 - x * d1,
            dtheta2: -x * d1 - x * x * d2,
            dx_dtheta: -d1 - x * d2,
            dx: -d1,
        }
    }

    fn sample_noise(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        out[0] = self.potential.sample(rng);
    }

    fn fisher_info_at_zero(&self) -> f64 {
        self.potential.scaling_fisher()
    }
}
