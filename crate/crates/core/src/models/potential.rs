use std::fmt;
use std::sync::Arc;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type Sampler = Arc<dyn Fn(&mut dyn RngCore) -> f64 + Send + Sync>;

/// A noise density `h(z) = exp(-V(z))` given through `V`, `V'`, `V''` and a
/// sampler for `Z`.
#[derive(Clone)]
pub struct Potential {
    name: String,
    v: RealFn,
    dv: RealFn,
    d2v: RealFn,
    sampler: Sampler,
    translation_fisher: f64,
    scaling_fisher: f64,
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Potential").field("name", &self.name).finish_non_exhaustive()
    }
}

impl Potential {
    /// Standard normal: `V(z) = z²/2 + ln √(2π)`.
    pub fn gaussian() -> Self {
        let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        Potential {
            name: "gaussian".into(),
            v: Arc::new(move |z| 0.5 * z * z + half_log_2pi),
            dv: Arc::new(|z| z),
            d2v: Arc::new(|_| 1.0),
            sampler: Arc::new(|rng| StandardNormal.sample(rng)),
            translation_fisher: 1.0,
            // Var[1 - Z²] = E Z⁴ - 1.
            scaling_fisher: 2.0,
        }
    }

    /// A user potential. The Fisher informations of the translation and
    /// scaling families are obtained by Simpson quadrature over `support`,
    /// which must carry essentially all of the mass of `exp(-V)`.
    pub fn custom(
        name: impl Into<String>,
        v: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dv: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2v: impl Fn(f64) -> f64 + Send + Sync + 'static,
        sampler: impl Fn(&mut dyn RngCore) -> f64 + Send + Sync + 'static,
        support: (f64, f64),
    ) -> Self {
        let translation_fisher = simpson(|x| dv(x).powi(2) * (-v(x)).exp(), support, 40_000);
        let scaling_fisher = simpson(|x| (1.0 - x * dv(x)).powi(2) * (-v(x)).exp(), support, 40_000);
        Potential {
            name: name.into(),
            v: Arc::new(v),
            dv: Arc::new(dv),
            d2v: Arc::new(d2v),
            sampler: Arc::new(sampler),
            translation_fisher,
            scaling_fisher,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn v(&self, z: f64) -> f64 {
        (self.v)(z)
    }

    pub fn dv(&self, z: f64) -> f64 {
        (self.dv)(z)
    }

    pub fn d2v(&self, z: f64) -> f64 {
        (self.d2v)(z)
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        (self.sampler)(rng)
    }

    /// `∫ V'(x)² e^{-V(x)} dx`.
    pub fn translation_fisher(&self) -> f64 {
        self.translation_fisher
    }

    /// `∫ [1 - x V'(x)]² e^{-V(x)} dx`.
    pub fn scaling_fisher(&self) -> f64 {
        self.scaling_fisher
    }
}

fn simpson(f: impl Fn(f64) -> f64, (a, b): (f64, f64), intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}
