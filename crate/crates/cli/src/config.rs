//! Experiment configuration: one JSON file per experiment.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use hmmfdr_core::chain::GeneralSpecFile;
use hmmfdr_core::{ModelSelector, SpecFile};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub spec: SpecConfig,
    pub model: ModelSelector,
    #[serde(default)]
    pub epsilon: Epsilon,
    #[serde(default)]
    pub window: Window,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Excluded from the config hash; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub options: Options,
}

fn default_replicates() -> usize {
    100
}

fn default_alpha() -> f64 {
    0.1
}

/// A single signal strength or a grid of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Epsilon {
    Scalar(f64),
    Grid(Vec<f64>),
}

impl Default for Epsilon {
    fn default() -> Self {
        Epsilon::Scalar(0.5)
    }
}

impl Epsilon {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Epsilon::Scalar(e) => vec![*e],
            Epsilon::Grid(g) => g.clone(),
        }
    }
}

/// Indices `[-m, n]` around the target index 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub m: usize,
    pub n: usize,
}

impl Default for Window {
    fn default() -> Self {
        Window { m: 10, n: 10 }
    }
}

/// Subcommand-specific knobs. Every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Options {
    /// Expansion truncation `T`; stationary binary chains derive it from `r`.
    pub truncation: Option<usize>,
    pub fd_h1: f64,
    pub fd_h2: f64,
    /// Largest `n` traced by `diagnose`; defaults to `min(m, n)`.
    pub n_max: Option<usize>,
    /// Strictly increasing `n` values for the Λ trace; defaults to `1..=n_max`.
    pub schedule: Option<Vec<usize>>,
    /// Also trace the derivative spreads `Δ_{n,1}`, `Δ_{n,2}`.
    pub derivatives: bool,
    pub fisher_samples: usize,
    pub interchange_n: i64,
    pub interchange_epsilon: f64,
    pub interchange_replicates: usize,
    /// Monte Carlo brackets use this many standard errors.
    pub k_se: f64,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            truncation: None,
            fd_h1: 1e-5,
            fd_h2: 1e-3,
            n_max: None,
            schedule: None,
            derivatives: true,
            fisher_samples: 100_000,
            interchange_n: 6,
            interchange_epsilon: 0.3,
            interchange_replicates: 800,
            k_se: 4.0,
        }
    }
}

/// Spec as written in a config. Dispatches on the presence of `p01` so that
/// schema errors name the offending field instead of failing every variant.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SpecConfig(pub SpecFile);

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BinaryFile {
    p01: f64,
    p10: f64,
    #[serde(default)]
    phi_star: Option<f64>,
}

impl<'de> Deserialize<'de> for SpecConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(d)?;
        let binary = value.get("p01").is_some() || value.get("p10").is_some();
        let located = |e: serde_path_to_error::Error<serde_json::Error>| {
            let path = e.path().to_string();
            D::Error::custom(format!("at `{path}`: {}", e.into_inner()))
        };
        if binary {
            let b: BinaryFile = serde_path_to_error::deserialize(value).map_err(located)?;
            Ok(SpecConfig(SpecFile::Binary { p01: b.p01, p10: b.p10, phi_star: b.phi_star }))
        } else {
            let g: GeneralSpecFile = serde_path_to_error::deserialize(value).map_err(located)?;
            Ok(SpecConfig(SpecFile::General(g)))
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            anyhow::anyhow!("config field `{path}`: {}", e.into_inner())
        })?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    fn check(&self) -> anyhow::Result<()> {
        let eps = self.epsilon.values();
        if eps.is_empty() {
            bail!("config field `epsilon`: grid is empty");
        }
        if let Some(e) = eps.iter().find(|e| !e.is_finite()) {
            bail!("config field `epsilon`: {e} is not finite");
        }
        if self.replicates == 0 {
            bail!("config field `replicates`: must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            bail!("config field `alpha`: {} is outside (0, 1)", self.alpha);
        }
        let o = &self.options;
        if !(o.fd_h1 > 0.0 && o.fd_h2 > 0.0) {
            bail!("config field `options.fd_h1`/`options.fd_h2`: steps must be positive");
        }
        if !(o.k_se > 0.0) {
            bail!("config field `options.k_se`: must be positive");
        }
        Ok(())
    }

    /// SHA-256 of the canonical serialization, excluding the output directory.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let text = serde_json::to_string(&canonical).expect("config serializes");
        hex(&Sha256::digest(text.as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"spec": {"p01": 0.25, "p10": 0.25}, "model": {"model": "translation_gaussian"}}"#;

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.window, Window { m: 10, n: 10 });
        assert_eq!(c.epsilon.values(), vec![0.5]);
        assert_eq!(c.options, Options::default());
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = ExperimentConfig::parse(MINIMAL).unwrap();
        let mut b = a.clone();
        b.output_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = r#"{"spec": {"p01": 0.25, "p10": "x"}, "model": {"model": "translation_gaussian"}}"#;
        let msg = format!("{:#}", ExperimentConfig::parse(bad).unwrap_err());
        assert!(msg.contains("spec") && msg.contains("p10"), "{msg}");

        let bad = r#"{"spec": {"p01": 0.25, "p10": 0.25}, "model": {"model": "translation_gaussian"}, "window": {"m": -1, "n": 2}}"#;
        let msg = format!("{:#}", ExperimentConfig::parse(bad).unwrap_err());
        assert!(msg.contains("window.m"), "{msg}");

        let bad = r#"{"spec": {"states": ["a", "b"], "h1_states": ["b"], "transitions": [[0.5, 0.5], [0.5]], "phi_star": "no"}, "model": {"model": "scaling_gaussian"}}"#;
        let msg = format!("{:#}", ExperimentConfig::parse(bad).unwrap_err());
        assert!(msg.contains("phi_star"), "{msg}");

        let bad = r#"{"spec": {"p01": 0.25, "p10": 0.25}, "model": {"model": "translation_gaussian"}, "alpah": 0.1}"#;
        let msg = format!("{:#}", ExperimentConfig::parse(bad).unwrap_err());
        assert!(msg.contains("alpah"), "{msg}");
    }

    #[test]
    fn semantic_checks() {
        let bad = r#"{"spec": {"p01": 0.25, "p10": 0.25}, "model": {"model": "translation_gaussian"}, "alpha": 1.5}"#;
        assert!(format!("{:#}", ExperimentConfig::parse(bad).unwrap_err()).contains("alpha"));
        let bad = r#"{"spec": {"p01": 0.25, "p10": 0.25}, "model": {"model": "translation_gaussian"}, "epsilon": []}"#;
        assert!(format!("{:#}", ExperimentConfig::parse(bad).unwrap_err()).contains("epsilon"));
    }
}
