//! Hidden-Markov multiple testing: exact likelihood-ratio filtering,
//! weak-signal expansions of the full likelihood ratio, and oracle
//! false-discovery-rate procedures.

pub mod chain;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod expansions;
pub mod fd;
pub mod fdr;
pub mod mc;
pub mod models;
pub mod random;
pub mod trajectory;

pub use chain::{BinaryStationarySpec, ChainWindow, HmmSpec, Matrix, SpecFile, Transitions, ValidatedSpec, Vector};
pub use error::{Error, Result};
pub use models::{InteractionModel, ModelSelector};
pub use trajectory::{simulate, simulate_with_rng, Trajectory};
pub use engine::{Direction, Filter, LMatrixSequence, PosteriorResult, Scenario};
