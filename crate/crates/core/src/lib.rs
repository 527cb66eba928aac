//! Regime-switching processes driven by a hidden ergodic Markov chain, and
//! the tooling to check their central limit behaviour numerically: exact
//! mixing profiles, dependence gaps between observations, characteristic
//! function gaps, Bernstein blocking and convergence of normalised sums.

pub mod chain;
pub mod charfn;
pub mod clt;
pub mod emission;
pub mod error;
pub mod independence;
pub mod normal;
pub mod regime;
pub mod rng;
pub mod runner;

pub use chain::{MixingProfile, StationaryDistribution, TransitionMatrix};
pub use emission::{Emission, EmissionSpec};
pub use error::{Error, Result};
pub use regime::{Initial, ModelSpec, PathSample};
pub use rng::SeedRecord;
