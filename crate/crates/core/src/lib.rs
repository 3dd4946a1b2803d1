//! Particle-based Thompson sampling for static, contextual and restless
//! Bernoulli bandits, with conjugate and GLM baselines, an offline replay
//! evaluator, and a simulation harness.

pub mod error;
pub mod model;
pub mod normal;
pub mod policies;
pub mod replay;
pub mod rng;
pub mod sim;
pub mod smc;
pub mod stats;

pub use error::{BanditError, Result};
