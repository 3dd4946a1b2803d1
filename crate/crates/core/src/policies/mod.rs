//! Bandit policies behind one interface: particle Thompson sampling (static
//! and dynamic), conjugate Beta-Bernoulli Thompson sampling, contextual
//! ε-greedy and UCB on per-arm MAP regressions, uniform random and a fixed
//! arm.
//!
//! Arms are 0-based everywhere in this crate.

mod beta;
mod glm;
mod smc;
mod spec;

pub use beta::{beta_posterior, BetaCounts, BetaThompson};
pub use glm::{eps_greedy_select, map_fit, ucb_score, EpsGreedy, RegressionFit, Ucb, MAP_GRADIENT_TOL};
pub use smc::{SmcDynamic, SmcStatic};
pub use spec::{PolicySpec, SmcDefaults};

use crate::error::{ensure_len, Result};
use crate::model::InteractionRecord;
use crate::rng::BanditRng;
use rand::Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Posterior snapshot of one arm, for tracking plots.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArmPosterior {
    /// Posterior mean of the arm's success probability at the given context.
    pub mean_reward: f64,
    pub coef_mean: Vec<f64>,
    pub coef_variance: Vec<f64>,
}

pub trait Policy: Send {
    fn name(&self) -> &str;

    fn arms(&self) -> usize;

    fn context_dim(&self) -> usize;

    /// Chooses an arm. Never mutates the policy; randomness comes only from
    /// `rng`.
    fn select(&self, context: &[f64], rng: &mut BanditRng) -> Result<usize>;

    /// Folds one observed interaction into the policy state.
    fn update(&mut self, record: &InteractionRecord, rng: &mut BanditRng) -> Result<()>;

    /// Hex SHA-256 of the full serialized state.
    fn state_digest(&self) -> String;

    /// Per-arm posterior summaries, for policies that keep a posterior.
    fn arm_posteriors(&self, _context: &[f64]) -> Option<Vec<ArmPosterior>> {
        None
    }

    /// Whether the most recent update resampled, for particle policies.
    fn last_resampled(&self) -> Option<bool> {
        None
    }
}

pub(crate) fn digest<T: Serialize>(state: &T) -> String {
    let bytes = serde_json::to_vec(state).expect("policy state serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Uniform selection over all arms.
#[derive(Clone, Debug, Serialize)]
pub struct RandomPolicy {
    name: String,
    arms: usize,
    dim: usize,
}

impl RandomPolicy {
    pub fn new(name: impl Into<String>, arms: usize, dim: usize) -> Self {
        Self { name: name.into(), arms, dim }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn arms(&self) -> usize {
        self.arms
    }

    fn context_dim(&self) -> usize {
        self.dim
    }

    fn select(&self, context: &[f64], rng: &mut BanditRng) -> Result<usize> {
        ensure_len("context", self.dim, context.len())?;
        Ok(rng.random_range(0..self.arms))
    }

    fn update(&mut self, record: &InteractionRecord, _rng: &mut BanditRng) -> Result<()> {
        check_record_shape(self.arms, self.dim, record)
    }

    fn state_digest(&self) -> String {
        digest(self)
    }
}

/// Always plays the same arm. Useful as a replay reference.
#[derive(Clone, Debug, Serialize)]
pub struct FixedArm {
    name: String,
    arm: usize,
    arms: usize,
    dim: usize,
}

impl FixedArm {
    pub fn new(name: impl Into<String>, arm: usize, arms: usize, dim: usize) -> Result<Self> {
        if arm >= arms {
            return Err(crate::BanditError::ArmOutOfRange { arm, arms });
        }
        Ok(Self { name: name.into(), arm, arms, dim })
    }
}

impl Policy for FixedArm {
    fn name(&self) -> &str {
        &self.name
    }

    fn arms(&self) -> usize {
        self.arms
    }

    fn context_dim(&self) -> usize {
        self.dim
    }

    fn select(&self, context: &[f64], _rng: &mut BanditRng) -> Result<usize> {
        ensure_len("context", self.dim, context.len())?;
        Ok(self.arm)
    }

    fn update(&mut self, record: &InteractionRecord, _rng: &mut BanditRng) -> Result<()> {
        check_record_shape(self.arms, self.dim, record)
    }

    fn state_digest(&self) -> String {
        digest(self)
    }
}

pub(crate) fn check_record_shape(arms: usize, dim: usize, record: &InteractionRecord) -> Result<()> {
    if record.arm >= arms {
        return Err(crate::BanditError::ArmOutOfRange { arm: record.arm, arms });
    }
    ensure_len("context", dim, record.context.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn random_policy_is_uniform() {
        let policy = RandomPolicy::new("random", 4, 1);
        let mut rng = rng_from_seed(1);
        let calls = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..calls {
            counts[policy.select(&[1.0], &mut rng).unwrap()] += 1;
        }
        let se = (0.25 * 0.75 / calls as f64).sqrt();
        for c in counts {
            assert!((c as f64 / calls as f64 - 0.25).abs() < 3.0 * se);
        }
    }

    #[test]
    fn fixed_arm_never_varies() {
        let policy = FixedArm::new("first", 0, 3, 1).unwrap();
        let mut rng = rng_from_seed(2);
        assert!((0..100).all(|_| policy.select(&[1.0], &mut rng).unwrap() == 0));
        assert!(FixedArm::new("bad", 3, 3, 1).is_err());
    }

    #[test]
    fn random_policy_rejects_bad_input() {
        let mut policy = RandomPolicy::new("random", 2, 2);
        let mut rng = rng_from_seed(1);
        assert!(policy.select(&[1.0], &mut rng).is_err());
        assert!(policy.update(&InteractionRecord::new(vec![1.0, 0.0], 2, true, 1), &mut rng).is_err());
    }
}
