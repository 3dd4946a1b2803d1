//! Conjugate Beta-Bernoulli Thompson sampling.

use super::{check_record_shape, digest, ArmPosterior, Policy};
use crate::error::{ensure_len, BanditError, Result};
use crate::model::InteractionRecord;
use crate::rng::BanditRng;
use crate::stats::argmax_random_tie;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

/// Shape parameters of a Beta distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaCounts {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaCounts {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(BanditError::InvalidInput(format!(
                "Beta shapes must be positive and finite, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }
}

/// Posterior after `successes` successes in `trials` Bernoulli trials.
pub fn beta_posterior(prior: BetaCounts, successes: u64, trials: u64) -> Result<BetaCounts> {
    if successes > trials {
        return Err(BanditError::InvalidInput(format!("{successes} successes exceed {trials} trials")));
    }
    BetaCounts::new(prior.alpha + successes as f64, prior.beta + (trials - successes) as f64)
}

/// Context-free Thompson sampling with independent Beta posteriors.
#[derive(Clone, Debug, Serialize)]
pub struct BetaThompson {
    name: String,
    dim: usize,
    prior: BetaCounts,
    counts: Vec<BetaCounts>,
}

impl BetaThompson {
    pub fn new(name: impl Into<String>, arms: usize, dim: usize, prior: BetaCounts) -> Result<Self> {
        let prior = BetaCounts::new(prior.alpha, prior.beta)?;
        Ok(Self { name: name.into(), dim, prior, counts: vec![prior; arms] })
    }

    pub fn counts(&self) -> &[BetaCounts] {
        &self.counts
    }

    pub fn prior(&self) -> BetaCounts {
        self.prior
    }
}

impl Policy for BetaThompson {
    fn name(&self) -> &str {
        &self.name
    }

    fn arms(&self) -> usize {
        self.counts.len()
    }

    fn context_dim(&self) -> usize {
        self.dim
    }

    fn select(&self, context: &[f64], rng: &mut BanditRng) -> Result<usize> {
        ensure_len("context", self.dim, context.len())?;
        let draws: Vec<f64> = self
            .counts
            .iter()
            .map(|c| Beta::new(c.alpha, c.beta).map(|d| d.sample(rng)))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| BanditError::Numerical(e.to_string()))?;
        Ok(argmax_random_tie(&draws, rng))
    }

    fn update(&mut self, record: &InteractionRecord, _rng: &mut BanditRng) -> Result<()> {
        check_record_shape(self.counts.len(), self.dim, record)?;
        let c = &mut self.counts[record.arm];
        if record.reward {
            c.alpha += 1.0;
        } else {
            c.beta += 1.0;
        }
        Ok(())
    }

    fn state_digest(&self) -> String {
        digest(self)
    }

    fn arm_posteriors(&self, _context: &[f64]) -> Option<Vec<ArmPosterior>> {
        Some(
            self.counts
                .iter()
                .map(|c| ArmPosterior { mean_reward: c.mean(), coef_mean: Vec::new(), coef_variance: Vec::new() })
                .collect(),
        )
    }
}
