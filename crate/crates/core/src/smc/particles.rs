use super::kernel::{GibbsCache, MoveKernel, MoveKernelKind};
use super::History;
use crate::error::{ensure_len, BanditError, Result};
use crate::model::{InteractionRecord, ObservationModel, ParamVector, PROB_FLOOR};
use crate::stats::{argmax_random_tie, argmax_set, logsumexp};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResamplingScheme {
    #[default]
    Multinomial,
    Systematic,
}

/// What to do when every particle assigns negligible likelihood to an
/// observation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegeneracyMode {
    /// Fail with [`BanditError::Degenerate`].
    #[default]
    Strict,
    /// Reset to uniform weights and log a warning.
    Lenient,
}

/// Weighted-particle approximation of the parameter posterior.
///
/// Log-weights are kept normalized (`logsumexp == 0`); the linear weights
/// are cached alongside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    model: Arc<ObservationModel>,
    particles: Vec<ParamVector>,
    log_weights: Vec<f64>,
    weights: Vec<f64>,
    t: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean: ParamVector,
    pub variance: ParamVector,
}

/// Ancestor indices for `n` draws from `weights` (assumed normalized).
pub fn resample_indices<R: Rng + ?Sized>(
    weights: &[f64],
    n: usize,
    scheme: ResamplingScheme,
    rng: &mut R,
) -> Vec<usize> {
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cumulative.push(acc);
    }
    let total = acc;
    let last = weights.len() - 1;
    let locate = |u: f64| cumulative.partition_point(|&c| c <= u).min(last);
    match scheme {
        ResamplingScheme::Multinomial => (0..n).map(|_| locate(rng.random::<f64>() * total)).collect(),
        ResamplingScheme::Systematic => {
            let offset: f64 = rng.random();
            let step = total / n as f64;
            (0..n).map(|i| locate((offset + i as f64) * step)).collect()
        }
    }
}

impl ParticleSet {
    /// `n` independent prior draws with uniform weights.
    pub fn init<R: Rng + ?Sized>(model: Arc<ObservationModel>, n: usize, rng: &mut R) -> Result<Self> {
        if n < 1 {
            return Err(BanditError::InvalidInput("particle count must be at least 1".into()));
        }
        let particles = (0..n).map(|_| model.prior_sample(rng)).collect();
        Self::from_parts(model, particles, vec![0.0; n], 0)
    }

    /// Assembles a set from explicit particles and (unnormalized) log-weights.
    pub fn from_parts(
        model: Arc<ObservationModel>,
        particles: Vec<ParamVector>,
        log_weights: Vec<f64>,
        t: u64,
    ) -> Result<Self> {
        if particles.is_empty() {
            return Err(BanditError::InvalidInput("particle count must be at least 1".into()));
        }
        ensure_len("log-weights", particles.len(), log_weights.len())?;
        for p in &particles {
            model.check_params(p)?;
            if !p.is_finite() {
                return Err(BanditError::InvalidInput("particle has non-finite entries".into()));
            }
        }
        if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(BanditError::InvalidInput("log-weights must not be NaN or +inf".into()));
        }
        let mut set = Self { model, particles, log_weights, weights: Vec::new(), t };
        set.normalize()?;
        Ok(set)
    }

    fn normalize(&mut self) -> Result<()> {
        let lse = logsumexp(&self.log_weights);
        if !lse.is_finite() {
            return Err(BanditError::Degenerate { t: self.t });
        }
        for lw in &mut self.log_weights {
            *lw -= lse;
        }
        self.weights = self.log_weights.iter().map(|lw| lw.exp()).collect();
        Ok(())
    }

    pub fn model(&self) -> &Arc<ObservationModel> {
        &self.model
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn time(&self) -> u64 {
        self.t
    }

    pub fn particles(&self) -> &[ParamVector] {
        &self.particles
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Normalized weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `1 / Σ w_i²`, clipped to `[1, N]` against rounding.
    pub fn effective_sample_size(&self) -> f64 {
        effective_sample_size(&self.weights).clamp(1.0, self.len() as f64)
    }

    /// Adds per-particle log-likelihood increments and renormalizes.
    pub fn reweight_by(&mut self, log_increments: &[f64]) -> Result<()> {
        ensure_len("log-likelihood increments", self.len(), log_increments.len())?;
        for (lw, inc) in self.log_weights.iter_mut().zip(log_increments) {
            *lw += inc;
        }
        self.normalize()
    }

    /// Importance update for one observation; particle values are unchanged.
    pub fn reweight(&mut self, record: &InteractionRecord, mode: DegeneracyMode) -> Result<()> {
        self.model.check_record(record)?;
        let increments: Vec<f64> =
            self.particles.iter().map(|p| self.model.log_likelihood_unchecked(p, record)).collect();
        self.t += 1;
        let floor = PROB_FLOOR.ln() + 1e-9;
        if increments.iter().all(|&ll| ll <= floor) {
            match mode {
                DegeneracyMode::Strict => return Err(BanditError::Degenerate { t: self.t }),
                DegeneracyMode::Lenient => {
                    log::warn!("particle degeneracy at t={}, resetting to uniform weights", self.t);
                    self.log_weights.iter_mut().for_each(|lw| *lw = 0.0);
                    return self.normalize();
                }
            }
        }
        self.reweight_by(&increments)
    }

    /// Resamples by weight; the result carries uniform weights.
    pub fn resample<R: Rng + ?Sized>(&mut self, scheme: ResamplingScheme, rng: &mut R) -> Vec<usize> {
        let n = self.len();
        let ancestors = resample_indices(&self.weights, n, scheme, rng);
        self.particles = ancestors.iter().map(|&i| self.particles[i].clone()).collect();
        let uniform = -(n as f64).ln();
        self.log_weights = vec![uniform; n];
        self.weights = vec![1.0 / n as f64; n];
        ancestors
    }

    /// Applies `kernel.sweeps` posterior-invariant moves to every particle.
    /// Weights are untouched. Returns the Metropolis acceptance rate, or 1 for
    /// Gibbs.
    pub fn move_particles<R: Rng + ?Sized>(
        &mut self,
        kernel: &MoveKernel,
        history: &History,
        rng: &mut R,
    ) -> Result<f64> {
        if self.model.is_dynamic() {
            return Err(BanditError::Contract("move step is only defined for static models".into()));
        }
        match kernel.kind {
            MoveKernelKind::ProbitGibbs => {
                let cache = GibbsCache::new(&self.model, history)?;
                for particle in &mut self.particles {
                    for _ in 0..kernel.sweeps {
                        cache.sweep(particle, rng);
                    }
                }
                Ok(1.0)
            }
            MoveKernelKind::RandomWalkMetropolis { step_scale } => {
                if step_scale == 0.0 {
                    return Ok(1.0);
                }
                let mut accepted = 0usize;
                let mut proposed = 0usize;
                for particle in &mut self.particles {
                    for _ in 0..kernel.sweeps {
                        proposed += 1;
                        if super::kernel::rwm_step(&self.model, particle, history, step_scale, rng) {
                            accepted += 1;
                        }
                    }
                }
                Ok(accepted as f64 / proposed.max(1) as f64)
            }
        }
    }

    /// Pushes every particle through the model's dynamics.
    pub fn propagate<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        for p in &mut self.particles {
            self.model.propagate_in_place(p, rng)?;
        }
        Ok(())
    }

    fn linear_predictors(&self, particle: &ParamVector, context: &[f64]) -> Vec<f64> {
        (0..self.model.arms()).map(|k| self.model.linear_predictor_unchecked(particle, k, context)).collect()
    }

    /// Draws a particle index proportionally to the current weights.
    pub fn draw_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        // Rounding left u above the last partial sum.
        self.weights.iter().rposition(|&w| w > 0.0).unwrap_or(self.len() - 1)
    }

    /// Thompson sampling: one weighted particle draw, then the arm with the
    /// highest expected reward under it.
    pub fn thompson_select<R: Rng + ?Sized>(&self, context: &[f64], rng: &mut R) -> Result<usize> {
        self.model.check_context(context)?;
        let i = self.draw_index(rng);
        // The link is strictly increasing, so the argmax of the linear
        // predictor is the argmax of the expected reward.
        Ok(argmax_random_tie(&self.linear_predictors(&self.particles[i], context), rng))
    }

    /// Weighted Monte Carlo estimate of each arm's probability of being
    /// optimal; ties split evenly.
    pub fn probability_of_optimality(&self, context: &[f64]) -> Result<Vec<f64>> {
        self.model.check_context(context)?;
        let mut probs = vec![0.0; self.model.arms()];
        for (p, w) in self.particles.iter().zip(&self.weights) {
            let best = argmax_set(&self.linear_predictors(p, context));
            let share = w / best.len() as f64;
            for k in best {
                probs[k] += share;
            }
        }
        Ok(probs)
    }

    /// Weighted mean of an arbitrary functional.
    pub fn expectation<F: Fn(&ParamVector) -> f64>(&self, f: F) -> f64 {
        self.particles.iter().zip(&self.weights).map(|(p, w)| w * f(p)).sum()
    }

    /// Weighted per-coordinate mean and variance.
    pub fn summary(&self) -> PosteriorSummary {
        let template = &self.particles[0];
        let m = template.num_coords();
        let mut mean = vec![0.0; m];
        for (p, w) in self.particles.iter().zip(&self.weights) {
            for (acc, x) in mean.iter_mut().zip(p.flat()) {
                *acc += w * x;
            }
        }
        let mut var = vec![0.0; m];
        for (p, w) in self.particles.iter().zip(&self.weights) {
            for ((acc, x), mu) in var.iter_mut().zip(p.flat()).zip(&mean) {
                *acc += w * (x - mu) * (x - mu);
            }
        }
        PosteriorSummary { mean: template.with_flat(&mean), variance: template.with_flat(&var) }
    }
}

/// `1 / Σ w_i²` for normalized weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}
