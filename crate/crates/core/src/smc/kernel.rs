//! Posterior-invariant move kernels for the static resample-move step.
//!
//! `ProbitGibbs` is the Albert–Chib data-augmentation sampler: given the
//! current coefficients, each observation of arm `k` gets a latent utility
//! `z ~ N(x·beta_k, 1)` truncated to the side dictated by its reward; given
//! the latents, `beta_k` has a Gaussian linear-model posterior. The precision
//! matrix of that posterior does not depend on the latents, so its Cholesky
//! factor is computed once per move and shared by every particle.

use super::History;
use crate::error::{BanditError, Result};
use crate::model::{LinkFunction, ObservationModel, ParamVector, PriorSpec};
use crate::normal::sample_latent;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MoveKernelKind {
    ProbitGibbs,
    RandomWalkMetropolis { step_scale: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoveKernel {
    pub kind: MoveKernelKind,
    pub sweeps: usize,
}

impl Default for MoveKernel {
    fn default() -> Self {
        Self { kind: MoveKernelKind::ProbitGibbs, sweeps: 1 }
    }
}

impl MoveKernel {
    pub fn probit_gibbs(sweeps: usize) -> Self {
        Self { kind: MoveKernelKind::ProbitGibbs, sweeps }
    }

    pub fn random_walk(step_scale: f64, sweeps: usize) -> Self {
        Self { kind: MoveKernelKind::RandomWalkMetropolis { step_scale }, sweeps }
    }

    pub fn validate(&self, model: &ObservationModel) -> Result<()> {
        if self.sweeps < 1 {
            return Err(BanditError::Config("move kernel needs at least one sweep".into()));
        }
        match self.kind {
            MoveKernelKind::ProbitGibbs => check_gibbs_model(model),
            MoveKernelKind::RandomWalkMetropolis { step_scale } if !(step_scale >= 0.0 && step_scale.is_finite()) => {
                Err(BanditError::Config(format!("step scale must be non-negative, got {step_scale}")))
            }
            _ => Ok(()),
        }
    }
}

/// Rejects models the probit Gibbs kernel cannot sample.
pub fn check_gibbs_model(model: &ObservationModel) -> Result<()> {
    if model.link() != LinkFunction::Probit {
        return Err(BanditError::Config("probit Gibbs requires the probit link".into()));
    }
    if !model.prior().is_independent() {
        return Err(BanditError::Config("probit Gibbs requires an independent-normal prior".into()));
    }
    if model.shared_dim() > 0 {
        return Err(BanditError::Config("probit Gibbs does not support shared coefficients".into()));
    }
    Ok(())
}

struct ArmBlock {
    /// Row-major `n × d` design.
    design: Vec<f64>,
    rewards: Vec<bool>,
    chol: Cholesky<f64, Dyn>,
    prior_term: DVector<f64>,
}

/// Per-arm sufficient structure for Albert–Chib sweeps over a fixed history.
pub struct GibbsCache {
    dim: usize,
    arms: Vec<ArmBlock>,
}

impl GibbsCache {
    pub fn new(model: &ObservationModel, history: &History) -> Result<Self> {
        check_gibbs_model(model)?;
        let PriorSpec::IndependentNormal { mean, variance } = model.prior() else { unreachable!("checked above") };
        let d = model.dim();
        let mut arms = Vec::with_capacity(model.arms());
        for k in 0..model.arms() {
            let mut design = Vec::new();
            let mut rewards = Vec::new();
            for r in history.arm_records(k) {
                design.extend_from_slice(&r.context);
                rewards.push(r.reward);
            }
            let mut precision = DMatrix::<f64>::zeros(d, d);
            for j in 0..d {
                precision[(j, j)] = 1.0 / variance[j];
            }
            for row in design.chunks_exact(d) {
                for a in 0..d {
                    for b in 0..d {
                        precision[(a, b)] += row[a] * row[b];
                    }
                }
            }
            let chol = Cholesky::new(precision).ok_or_else(|| {
                BanditError::Numerical(format!("posterior precision for arm {k} is not positive definite"))
            })?;
            let prior_term = DVector::from_iterator(d, (0..d).map(|j| mean[j] / variance[j]));
            arms.push(ArmBlock { design, rewards, chol, prior_term });
        }
        Ok(Self { dim: d, arms })
    }

    /// Latent utilities for `arm` given the particle's current coefficients.
    pub fn sample_latents<R: Rng + ?Sized>(&self, particle: &ParamVector, arm: usize, rng: &mut R) -> Vec<f64> {
        let block = &self.arms[arm];
        let beta = particle.coefficients(arm);
        block
            .design
            .chunks_exact(self.dim)
            .zip(&block.rewards)
            .map(|(x, &y)| {
                let mean: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
                sample_latent(mean, y, rng)
            })
            .collect()
    }

    /// One full sweep: latents then coefficients, arm by arm.
    pub fn sweep<R: Rng + ?Sized>(&self, particle: &mut ParamVector, rng: &mut R) {
        let d = self.dim;
        for (k, block) in self.arms.iter().enumerate() {
            let latents = self.sample_latents(particle, k, rng);
            let mut rhs = block.prior_term.clone();
            for (x, z) in block.design.chunks_exact(d).zip(&latents) {
                for j in 0..d {
                    rhs[j] += x[j] * z;
                }
            }
            let mean = block.chol.solve(&rhs);
            // beta = mean + L^{-T} xi has covariance (L L^T)^{-1}.
            let xi = DVector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(rng)));
            let noise =
                block.chol.l_dirty().tr_solve_lower_triangular(&xi).expect("Cholesky factor has a positive diagonal");
            for (b, (m, e)) in particle.coefficients_mut(k).iter_mut().zip(mean.iter().zip(noise.iter())) {
                *b = m + e;
            }
        }
    }
}

/// Standalone Albert–Chib sweep over `history`. Builds the per-arm cache on
/// every call; [`ParticleSet::move_particles`](super::ParticleSet::move_particles)
/// reuses one cache for all particles.
pub fn probit_gibbs_sweep<R: Rng + ?Sized>(
    particle: &ParamVector,
    history: &History,
    model: &ObservationModel,
    rng: &mut R,
) -> Result<ParamVector> {
    model.check_params(particle)?;
    let cache = GibbsCache::new(model, history)?;
    let mut next = particle.clone();
    cache.sweep(&mut next, rng);
    Ok(next)
}

pub(crate) fn log_posterior(model: &ObservationModel, params: &ParamVector, history: &History) -> f64 {
    let prior = model.prior_logdensity_unchecked(params);
    if !prior.is_finite() {
        return prior;
    }
    prior + history.records().iter().map(|r| model.log_likelihood_unchecked(params, r)).sum::<f64>()
}

/// One joint Gaussian random-walk Metropolis proposal over every free
/// coordinate. Returns whether it was accepted.
pub(crate) fn rwm_step<R: Rng + ?Sized>(
    model: &ObservationModel,
    particle: &mut ParamVector,
    history: &History,
    step_scale: f64,
    rng: &mut R,
) -> bool {
    let free = model.free_coordinates();
    let current: Vec<f64> = particle.flat().collect();
    let proposal_values: Vec<f64> = current
        .iter()
        .zip(&free)
        .map(|(&x, &f)| {
            if f {
                let e: f64 = StandardNormal.sample(rng);
                x + step_scale * e
            } else {
                x
            }
        })
        .collect();
    let proposal = particle.with_flat(&proposal_values);
    let log_ratio = log_posterior(model, &proposal, history) - log_posterior(model, particle, history);
    let u: f64 = rng.random();
    if log_ratio.is_finite() && u.ln() < log_ratio || log_ratio == f64::INFINITY {
        *particle = proposal;
        true
    } else {
        false
    }
}
