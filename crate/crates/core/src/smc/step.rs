//! Full bandit iterations: the static resample-move loop and the dynamic
//! (restless) propagate-reweight-resample loop.

use super::{DegeneracyMode, History, MoveKernel, ParticleSet, ResamplingScheme};
use crate::error::{BanditError, Result};
use crate::model::InteractionRecord;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmcConfig {
    /// Resample when the ESS falls strictly below this value.
    pub threshold: f64,
    pub scheme: ResamplingScheme,
    pub kernel: MoveKernel,
    pub degeneracy: DegeneracyMode,
}

impl SmcConfig {
    /// Defaults for `n` particles: threshold `n / 2`, multinomial
    /// resampling, one probit Gibbs sweep, strict degeneracy handling.
    pub fn for_particles(n: usize) -> Self {
        Self {
            threshold: n as f64 / 2.0,
            scheme: ResamplingScheme::Multinomial,
            kernel: MoveKernel::default(),
            degeneracy: DegeneracyMode::Strict,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(0.0..=n as f64 + 1.0).contains(&self.threshold) {
            return Err(BanditError::Config(format!("ESS threshold {} outside [0, N+1] for N={n}", self.threshold)));
        }
        if self.kernel.sweeps < 1 {
            return Err(BanditError::Config("move kernel needs at least one sweep".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub arm: usize,
    pub reward: bool,
    /// ESS after reweighting, before any resampling.
    pub ess: f64,
    pub resampled: bool,
}

/// Folds one observation into a static posterior: record it, reweight, and
/// resample-move when the ESS drops below the threshold. Returns the
/// post-reweight ESS and whether a resample happened.
pub fn assimilate_static<R: Rng + ?Sized>(
    set: &mut ParticleSet,
    history: &mut History,
    record: InteractionRecord,
    config: &SmcConfig,
    rng: &mut R,
) -> Result<(f64, bool)> {
    set.model().check_record(&record)?;
    set.reweight(&record, config.degeneracy)?;
    history.push(record)?;
    let ess = set.effective_sample_size();
    if ess < config.threshold {
        set.resample(config.scheme, rng);
        set.move_particles(&config.kernel, history, rng)?;
        Ok((ess, true))
    } else {
        Ok((ess, false))
    }
}

/// Dynamic counterpart of [`assimilate_static`]: reweight, then resample
/// without a move step.
pub fn assimilate_dynamic<R: Rng + ?Sized>(
    set: &mut ParticleSet,
    record: &InteractionRecord,
    config: &SmcConfig,
    rng: &mut R,
) -> Result<(f64, bool)> {
    set.reweight(record, config.degeneracy)?;
    let ess = set.effective_sample_size();
    if ess < config.threshold {
        set.resample(config.scheme, rng);
        Ok((ess, true))
    } else {
        Ok((ess, false))
    }
}

/// One static iteration: Thompson select with the current weights, observe
/// the reward through `observe`, then [`assimilate_static`].
pub fn step_static<R, F>(
    set: &mut ParticleSet,
    history: &mut History,
    context: &[f64],
    config: &SmcConfig,
    rng: &mut R,
    observe: F,
) -> Result<StepOutcome>
where
    R: Rng + ?Sized,
    F: FnOnce(usize) -> bool,
{
    if set.model().is_dynamic() {
        return Err(BanditError::Contract("step_static called on a dynamic model".into()));
    }
    let arm = set.thompson_select(context, rng)?;
    let reward = observe(arm);
    let record = InteractionRecord::new(context.to_vec(), arm, reward, history.last_time() + 1);
    let (ess, resampled) = assimilate_static(set, history, record, config, rng)?;
    Ok(StepOutcome { arm, reward, ess, resampled })
}

/// One dynamic iteration: propagate every particle, Thompson select, observe,
/// reweight, resample if needed.
pub fn step_dynamic<R, F>(
    set: &mut ParticleSet,
    context: &[f64],
    config: &SmcConfig,
    rng: &mut R,
    observe: F,
) -> Result<StepOutcome>
where
    R: Rng + ?Sized,
    F: FnOnce(usize) -> bool,
{
    set.propagate(rng)?;
    let arm = set.thompson_select(context, rng)?;
    let reward = observe(arm);
    let record = InteractionRecord::new(context.to_vec(), arm, reward, set.time() + 1);
    let (ess, resampled) = assimilate_dynamic(set, &record, config, rng)?;
    Ok(StepOutcome { arm, reward, ess, resampled })
}
