//! Particle Thompson sampling policies.

use super::{digest, ArmPosterior, Policy};
use crate::error::{BanditError, Result};
use crate::model::{InteractionRecord, ObservationModel};
use crate::rng::BanditRng;
use crate::smc::{assimilate_dynamic, assimilate_static, History, ParticleSet, SmcConfig};
use serde::Serialize;
use std::sync::Arc;

fn posteriors(set: &ParticleSet, context: &[f64]) -> Option<Vec<ArmPosterior>> {
    let model = set.model();
    model.check_context(context).ok()?;
    let summary = set.summary();
    Some(
        (0..model.arms())
            .map(|k| ArmPosterior {
                mean_reward: set
                    .expectation(|p| model.expected_reward(p, k, context).expect("particle shapes match the model")),
                coef_mean: summary.mean.coefficients(k).to_vec(),
                coef_variance: summary.variance.coefficients(k).to_vec(),
            })
            .collect(),
    )
}

/// Resample-move SMC with Thompson selection on a static model.
#[derive(Clone, Debug, Serialize)]
pub struct SmcStatic {
    name: String,
    set: ParticleSet,
    history: History,
    config: SmcConfig,
    last_resampled: Option<bool>,
}

impl SmcStatic {
    pub fn new(
        name: impl Into<String>,
        model: Arc<ObservationModel>,
        particles: usize,
        config: SmcConfig,
        rng: &mut BanditRng,
    ) -> Result<Self> {
        if model.is_dynamic() {
            return Err(BanditError::Config("smc-static needs a model without dynamics".into()));
        }
        config.validate(particles)?;
        config.kernel.validate(&model)?;
        let history = History::new(model.arms());
        let set = ParticleSet::init(model, particles, rng)?;
        Ok(Self { name: name.into(), set, history, config, last_resampled: None })
    }

    pub fn particles(&self) -> &ParticleSet {
        &self.set
    }

    pub fn history(&self) -> &History {
        &self.history
    }
}

impl Policy for SmcStatic {
    fn name(&self) -> &str {
        &self.name
    }

    fn arms(&self) -> usize {
        self.set.model().arms()
    }

    fn context_dim(&self) -> usize {
        self.set.model().dim()
    }

    fn select(&self, context: &[f64], rng: &mut BanditRng) -> Result<usize> {
        self.set.thompson_select(context, rng)
    }

    fn update(&mut self, record: &InteractionRecord, rng: &mut BanditRng) -> Result<()> {
        let (_, resampled) = assimilate_static(&mut self.set, &mut self.history, record.clone(), &self.config, rng)?;
        self.last_resampled = Some(resampled);
        Ok(())
    }

    fn state_digest(&self) -> String {
        digest(self)
    }

    fn arm_posteriors(&self, context: &[f64]) -> Option<Vec<ArmPosterior>> {
        posteriors(&self.set, context)
    }

    fn last_resampled(&self) -> Option<bool> {
        self.last_resampled
    }
}

/// Propagate-reweight-resample SMC with Thompson selection on a dynamic
/// model. The particle set is always held one propagation ahead, as the
/// predictive distribution for the next interaction, so that `select` stays
/// free of side effects. The filtered set, before that propagation, is kept
/// for posterior reporting.
#[derive(Clone, Debug, Serialize)]
pub struct SmcDynamic {
    name: String,
    set: ParticleSet,
    filtered: ParticleSet,
    config: SmcConfig,
    last_resampled: Option<bool>,
}

impl SmcDynamic {
    pub fn new(
        name: impl Into<String>,
        model: Arc<ObservationModel>,
        particles: usize,
        config: SmcConfig,
        rng: &mut BanditRng,
    ) -> Result<Self> {
        if !model.is_dynamic() {
            return Err(BanditError::Config("smc-dynamic needs a model with dynamics".into()));
        }
        config.validate(particles)?;
        let filtered = ParticleSet::init(model, particles, rng)?;
        let mut set = filtered.clone();
        set.propagate(rng)?;
        Ok(Self { name: name.into(), set, filtered, config, last_resampled: None })
    }

    /// Predictive particles for the next interaction.
    pub fn particles(&self) -> &ParticleSet {
        &self.set
    }

    /// Particles after the last observation, before propagation.
    pub fn filtered(&self) -> &ParticleSet {
        &self.filtered
    }
}

impl Policy for SmcDynamic {
    fn name(&self) -> &str {
        &self.name
    }

    fn arms(&self) -> usize {
        self.set.model().arms()
    }

    fn context_dim(&self) -> usize {
        self.set.model().dim()
    }

    fn select(&self, context: &[f64], rng: &mut BanditRng) -> Result<usize> {
        self.set.thompson_select(context, rng)
    }

    fn update(&mut self, record: &InteractionRecord, rng: &mut BanditRng) -> Result<()> {
        let (_, resampled) = assimilate_dynamic(&mut self.set, record, &self.config, rng)?;
        self.filtered.clone_from(&self.set);
        self.set.propagate(rng)?;
        self.last_resampled = Some(resampled);
        Ok(())
    }

    fn state_digest(&self) -> String {
        digest(self)
    }

    fn arm_posteriors(&self, context: &[f64]) -> Option<Vec<ArmPosterior>> {
        posteriors(&self.filtered, context)
    }

    fn last_resampled(&self) -> Option<bool> {
        self.last_resampled
    }
}
