//! Declarative policy descriptions, as read from run configs.

use super::{BetaCounts, BetaThompson, EpsGreedy, FixedArm, Policy, RandomPolicy, SmcDynamic, SmcStatic, Ucb};
use crate::error::{BanditError, Result};
use crate::model::{DynamicsSpec, ObservationModel};
use crate::rng::BanditRng;
use crate::smc::{DegeneracyMode, MoveKernel, ResamplingScheme, SmcConfig};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Run-level particle settings that individual policies may override.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmcDefaults {
    pub particles: usize,
    /// `None` means `particles / 2`.
    pub threshold: Option<f64>,
    pub scheme: ResamplingScheme,
    pub sweeps: usize,
    pub degeneracy: DegeneracyMode,
}

impl SmcDefaults {
    /// Lenient degeneracy handling, so one surprising reward cannot abort a
    /// long simulation.
    pub fn new(particles: usize) -> Self {
        Self {
            particles,
            threshold: None,
            scheme: ResamplingScheme::Multinomial,
            sweeps: 1,
            degeneracy: DegeneracyMode::Lenient,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicySpec {
    SmcStatic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        particles: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        threshold: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scheme: Option<ResamplingScheme>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sweeps: Option<usize>,
    },
    SmcDynamic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        particles: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        threshold: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scheme: Option<ResamplingScheme>,
        /// Random-walk step variance applied to every coefficient.
        #[serde(default = "unit")]
        step_variance: f64,
    },
    BetaTs {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        #[serde(default = "unit")]
        alpha0: f64,
        #[serde(default = "unit")]
        alpha1: f64,
    },
    EpsGreedy {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        epsilon: f64,
        #[serde(default)]
        exclude_greedy: bool,
    },
    Ucb {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        confidence: f64,
    },
    Random {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    /// Always plays `arm`, counted from 1 like the log files.
    Fixed {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        arm: usize,
    },
}

fn unit() -> f64 {
    1.0
}

impl PolicySpec {
    pub fn smc_static() -> Self {
        Self::SmcStatic { name: None, particles: None, threshold: None, scheme: None, sweeps: None }
    }

    pub fn smc_dynamic(step_variance: f64) -> Self {
        Self::SmcDynamic { name: None, particles: None, threshold: None, scheme: None, step_variance }
    }

    pub fn beta_ts() -> Self {
        Self::BetaTs { name: None, alpha0: 1.0, alpha1: 1.0 }
    }

    pub fn eps_greedy(epsilon: f64) -> Self {
        Self::EpsGreedy { name: None, epsilon, exclude_greedy: false }
    }

    pub fn ucb(confidence: f64) -> Self {
        Self::Ucb { name: None, confidence }
    }

    pub fn random() -> Self {
        Self::Random { name: None }
    }

    /// Display label: the configured name, or one derived from the kind.
    pub fn label(&self) -> String {
        let (name, default) = match self {
            Self::SmcStatic { name, .. } => (name, "smc-static".to_string()),
            Self::SmcDynamic { name, .. } => (name, "smc-dynamic".to_string()),
            Self::BetaTs { name, .. } => (name, "beta-ts".to_string()),
            Self::EpsGreedy { name, epsilon, .. } => (name, format!("eps-greedy-{epsilon}")),
            Self::Ucb { name, confidence } => (name, format!("ucb-{}", confidence * 100.0)),
            Self::Random { name } => (name, "random".to_string()),
            Self::Fixed { name, arm } => (name, format!("fixed-{arm}")),
        };
        name.clone().unwrap_or(default)
    }

    /// Instantiates the policy for `model`, which must be static; the dynamic
    /// SMC policy adds its random-walk dynamics on top. Particle policies
    /// draw their initial particles from `rng`.
    pub fn build(
        &self,
        model: &Arc<ObservationModel>,
        defaults: &SmcDefaults,
        rng: &mut BanditRng,
    ) -> Result<Box<dyn Policy>> {
        if model.is_dynamic() {
            return Err(BanditError::Config("policies are built from a static base model".into()));
        }
        let label = self.label();
        let smc_config = |particles: Option<usize>,
                          threshold: Option<f64>,
                          scheme: Option<ResamplingScheme>,
                          sweeps: Option<usize>| {
            let n = particles.unwrap_or(defaults.particles);
            let mut config = SmcConfig::for_particles(n);
            config.threshold = threshold.or(defaults.threshold).unwrap_or(n as f64 / 2.0);
            config.scheme = scheme.unwrap_or(defaults.scheme);
            config.kernel = MoveKernel::probit_gibbs(sweeps.unwrap_or(defaults.sweeps));
            config.degeneracy = defaults.degeneracy;
            (n, config)
        };
        Ok(match self {
            Self::SmcStatic { particles, threshold, scheme, sweeps, .. } => {
                let (n, config) = smc_config(*particles, *threshold, *scheme, *sweeps);
                Box::new(SmcStatic::new(label, model.clone(), n, config, rng)?)
            }
            Self::SmcDynamic { particles, threshold, scheme, step_variance, .. } => {
                let (n, config) = smc_config(*particles, *threshold, *scheme, None);
                let dynamic =
                    (**model).clone().with_dynamics(DynamicsSpec::random_walk(model.dim(), *step_variance)?)?;
                Box::new(SmcDynamic::new(label, Arc::new(dynamic), n, config, rng)?)
            }
            Self::BetaTs { alpha0, alpha1, .. } => {
                Box::new(BetaThompson::new(label, model.arms(), model.dim(), BetaCounts::new(*alpha0, *alpha1)?)?)
            }
            Self::EpsGreedy { epsilon, exclude_greedy, .. } => {
                Box::new(EpsGreedy::new(label, model.clone(), *epsilon, *exclude_greedy)?)
            }
            Self::Ucb { confidence, .. } => Box::new(Ucb::new(label, model.clone(), *confidence)?),
            Self::Random { .. } => Box::new(RandomPolicy::new(label, model.arms(), model.dim())),
            Self::Fixed { arm, .. } => {
                if *arm < 1 {
                    return Err(BanditError::Config("fixed arm is counted from 1".into()));
                }
                Box::new(FixedArm::new(label, arm - 1, model.arms(), model.dim())?)
            }
        })
    }
}
