//! Sequential Monte Carlo posterior engine.
//!
//! A [`ParticleSet`] holds `N` weighted parameter draws approximating the
//! posterior given the observations so far. Observations enter through
//! importance reweighting in the log domain; when the effective sample size
//! falls below a threshold the set is resampled and, for static models,
//! rejuvenated with a posterior-invariant kernel. Dynamic models instead
//! diffuse every particle through the random-walk dynamics each step.

mod checkpoint;
mod history;
mod kernel;
mod particles;
mod step;

pub use checkpoint::{model_hash, Checkpoint, CHECKPOINT_VERSION};
pub use history::History;
pub use kernel::{check_gibbs_model, probit_gibbs_sweep, GibbsCache, MoveKernel, MoveKernelKind};
pub use particles::{
    effective_sample_size, resample_indices, DegeneracyMode, ParticleSet, PosteriorSummary, ResamplingScheme,
};
pub use step::{assimilate_dynamic, assimilate_static, step_dynamic, step_static, SmcConfig, StepOutcome};
