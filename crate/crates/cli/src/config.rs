//! Run configuration: a versioned TOML document, scale presets and
//! validation with key paths.
//!
//! ```toml
//! version = 1
//! experiment = "static-sim"   # static-sim | dynamic-sim | replay | bench
//! scale = "desk"              # desk | paper
//! seed = 2024
//! particles = 500
//!
//! [[policies]]
//! kind = "smc-static"
//!
//! [[policies]]
//! kind = "ucb"
//! confidence = 0.9
//! ```
//!
//! Unset keys are filled from the preset; the fully resolved document is
//! written next to the outputs and reproduces the run when fed back in.

use crate::error::CliError;
use serde::{Deserialize, Serialize};
use smc_bandits::model::{LinkFunction, ObservationModel, PriorSpec};
use smc_bandits::policies::{PolicySpec, SmcDefaults};
use smc_bandits::replay::{sidecar_path, LogMetadata};
use smc_bandits::rng::rng_from_seed;
use smc_bandits::sim::{BenchConfig, Scenario, SimConfig, DYNAMIC_ARMS, STATIC_ARMS, STATIC_DIM};
use smc_bandits::smc::{DegeneracyMode, ResamplingScheme};
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    #[default]
    Desk,
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    StaticSim,
    DynamicSim,
    Replay,
    Bench,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::StaticSim => "static-sim",
            Self::DynamicSim => "dynamic-sim",
            Self::Replay => "replay",
            Self::Bench => "bench",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplaySection {
    /// CSV log with a JSON sidecar. Relative paths resolve against the
    /// config file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log: Option<PathBuf>,
    /// Rows of a synthetic uniformly logged static-study log, used when no
    /// log file is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic_rows: Option<u64>,
    /// Independent replays per policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runs: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizons: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeats: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub experiment: Experiment,
    #[serde(default)]
    pub scale: Scale,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particles: Option<usize>,
    /// ESS threshold `c`; defaults to half the particle count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<ResamplingScheme>,
    /// Gibbs sweeps per move step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweeps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degeneracy: Option<DegeneracyMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_variance: Option<f64>,
    /// Worker threads; 0 means all available cores, 1 runs sequentially.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub policies: Vec<PolicySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay: Option<ReplaySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchSection>,
}

fn invalid(path: &str, message: impl Into<String>) -> CliError {
    CliError::Config { path: path.to_string(), message: message.into() }
}

/// Parses a TOML document. Unknown keys and type mismatches are reported
/// with their key path.
pub fn parse_config(source: &str) -> Result<RunConfig, CliError> {
    let de = toml::Deserializer::parse(source).map_err(|e| CliError::Syntax(e.to_string()))?;
    let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        invalid(&path, e.into_inner().message().trim().to_string())
    })?;
    if config.version != CONFIG_VERSION {
        return Err(invalid("version", format!("unsupported version {}, expected {CONFIG_VERSION}", config.version)));
    }
    Ok(config)
}

/// Reads the resolved config embedded in a run manifest.
pub fn parse_manifest(source: &str) -> Result<RunConfig, CliError> {
    let manifest: serde_json::Value = serde_json::from_str(source).map_err(|e| CliError::Syntax(e.to_string()))?;
    let embedded = manifest.get("config").ok_or_else(|| invalid("config", "manifest has no embedded config"))?;
    let config: RunConfig = serde_path_to_error::deserialize(embedded).map_err(|e| {
        let path = format!("config.{}", e.path());
        invalid(&path, e.into_inner().to_string())
    })?;
    if config.version != CONFIG_VERSION {
        return Err(invalid(
            "config.version",
            format!("unsupported version {}, expected {CONFIG_VERSION}", config.version),
        ));
    }
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    let mut config =
        if path.extension().is_some_and(|e| e == "json") { parse_manifest(&text)? } else { parse_config(&text)? };
    let base = path.parent().unwrap_or(Path::new("."));
    if let Some(log) = config.replay.as_mut().and_then(|r| r.log.as_mut()) {
        if log.is_relative() {
            *log = base.join(&*log);
        }
    }
    Ok(config)
}

impl RunConfig {
    /// Defaults for `experiment` with every key left to the preset.
    pub fn minimal(experiment: Experiment) -> Self {
        Self {
            version: CONFIG_VERSION,
            experiment,
            scale: Scale::Desk,
            seed: 0,
            out: None,
            horizon: None,
            replications: None,
            particles: None,
            threshold: None,
            scheme: None,
            sweeps: None,
            degeneracy: None,
            prior_variance: None,
            workers: None,
            policies: Vec::new(),
            replay: None,
            bench: None,
        }
    }

    /// Fills every unset key from the scale preset and validates the result.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        let paper = self.scale == Scale::Paper;
        let uses_particles = self.experiment != Experiment::Bench;
        match self.experiment {
            Experiment::StaticSim => {
                self.horizon.get_or_insert(if paper { 10_000 } else { 2000 });
                self.replications.get_or_insert(if paper { 50 } else { 20 });
            }
            Experiment::DynamicSim => {
                self.horizon.get_or_insert(2000);
                self.replications.get_or_insert(if paper { 50 } else { 20 });
            }
            Experiment::Replay => {
                let replay = self.replay.get_or_insert_with(Default::default);
                if replay.log.is_none() {
                    replay.synthetic_rows.get_or_insert(if paper { 100_000 } else { 10_000 });
                }
                replay.runs.get_or_insert(if paper { 100 } else { 20 });
            }
            Experiment::Bench => {
                let bench = self.bench.get_or_insert_with(Default::default);
                let defaults = BenchConfig::default();
                bench.horizons.get_or_insert_with(|| {
                    if paper {
                        (1..=10).map(|i| 500 * i).collect()
                    } else {
                        defaults.horizons.clone()
                    }
                });
                bench.samples.get_or_insert(defaults.samples);
                bench.burn_in_fraction.get_or_insert(defaults.burn_in_fraction);
                bench.repeats.get_or_insert(defaults.repeats);
            }
        }
        if uses_particles {
            let n = *self.particles.get_or_insert(if paper { 1000 } else { 500 });
            self.threshold.get_or_insert(n as f64 / 2.0);
            self.scheme.get_or_insert(ResamplingScheme::Multinomial);
            self.sweeps.get_or_insert(1);
            self.degeneracy.get_or_insert(DegeneracyMode::Lenient);
        }
        self.prior_variance.get_or_insert(if self.experiment == Experiment::DynamicSim { 1.0 } else { 10.0 });
        self.workers.get_or_insert(0);
        if self.policies.is_empty() {
            self.policies = default_policies(self.experiment);
        }
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<(), CliError> {
        let positive = |path: &str, value: Option<u64>| match value {
            Some(0) => Err(invalid(path, "must be positive")),
            _ => Ok(()),
        };
        positive("horizon", self.horizon)?;
        positive("replications", self.replications.map(|v| v as u64))?;
        positive("particles", self.particles.map(|v| v as u64))?;
        positive("sweeps", self.sweeps.map(|v| v as u64))?;
        if let (Some(n), Some(c)) = (self.particles, self.threshold) {
            if !(0.0..=n as f64 + 1.0).contains(&c) {
                return Err(invalid("threshold", format!("{c} outside [0, N+1] for N = {n}")));
            }
        }
        if let Some(v) = self.prior_variance {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid("prior_variance", "must be positive and finite"));
            }
        }
        let sim = matches!(self.experiment, Experiment::StaticSim | Experiment::DynamicSim);
        if !sim && (self.horizon.is_some() || self.replications.is_some()) {
            return Err(invalid("horizon", format!("only applies to simulations, not {}", self.experiment.as_str())));
        }
        if self.experiment != Experiment::Replay && self.replay.is_some() {
            return Err(invalid("replay", "section only applies to experiment = \"replay\""));
        }
        if self.experiment != Experiment::Bench && self.bench.is_some() {
            return Err(invalid("bench", "section only applies to experiment = \"bench\""));
        }
        if let Some(replay) = &self.replay {
            positive("replay.runs", replay.runs.map(|v| v as u64))?;
            positive("replay.synthetic_rows", replay.synthetic_rows)?;
            match (&replay.log, replay.synthetic_rows) {
                (Some(_), Some(_)) => return Err(invalid("replay", "give either `log` or `synthetic_rows`, not both")),
                (Some(log), None) => {
                    if !log.is_file() {
                        return Err(invalid("replay.log", format!("{} does not exist", log.display())));
                    }
                    if !sidecar_path(log).is_file() {
                        return Err(invalid(
                            "replay.log",
                            format!("sidecar {} does not exist", sidecar_path(log).display()),
                        ));
                    }
                }
                _ => {}
            }
        }
        if let Some(bench) = &self.bench {
            if bench.horizons.as_ref().is_some_and(|h| h.is_empty() || h.contains(&0)) {
                return Err(invalid("bench.horizons", "needs at least one positive horizon"));
            }
            positive("bench.samples", bench.samples.map(|v| v as u64))?;
            positive("bench.repeats", bench.repeats.map(|v| v as u64))?;
            if bench.burn_in_fraction.is_some_and(|f| !(0.0..1.0).contains(&f)) {
                return Err(invalid("bench.burn_in_fraction", "must lie in [0, 1)"));
            }
        }
        if self.experiment == Experiment::Bench {
            if !self.policies.is_empty() {
                return Err(invalid("policies", "the benchmark compares its own two samplers"));
            }
            return Ok(());
        }
        let mut labels: Vec<String> = Vec::new();
        for (i, spec) in self.policies.iter().enumerate() {
            let label = spec.label();
            if labels.contains(&label) {
                return Err(invalid(&format!("policies[{i}]"), format!("duplicate policy label '{label}'")));
            }
            labels.push(label);
        }
        if let Some(model) = self.probe_model()? {
            let defaults = self.smc_defaults();
            let probe = SmcDefaults { particles: defaults.particles.min(8), threshold: None, ..defaults };
            for (i, spec) in self.policies.iter().enumerate() {
                spec.build(&model, &probe, &mut rng_from_seed(0))
                    .map_err(|e| invalid(&format!("policies[{i}]"), e.to_string()))?;
            }
        }
        Ok(())
    }

    /// A model of the right shape to check that every policy can be built.
    fn probe_model(&self) -> Result<Option<Arc<ObservationModel>>, CliError> {
        let variance = self.prior_variance.unwrap_or(1.0);
        let (arms, dim, intercept) = match self.experiment {
            Experiment::StaticSim => (STATIC_ARMS, STATIC_DIM, true),
            Experiment::DynamicSim => (DYNAMIC_ARMS, 1, true),
            Experiment::Replay => match self.replay.as_ref().and_then(|r| r.log.as_ref()) {
                Some(log) => {
                    let meta = read_sidecar(log)?;
                    (meta.arms, meta.dim, false)
                }
                None => (STATIC_ARMS, STATIC_DIM, false),
            },
            Experiment::Bench => return Ok(None),
        };
        Ok(Some(Arc::new(
            base_model(arms, dim, variance, intercept).map_err(|e| invalid("replay.log", e.to_string()))?,
        )))
    }

    pub fn smc_defaults(&self) -> SmcDefaults {
        let mut defaults = SmcDefaults::new(self.particles.unwrap_or(1));
        defaults.threshold = self.threshold;
        if let Some(scheme) = self.scheme {
            defaults.scheme = scheme;
        }
        if let Some(sweeps) = self.sweeps {
            defaults.sweeps = sweeps;
        }
        if let Some(mode) = self.degeneracy {
            defaults.degeneracy = mode;
        }
        defaults
    }

    /// Sequential unless more than one worker is allowed.
    pub fn parallel(&self) -> bool {
        self.workers != Some(1)
    }

    /// Simulation settings of a resolved static or dynamic config.
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            scenario: if self.experiment == Experiment::DynamicSim { Scenario::Dynamic } else { Scenario::Static },
            horizon: self.horizon.expect("resolved"),
            replications: self.replications.expect("resolved"),
            policies: self.policies.clone(),
            smc: self.smc_defaults(),
            prior_variance: self.prior_variance.expect("resolved"),
            seed: self.seed,
            track_posterior: self.experiment == Experiment::DynamicSim,
            parallel: self.parallel(),
        }
    }

    pub fn bench_config(&self) -> BenchConfig {
        let bench = self.bench.clone().unwrap_or_default();
        let defaults = BenchConfig::default();
        BenchConfig {
            horizons: bench.horizons.unwrap_or(defaults.horizons),
            samples: bench.samples.unwrap_or(defaults.samples),
            burn_in_fraction: bench.burn_in_fraction.unwrap_or(defaults.burn_in_fraction),
            repeats: bench.repeats.unwrap_or(defaults.repeats),
            prior_variance: self.prior_variance.unwrap_or(defaults.prior_variance),
            seed: self.seed,
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::Syntax(e.to_string()))
    }
}

fn default_policies(experiment: Experiment) -> Vec<PolicySpec> {
    let baselines =
        [PolicySpec::eps_greedy(0.1), PolicySpec::eps_greedy(0.01), PolicySpec::ucb(0.9), PolicySpec::ucb(0.95)];
    match experiment {
        Experiment::StaticSim => std::iter::once(PolicySpec::smc_static()).chain(baselines).collect(),
        Experiment::DynamicSim => [PolicySpec::smc_dynamic(1.0), PolicySpec::smc_static()]
            .into_iter()
            .chain(baselines)
            .chain([PolicySpec::random()])
            .collect(),
        Experiment::Replay => {
            vec![PolicySpec::random(), PolicySpec::smc_static(), PolicySpec::eps_greedy(0.1), PolicySpec::ucb(0.95)]
        }
        Experiment::Bench => Vec::new(),
    }
}

/// Probit model with an independent zero-mean prior.
pub fn base_model(
    arms: usize,
    dim: usize,
    prior_variance: f64,
    intercept: bool,
) -> smc_bandits::Result<ObservationModel> {
    let model =
        ObservationModel::new(arms, dim, LinkFunction::Probit, PriorSpec::independent(dim, 0.0, prior_variance)?)?;
    Ok(if intercept { model } else { model.without_intercept() })
}

pub fn read_sidecar(log: &Path) -> Result<LogMetadata, CliError> {
    let path = sidecar_path(log);
    let text = std::fs::read_to_string(&path).map_err(|source| CliError::Io { path: path.clone(), source })?;
    serde_json::from_str(&text).map_err(|e| invalid("replay.log", format!("sidecar {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_static_config_gets_desk_defaults() {
        let config = parse_config("version = 1\nexperiment = \"static-sim\"\n").unwrap().resolve().unwrap();
        assert_eq!(config.particles, Some(500));
        assert_eq!(config.threshold, Some(250.0));
        assert_eq!(config.scheme, Some(ResamplingScheme::Multinomial));
        assert_eq!((config.horizon, config.replications), (Some(2000), Some(20)));
        assert_eq!(config.policies.len(), 5);
    }

    #[test]
    fn paper_scale_preset() {
        let text = "version = 1\nexperiment = \"static-sim\"\nscale = \"paper\"\n";
        let config = parse_config(text).unwrap().resolve().unwrap();
        assert_eq!((config.horizon, config.replications, config.particles), (Some(10_000), Some(50), Some(1000)));
        assert_eq!(config.threshold, Some(500.0));
    }

    #[test]
    fn threshold_above_n_plus_one_is_rejected() {
        let text = "version = 1\nexperiment = \"static-sim\"\nparticles = 100\nthreshold = 102\n";
        match parse_config(text).unwrap().resolve() {
            Err(CliError::Config { path, .. }) => assert_eq!(path, "threshold"),
            other => panic!("{other:?}"),
        }
        let text = "version = 1\nexperiment = \"static-sim\"\nparticles = 100\nthreshold = 101\n";
        assert!(parse_config(text).unwrap().resolve().is_ok());
    }

    #[test]
    fn errors_carry_key_paths() {
        let unknown = "version = 1\nexperiment = \"bench\"\n[bench]\nhorizon = [1]\n";
        match parse_config(unknown) {
            Err(CliError::Config { path, message }) => {
                assert_eq!(path, "bench.horizon");
                assert!(message.contains("horizon"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let mistyped =
            "version = 1\nexperiment = \"static-sim\"\n[[policies]]\nkind = \"ucb\"\nconfidence = \"high\"\n";
        match parse_config(mistyped) {
            Err(CliError::Config { path, .. }) => assert!(path.starts_with("policies[0]"), "{path}"),
            other => panic!("{other:?}"),
        }
        let bad_policy = "version = 1\nexperiment = \"static-sim\"\n[[policies]]\nkind = \"random\"\n[[policies]]\nkind = \"eps-greedy\"\nepsilon = 1.5\n";
        match parse_config(bad_policy).unwrap().resolve() {
            Err(CliError::Config { path, .. }) => assert_eq!(path, "policies[1]"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_config("version = 2\nexperiment = \"bench\"\n"), Err(CliError::Config { .. })));
        assert!(matches!(parse_config("version = "), Err(CliError::Syntax(_))));
    }

    #[test]
    fn missing_log_is_rejected() {
        let text = "version = 1\nexperiment = \"replay\"\n[replay]\nlog = \"/nonexistent/log.csv\"\n";
        match parse_config(text).unwrap().resolve() {
            Err(CliError::Config { path, .. }) => assert_eq!(path, "replay.log"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn resolved_config_round_trips() {
        for experiment in [Experiment::StaticSim, Experiment::DynamicSim, Experiment::Replay, Experiment::Bench] {
            let config = RunConfig::minimal(experiment).resolve().unwrap();
            let text = config.to_toml().unwrap();
            let again = parse_config(&text).unwrap();
            assert_eq!(again, config, "{text}");
            assert_eq!(again.clone().resolve().unwrap(), config);
        }
    }
}
