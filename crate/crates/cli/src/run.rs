//! Executes a resolved configuration and writes its artifacts.
//!
//! Every run directory holds the experiment outputs, `config.resolved.toml`
//! and `manifest.json`. The manifest embeds the resolved config and the
//! SHA-256 of every output, so a rerun can be checked byte for byte.

use crate::config::{base_model, load_config, Experiment, RunConfig, Scale};
use crate::error::CliError;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use smc_bandits::policies::PolicySpec;
use smc_bandits::replay::{average_reward, replay_evaluate, uniform_log, welch_t_test, ReplayLog, WelchTest};
use smc_bandits::rng::{stream, stream_rng};
use smc_bandits::sim::{bench_smc_vs_mcmc, gen_static_instance, replicate};
use smc_bandits::stats::mean_se;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Replay,
    Bench,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Replay => "replay",
            Self::Bench => "bench",
        }
    }

    fn accepts(self, experiment: Experiment) -> bool {
        matches!(
            (self, experiment),
            (Self::Simulate, Experiment::StaticSim | Experiment::DynamicSim)
                | (Self::Replay, Experiment::Replay)
                | (Self::Bench, Experiment::Bench)
        )
    }

    fn default_experiment(self) -> Experiment {
        match self {
            Self::Simulate => Experiment::StaticSim,
            Self::Replay => Experiment::Replay,
            Self::Bench => Experiment::Bench,
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub scale: Option<Scale>,
    pub deterministic: bool,
}

/// Loads (or defaults) the config for `command`, applies overrides and
/// resolves it.
pub fn prepare(command: Command, config: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let mut config = match config {
        Some(path) => load_config(path)?,
        None => RunConfig::minimal(command.default_experiment()),
    };
    if !command.accepts(config.experiment) {
        return Err(CliError::Usage(format!(
            "`{}` cannot run experiment \"{}\"",
            command.as_str(),
            config.experiment.as_str()
        )));
    }
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(out) = &overrides.out {
        config.out = Some(out.clone());
    }
    if let Some(scale) = overrides.scale {
        config.scale = scale;
    }
    if overrides.deterministic {
        config.workers = Some(1);
    }
    config.resolve()
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    experiment: &'static str,
    seed: u64,
    started_unix: u64,
    wall_clock_seconds: f64,
    rerun: String,
    config: &'a RunConfig,
    outputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    seconds_per_replication: BTreeMap<String, f64>,
}

/// Result of a completed run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    /// Output file names and their SHA-256.
    pub outputs: BTreeMap<String, String>,
}

struct Outputs {
    dir: PathBuf,
    hashes: BTreeMap<String, String>,
}

impl Outputs {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|source| CliError::Output { path, source })?;
        self.hashes.insert(name.to_string(), hex(&Sha256::digest(bytes)));
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn default_out(config: &RunConfig) -> PathBuf {
    PathBuf::from("runs").join(format!("{}-{}", config.experiment.as_str(), config.seed))
}

/// Runs `config` (already resolved) and writes every artifact.
pub fn execute(command: Command, config: &RunConfig) -> Result<RunOutcome, CliError> {
    let dir = config.out.clone().unwrap_or_else(|| default_out(config));
    std::fs::create_dir_all(&dir).map_err(|source| CliError::Output { path: dir.clone(), source })?;
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let start = Instant::now();
    let mut outputs = Outputs { dir: dir.clone(), hashes: BTreeMap::new() };
    let workers = config.workers.unwrap_or(0);
    let seconds = if config.parallel() && workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {workers} workers: {e}")))?;
        pool.install(|| dispatch(config, &mut outputs))?
    } else {
        dispatch(config, &mut outputs)?
    };
    let resolved = config.to_toml()?;
    outputs.write("config.resolved.toml", resolved.as_bytes())?;
    let manifest = Manifest {
        tool: "smc-bandits",
        version: env!("CARGO_PKG_VERSION"),
        command: command.as_str(),
        experiment: config.experiment.as_str(),
        seed: config.seed,
        started_unix,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        rerun: format!("smc-bandits {} --config manifest.json --deterministic --out <dir>", command.as_str()),
        config,
        outputs: outputs.hashes.clone(),
        seconds_per_replication: seconds,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(smc_bandits::BanditError::from)? + "\n";
    let path = dir.join("manifest.json");
    std::fs::write(&path, text).map_err(|source| CliError::Output { path, source })?;
    log::info!("wrote {} outputs to {}", outputs.hashes.len(), dir.display());
    Ok(RunOutcome { out_dir: dir, outputs: outputs.hashes })
}

fn dispatch(config: &RunConfig, outputs: &mut Outputs) -> Result<BTreeMap<String, f64>, CliError> {
    match config.experiment {
        Experiment::StaticSim | Experiment::DynamicSim => simulate(config, outputs),
        Experiment::Replay => replay(config, outputs).map(|_| BTreeMap::new()),
        Experiment::Bench => bench(config, outputs).map(|_| BTreeMap::new()),
    }
}

fn simulate(config: &RunConfig, outputs: &mut Outputs) -> Result<BTreeMap<String, f64>, CliError> {
    let sim = config.sim_config();
    log::info!(
        "{}: T={} R={} N={} over {} policies",
        config.experiment.as_str(),
        sim.horizon,
        sim.replications,
        sim.smc.particles,
        sim.policies.len()
    );
    let report = replicate(&sim)?;
    let mut csv = Vec::new();
    report.write_regret_csv(&mut csv)?;
    outputs.write("regret.csv", &csv)?;
    if config.experiment == Experiment::DynamicSim {
        let mut csv = Vec::new();
        report.write_tracking_csv(&mut csv)?;
        outputs.write("tracking.csv", &csv)?;
    }
    outputs.write("summary.json", (report.summary_json()? + "\n").as_bytes())?;
    for curve in &report.curves {
        log::info!("{:>16}: final regret {:.2} ± {:.2}", curve.name, curve.final_mean(), curve.final_stderr());
    }
    Ok(report.curves.iter().map(|c| (c.name.clone(), c.seconds.iter().sum::<f64>() / c.seconds.len() as f64)).collect())
}

#[derive(Serialize)]
struct LogSummary {
    rows: usize,
    arms: usize,
    dim: usize,
    logging_policy: String,
    arm_counts: Vec<usize>,
    /// Arms (from 1) whose frequency is far from uniform.
    nonuniform_arms: Vec<usize>,
}

#[derive(Serialize)]
struct ReplayPolicySummary {
    name: String,
    runs: usize,
    mean_average_reward: f64,
    stderr: f64,
    mean_retained: f64,
    /// Relative difference from the baseline's mean, in percent.
    percent_diff: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    welch: Option<WelchTest>,
}

#[derive(Serialize)]
struct ReplaySummary {
    log: LogSummary,
    baseline: String,
    policies: Vec<ReplayPolicySummary>,
}

struct ReplayRun {
    retained: usize,
    total_reward: u64,
    average: f64,
}

fn load_or_synthesize(config: &RunConfig, outputs: &mut Outputs) -> Result<ReplayLog, CliError> {
    let section = config.replay.clone().unwrap_or_default();
    if let Some(path) = &section.log {
        return ReplayLog::load(path).map_err(CliError::from);
    }
    let rows = section.synthetic_rows.expect("resolved");
    let mut instance = gen_static_instance(&mut stream_rng(config.seed, &[stream::INSTANCE]));
    let log = uniform_log(&mut instance, rows, &mut stream_rng(config.seed, &[stream::LOGGING]));
    let mut csv = Vec::new();
    log.to_csv(&mut csv)?;
    outputs.write("log.csv", &csv)?;
    let meta = serde_json::to_string_pretty(&log.meta).map_err(smc_bandits::BanditError::from)? + "\n";
    outputs.write("log.json", meta.as_bytes())?;
    Ok(log)
}

fn replay(config: &RunConfig, outputs: &mut Outputs) -> Result<(), CliError> {
    let log = load_or_synthesize(config, outputs)?;
    let runs = config.replay.as_ref().and_then(|r| r.runs).expect("resolved");
    let model = Arc::new(base_model(log.meta.arms, log.meta.dim, config.prior_variance.expect("resolved"), false)?);
    let defaults = config.smc_defaults();
    log::info!("replaying {} rows, {} runs for each of {} policies", log.len(), runs, config.policies.len());
    let one = |(p, m): (usize, usize)| -> smc_bandits::Result<ReplayRun> {
        let spec: &PolicySpec = &config.policies[p];
        let mut rng = stream_rng(config.seed, &[stream::REPLAY, p as u64, m as u64]);
        let mut policy = spec.build(&model, &defaults, &mut rng)?;
        let result = replay_evaluate(policy.as_mut(), &log, &mut rng)?;
        Ok(ReplayRun {
            retained: result.retained,
            total_reward: result.total_reward,
            average: average_reward(&result)?,
        })
    };
    let tasks: Vec<(usize, usize)> = (0..config.policies.len()).flat_map(|p| (0..runs).map(move |m| (p, m))).collect();
    let results: Vec<ReplayRun> = if config.parallel() {
        tasks.par_iter().map(|&t| one(t)).collect::<smc_bandits::Result<_>>()?
    } else {
        tasks.iter().map(|&t| one(t)).collect::<smc_bandits::Result<_>>()?
    };

    let mut csv = String::from("policy,run,retained,total_reward,average_reward\n");
    for (&(p, m), r) in tasks.iter().zip(&results) {
        csv += &format!("{},{},{},{},{}\n", config.policies[p].label(), m + 1, r.retained, r.total_reward, r.average);
    }
    outputs.write("replay.csv", csv.as_bytes())?;

    let per_policy: Vec<Vec<&ReplayRun>> = results.chunks(runs).map(|c| c.iter().collect()).collect();
    let averages: Vec<Vec<f64>> = per_policy.iter().map(|rs| rs.iter().map(|r| r.average).collect()).collect();
    let baseline_mean = mean_se(&averages[0]).0;
    let mut policies = Vec::new();
    for (p, spec) in config.policies.iter().enumerate() {
        let (mean, se) = mean_se(&averages[p]);
        let welch = if p > 0 && runs >= 2 { Some(welch_t_test(&averages[p], &averages[0])?) } else { None };
        policies.push(ReplayPolicySummary {
            name: spec.label(),
            runs,
            mean_average_reward: mean,
            stderr: se,
            mean_retained: per_policy[p].iter().map(|r| r.retained as f64).sum::<f64>() / runs as f64,
            percent_diff: 100.0 * (mean - baseline_mean) / baseline_mean,
            welch,
        });
        log::info!("{:>16}: average reward {mean:.5} ± {se:.5}", spec.label());
    }
    let summary = ReplaySummary {
        log: LogSummary {
            rows: log.len(),
            arms: log.meta.arms,
            dim: log.meta.dim,
            logging_policy: log.meta.logging_policy.clone(),
            arm_counts: log.arm_counts(),
            nonuniform_arms: log.nonuniform_arms().iter().map(|k| k + 1).collect(),
        },
        baseline: config.policies[0].label(),
        policies,
    };
    let text = serde_json::to_string_pretty(&summary).map_err(smc_bandits::BanditError::from)? + "\n";
    outputs.write("summary.json", text.as_bytes())
}

#[derive(Serialize)]
struct BenchRatio {
    #[serde(rename = "T")]
    horizon: u64,
    mcmc_over_smc: f64,
}

fn bench(config: &RunConfig, outputs: &mut Outputs) -> Result<(), CliError> {
    let bench = config.bench_config();
    log::info!("timing SMC against repeated MCMC at T = {:?}", bench.horizons);
    let rows = bench_smc_vs_mcmc(&bench)?;
    let mut csv = String::from("T,method,seconds\n");
    for row in &rows {
        csv += &format!("{},{},{}\n", row.horizon, row.method, row.seconds);
    }
    outputs.write("timing.csv", csv.as_bytes())?;
    let ratios: Vec<BenchRatio> = rows
        .chunks(2)
        .map(|pair| BenchRatio { horizon: pair[0].horizon, mcmc_over_smc: pair[1].seconds / pair[0].seconds })
        .collect();
    for r in &ratios {
        log::info!("T={}: MCMC/SMC time ratio {:.1}", r.horizon, r.mcmc_over_smc);
    }
    let text = serde_json::to_string_pretty(&ratios).map_err(smc_bandits::BanditError::from)? + "\n";
    outputs.write("summary.json", text.as_bytes())
}
