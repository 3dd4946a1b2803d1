use super::{cumulative_regret, gen_static_instance, run_episode, DynamicEnv, Environment, EpisodeTrace};
use super::{DYNAMIC_ARMS, STATIC_ARMS, STATIC_DIM};
use crate::error::{BanditError, Result};
use crate::model::{LinkFunction, ObservationModel, PriorSpec};
use crate::policies::{PolicySpec, SmcDefaults};
use crate::rng::{stream, stream_rng};
use crate::stats::mean_se;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Four-armed contextual probit study with a fresh instance per replication.
    Static,
    /// Two-armed sinusoidal restless study.
    Dynamic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub scenario: Scenario,
    pub horizon: u64,
    pub replications: usize,
    pub policies: Vec<PolicySpec>,
    pub smc: SmcDefaults,
    /// Variance of the independent normal prior shared by every policy.
    pub prior_variance: f64,
    pub seed: u64,
    pub track_posterior: bool,
    pub parallel: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 || self.replications < 1 || self.smc.particles < 1 {
            return Err(BanditError::Config("horizon, replications and particles must be positive".into()));
        }
        if self.policies.is_empty() {
            return Err(BanditError::Config("at least one policy is required".into()));
        }
        let mut labels: Vec<String> = self.policies.iter().map(PolicySpec::label).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(BanditError::Config("policy labels must be unique".into()));
        }
        if !(self.prior_variance > 0.0 && self.prior_variance.is_finite()) {
            return Err(BanditError::Config("prior variance must be positive".into()));
        }
        Ok(())
    }

    /// The static model every policy is built from.
    pub fn base_model(&self) -> Result<Arc<ObservationModel>> {
        let (arms, dim) = match self.scenario {
            Scenario::Static => (STATIC_ARMS, STATIC_DIM),
            Scenario::Dynamic => (DYNAMIC_ARMS, 1),
        };
        Ok(Arc::new(ObservationModel::new(
            arms,
            dim,
            LinkFunction::Probit,
            PriorSpec::independent(dim, 0.0, self.prior_variance)?,
        )?))
    }

    fn environment(&self, replication: usize) -> Box<dyn Environment> {
        match self.scenario {
            Scenario::Static => {
                let mut rng = stream_rng(self.seed, &[stream::INSTANCE, replication as u64]);
                Box::new(gen_static_instance(&mut rng))
            }
            Scenario::Dynamic => Box::new(DynamicEnv),
        }
    }
}

/// Posterior-tracking diagnostics of one episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingSummary {
    /// Time-averaged `|posterior mean reward − true reward|` of the optimal arm.
    pub optimal_error: f64,
    /// Same, averaged over the suboptimal arms.
    pub suboptimal_error: f64,
    /// Steps in which an arm was not pulled and no resampling happened.
    pub variance_steps: usize,
    /// Of those, steps across which the arm's coefficient variance did not
    /// decrease.
    pub variance_nondecreasing: usize,
}

/// Tracking diagnostics from a trace recorded with posteriors. `None` when
/// the policy exposes no coefficient posterior.
pub fn tracking_summary(trace: &EpisodeTrace) -> Option<TrackingSummary> {
    let steps = &trace.steps;
    let posts: Vec<_> = steps.iter().map(|s| s.posterior.as_ref()).collect::<Option<_>>()?;
    if steps.is_empty() || posts[0].iter().any(|p| p.coef_variance.is_empty()) {
        return None;
    }
    let arms = steps[0].probs.len();
    let mut optimal_error = 0.0;
    let mut suboptimal_error = 0.0;
    for (s, post) in steps.iter().zip(&posts) {
        optimal_error += (post[s.optimal].mean_reward - s.probs[s.optimal]).abs();
        if arms > 1 {
            let other: f64 =
                (0..arms).filter(|&k| k != s.optimal).map(|k| (post[k].mean_reward - s.probs[k]).abs()).sum();
            suboptimal_error += other / (arms - 1) as f64;
        }
    }
    let mut variance_steps = 0;
    let mut variance_nondecreasing = 0;
    for (i, s) in steps.iter().enumerate().skip(1) {
        if s.resampled != Some(false) {
            continue;
        }
        for k in (0..arms).filter(|&k| k != s.arm) {
            variance_steps += 1;
            let before = &posts[i - 1][k].coef_variance;
            let after = &posts[i][k].coef_variance;
            if after.iter().zip(before).all(|(a, b)| *a >= *b) {
                variance_nondecreasing += 1;
            }
        }
    }
    let n = steps.len() as f64;
    Some(TrackingSummary {
        optimal_error: optimal_error / n,
        suboptimal_error: suboptimal_error / n,
        variance_steps,
        variance_nondecreasing,
    })
}

/// Change in the average per-step slope of a cumulative curve across time
/// `at`: slope over `(at, at + window]` minus slope over `(at − window, at]`.
/// The curve holds values for `t = 1, 2, …`.
pub fn slope_increase(curve: &[f64], at: usize, window: usize) -> Option<f64> {
    if window == 0 || at < window || at + window > curve.len() {
        return None;
    }
    let value = |t: usize| if t == 0 { 0.0 } else { curve[t - 1] };
    let before = (value(at) - value(at - window)) / window as f64;
    let after = (value(at + window) - value(at)) / window as f64;
    Some(after - before)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolicyCurve {
    pub name: String,
    /// Mean cumulative regret at `t = 1..=T` across replications.
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Final cumulative regret of each replication.
    pub finals: Vec<f64>,
    /// Wall-clock seconds of each replication.
    pub seconds: Vec<f64>,
    pub tracking: Vec<TrackingSummary>,
}

impl PolicyCurve {
    pub fn final_mean(&self) -> f64 {
        *self.mean.last().expect("horizon is positive")
    }

    pub fn final_stderr(&self) -> f64 {
        *self.stderr.last().expect("horizon is positive")
    }
}

/// Cross-replication mean of one arm's posterior mean reward, next to the
/// truth.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrackingSeries {
    pub policy: String,
    pub arm: usize,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub truth: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicationReport {
    pub scenario: Scenario,
    pub horizon: u64,
    pub replications: usize,
    pub curves: Vec<PolicyCurve>,
    pub tracking: Vec<TrackingSeries>,
}

struct RunResult {
    cumulative: Vec<f64>,
    seconds: f64,
    tracking: Option<TrackingSummary>,
    /// Per arm, per step: posterior mean reward and truth.
    series: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

fn run_one(config: &SimConfig, model: &Arc<ObservationModel>, replication: usize, policy: usize) -> Result<RunResult> {
    let spec = &config.policies[policy];
    let mut policy_rng = stream_rng(config.seed, &[stream::POLICY, replication as u64, policy as u64]);
    let mut env_rng = stream_rng(config.seed, &[stream::ENVIRONMENT, replication as u64]);
    let mut env = config.environment(replication);
    let start = Instant::now();
    let mut agent = spec.build(model, &config.smc, &mut policy_rng)?;
    let trace = run_episode(
        agent.as_mut(),
        env.as_mut(),
        config.horizon,
        &mut env_rng,
        &mut policy_rng,
        config.track_posterior,
    )?;
    let seconds = start.elapsed().as_secs_f64();
    let tracking = if config.track_posterior { tracking_summary(&trace) } else { None };
    let series = if config.track_posterior && trace.steps.iter().all(|s| s.posterior.is_some()) {
        let arms = model.arms();
        let post = (0..arms)
            .map(|k| trace.steps.iter().map(|s| s.posterior.as_ref().unwrap()[k].mean_reward).collect())
            .collect();
        let truth = (0..arms).map(|k| trace.steps.iter().map(|s| s.probs[k]).collect()).collect();
        Some((post, truth))
    } else {
        None
    };
    Ok(RunResult { cumulative: cumulative_regret(&trace), seconds, tracking, series })
}

fn pointwise(rows: &[&Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let len = rows[0].len();
    let mut column = Vec::with_capacity(rows.len());
    (0..len)
        .map(|t| {
            column.clear();
            column.extend(rows.iter().map(|r| r[t]));
            mean_se(&column)
        })
        .unzip()
}

/// Runs every configured policy on `replications` independent environments.
/// Replication `r` draws its instance and environment stream from the
/// master seed, shared by all policies; each policy has its own stream.
pub fn replicate(config: &SimConfig) -> Result<ReplicationReport> {
    config.validate()?;
    let model = config.base_model()?;
    let tasks: Vec<(usize, usize)> =
        (0..config.replications).flat_map(|r| (0..config.policies.len()).map(move |p| (r, p))).collect();
    let results: Vec<RunResult> = if config.parallel {
        tasks.par_iter().map(|&(r, p)| run_one(config, &model, r, p)).collect::<Result<_>>()?
    } else {
        tasks.iter().map(|&(r, p)| run_one(config, &model, r, p)).collect::<Result<_>>()?
    };
    let np = config.policies.len();
    let mut curves = Vec::with_capacity(np);
    let mut tracking = Vec::new();
    for (p, spec) in config.policies.iter().enumerate() {
        let runs: Vec<&RunResult> = results.iter().skip(p).step_by(np).collect();
        let cumulative: Vec<&Vec<f64>> = runs.iter().map(|r| &r.cumulative).collect();
        let (mean, stderr) = pointwise(&cumulative);
        curves.push(PolicyCurve {
            name: spec.label(),
            mean,
            stderr,
            finals: runs.iter().map(|r| *r.cumulative.last().unwrap()).collect(),
            seconds: runs.iter().map(|r| r.seconds).collect(),
            tracking: runs.iter().filter_map(|r| r.tracking).collect(),
        });
        if runs.iter().all(|r| r.series.is_some()) {
            for k in 0..model.arms() {
                let post: Vec<&Vec<f64>> = runs.iter().map(|r| &r.series.as_ref().unwrap().0[k]).collect();
                let truth: Vec<&Vec<f64>> = runs.iter().map(|r| &r.series.as_ref().unwrap().1[k]).collect();
                let (mean, stderr) = pointwise(&post);
                tracking.push(TrackingSeries {
                    policy: spec.label(),
                    arm: k,
                    mean,
                    stderr,
                    truth: pointwise(&truth).0,
                });
            }
        }
    }
    Ok(ReplicationReport {
        scenario: config.scenario,
        horizon: config.horizon,
        replications: config.replications,
        curves,
        tracking,
    })
}

#[derive(Serialize)]
struct PolicySummary<'a> {
    name: &'a str,
    final_regret_mean: f64,
    final_regret_stderr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    slope_increase_at_first_switch: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tracking_wins: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    variance_nondecreasing_fraction: Option<f64>,
}

#[derive(Serialize)]
struct Summary<'a> {
    scenario: Scenario,
    horizon: u64,
    replications: usize,
    optimal_arm_switches: Vec<u64>,
    policies: Vec<PolicySummary<'a>>,
}

impl ReplicationReport {
    pub fn curve(&self, name: &str) -> Option<&PolicyCurve> {
        self.curves.iter().find(|c| c.name == name)
    }

    /// `t,policy,mean,stderr` rows of mean cumulative regret.
    pub fn write_regret_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "policy", "mean", "stderr"]).map_err(csv_error)?;
        for c in &self.curves {
            for (i, (m, s)) in c.mean.iter().zip(&c.stderr).enumerate() {
                w.write_record([(i + 1).to_string(), c.name.clone(), m.to_string(), s.to_string()])
                    .map_err(csv_error)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// `t,policy,mean,stderr` rows of posterior mean reward per arm, with the
    /// truth under the policy name `truth`. Arms are labelled from 1.
    pub fn write_tracking_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "policy", "mean", "stderr"]).map_err(csv_error)?;
        let mut truth_written = vec![false; self.tracking.iter().map(|s| s.arm + 1).max().unwrap_or(0)];
        for s in &self.tracking {
            for (i, (m, e)) in s.mean.iter().zip(&s.stderr).enumerate() {
                let label = format!("{}/arm{}", s.policy, s.arm + 1);
                w.write_record([(i + 1).to_string(), label, m.to_string(), e.to_string()]).map_err(csv_error)?;
            }
            if !truth_written[s.arm] {
                truth_written[s.arm] = true;
                for (i, v) in s.truth.iter().enumerate() {
                    let label = format!("truth/arm{}", s.arm + 1);
                    w.write_record([(i + 1).to_string(), label, v.to_string(), "0".into()]).map_err(csv_error)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        let switches = match self.scenario {
            Scenario::Dynamic => super::dynamic_crossings(self.horizon),
            Scenario::Static => Vec::new(),
        };
        let policies = self
            .curves
            .iter()
            .map(|c| PolicySummary {
                name: &c.name,
                final_regret_mean: c.final_mean(),
                final_regret_stderr: c.final_stderr(),
                slope_increase_at_first_switch: switches.first().and_then(|&at| {
                    let at = at as usize;
                    slope_increase(&c.mean, at, at)
                }),
                tracking_wins: (!c.tracking.is_empty())
                    .then(|| c.tracking.iter().filter(|s| s.optimal_error < s.suboptimal_error).count()),
                variance_nondecreasing_fraction: (!c.tracking.is_empty()).then(|| {
                    let steps: usize = c.tracking.iter().map(|s| s.variance_steps).sum();
                    let ok: usize = c.tracking.iter().map(|s| s.variance_nondecreasing).sum();
                    ok as f64 / steps.max(1) as f64
                }),
            })
            .collect();
        let summary = Summary {
            scenario: self.scenario,
            horizon: self.horizon,
            replications: self.replications,
            optimal_arm_switches: switches,
            policies,
        };
        Ok(serde_json::to_string_pretty(&summary)?)
    }
}

pub(crate) fn csv_error(e: csv::Error) -> BanditError {
    BanditError::Io(std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_increase_arithmetic() {
        let curve: Vec<f64> = (1..=10).map(|t| if t <= 4 { t as f64 } else { 4.0 + 3.0 * (t - 4) as f64 }).collect();
        assert_eq!(slope_increase(&curve, 4, 4), Some(2.0));
        assert_eq!(slope_increase(&curve, 4, 7), None);
    }
}
