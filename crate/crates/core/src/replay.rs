//! Offline evaluation of a policy against uniformly logged bandit data.
//!
//! A logged row is kept only when the policy, given the rows kept so far,
//! picks the logged arm. Under uniform logging each row survives with
//! probability `1/K`, and the kept rows are distributed as an online run.
//!
//! Log files are CSV with header `t,arm,reward,x0,…,x{d-1}` and 1-based
//! arms, plus a JSON sidecar (`<name>.json`) declaring `arms`, `dim` and the
//! logging policy.

use crate::error::{BanditError, Result};
use crate::model::InteractionRecord;
use crate::policies::Policy;
use crate::rng::{stream, stream_rng, BanditRng};
use crate::sim::Environment;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

pub const UNIFORM_LOGGING: &str = "uniform-random";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogMetadata {
    pub arms: usize,
    pub dim: usize,
    pub logging_policy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayLog {
    pub meta: LogMetadata,
    /// Records with 0-based arms; `time_index` holds the logged `t`.
    pub records: Vec<InteractionRecord>,
}

/// Sidecar path for a log file: the same path with a `.json` extension.
pub fn sidecar_path(log: &Path) -> PathBuf {
    log.with_extension("json")
}

fn parse_err(line: u64, message: impl Into<String>) -> BanditError {
    BanditError::Parse { line, message: message.into() }
}

impl ReplayLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn arm_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.meta.arms];
        for r in &self.records {
            counts[r.arm] += 1;
        }
        counts
    }

    /// Arms whose logged frequency is more than five binomial standard
    /// errors from `1/K`.
    pub fn nonuniform_arms(&self) -> Vec<usize> {
        let n = self.len() as f64;
        let p = 1.0 / self.meta.arms as f64;
        let se = (n * p * (1.0 - p)).sqrt();
        self.arm_counts()
            .iter()
            .enumerate()
            .filter(|(_, &c)| (c as f64 - n * p).abs() > 5.0 * se)
            .map(|(k, _)| k)
            .collect()
    }

    /// Parses CSV text against `meta`. Line numbers in errors count the
    /// header as line 1.
    pub fn from_csv<R: Read>(reader: R, meta: LogMetadata) -> Result<Self> {
        if meta.arms < 1 || meta.dim < 1 {
            return Err(BanditError::Config("log metadata needs arms ≥ 1 and dim ≥ 1".into()));
        }
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let expected: Vec<String> = ["t", "arm", "reward"]
            .iter()
            .map(|s| s.to_string())
            .chain((0..meta.dim).map(|j| format!("x{j}")))
            .collect();
        let header: Vec<String> =
            rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.iter().map(String::from).collect();
        if header != expected {
            return Err(parse_err(1, format!("expected header {}, found {}", expected.join(","), header.join(","))));
        }
        let mut records = Vec::new();
        let mut last_t = 0u64;
        for (i, row) in rdr.records().enumerate() {
            let line = i as u64 + 2;
            let row = row.map_err(|e| parse_err(line, e.to_string()))?;
            if row.len() != expected.len() {
                return Err(parse_err(line, format!("expected {} fields, found {}", expected.len(), row.len())));
            }
            let t: u64 = row[0].parse().map_err(|_| parse_err(line, format!("bad t '{}'", &row[0])))?;
            let arm: usize = row[1].parse().map_err(|_| parse_err(line, format!("bad arm '{}'", &row[1])))?;
            let reward = match &row[2] {
                "0" => false,
                "1" => true,
                other => return Err(parse_err(line, format!("reward must be 0 or 1, found '{other}'"))),
            };
            let context = (3..row.len())
                .map(|j| {
                    row[j]
                        .parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| parse_err(line, format!("bad feature '{}'", &row[j])))
                })
                .collect::<Result<Vec<_>>>()?;
            if t == 0 || t <= last_t {
                return Err(BanditError::Validation {
                    line,
                    message: format!("t must be positive and strictly increasing, found {t} after {last_t}"),
                });
            }
            if arm < 1 || arm > meta.arms {
                return Err(BanditError::Validation { line, message: format!("arm {arm} outside 1..={}", meta.arms) });
            }
            last_t = t;
            records.push(InteractionRecord::new(context, arm - 1, reward, t));
        }
        let log = Self { meta, records };
        let off = log.nonuniform_arms();
        if !off.is_empty() {
            log::warn!(
                "logged arm frequencies deviate from uniform by more than 5 standard errors for arms {:?}; replay estimates may be biased",
                off.iter().map(|k| k + 1).collect::<Vec<_>>()
            );
        }
        Ok(log)
    }

    pub fn to_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = ["t", "arm", "reward"]
            .iter()
            .map(|s| s.to_string())
            .chain((0..self.meta.dim).map(|j| format!("x{j}")))
            .collect();
        w.write_record(&header).map_err(crate::sim::csv_error)?;
        for r in &self.records {
            let mut row = vec![r.time_index.to_string(), (r.arm + 1).to_string(), u8::from(r.reward).to_string()];
            row.extend(r.context.iter().map(f64::to_string));
            w.write_record(&row).map_err(crate::sim::csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `path` and its sidecar.
    pub fn load(path: &Path) -> Result<Self> {
        let meta: LogMetadata = serde_json::from_reader(File::open(sidecar_path(path))?)?;
        Self::from_csv(File::open(path)?, meta)
    }

    /// Writes `path` and its sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_csv(File::create(path)?)?;
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&self.meta)? + "\n")?;
        Ok(())
    }
}

/// Synthetic log of `rows` uniformly logged interactions with `env`.
pub fn uniform_log(env: &mut dyn Environment, rows: u64, rng: &mut BanditRng) -> ReplayLog {
    let arms = env.arms();
    let records = (1..=rows)
        .map(|t| {
            let draw = env.draw(t, rng);
            let arm = rng.random_range(0..arms);
            let u: f64 = rng.random();
            InteractionRecord::new(draw.context, arm, u < draw.probs[arm], t)
        })
        .collect();
    ReplayLog {
        meta: LogMetadata { arms, dim: env.dim(), logging_policy: UNIFORM_LOGGING.into(), description: None },
        records,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplayResult {
    pub total_reward: u64,
    pub retained: usize,
    pub history: Vec<InteractionRecord>,
    /// Average reward after each retained row.
    pub running_average: Vec<f64>,
}

/// Streams the log through the policy, keeping rows where its choice
/// matches the logged arm. Skipped rows never touch the policy state.
pub fn replay_evaluate(policy: &mut dyn Policy, log: &ReplayLog, rng: &mut BanditRng) -> Result<ReplayResult> {
    if policy.arms() != log.meta.arms || policy.context_dim() != log.meta.dim {
        return Err(BanditError::Config(format!(
            "policy '{}' expects {} arms × {} features, log has {} × {}",
            policy.name(),
            policy.arms(),
            policy.context_dim(),
            log.meta.arms,
            log.meta.dim
        )));
    }
    let mut total_reward = 0u64;
    let mut history = Vec::new();
    let mut running_average = Vec::new();
    for record in &log.records {
        if policy.select(&record.context, rng)? != record.arm {
            continue;
        }
        policy.update(record, rng)?;
        total_reward += u64::from(record.reward);
        history.push(record.clone());
        running_average.push(total_reward as f64 / history.len() as f64);
    }
    Ok(ReplayResult { total_reward, retained: history.len(), history, running_average })
}

/// `R_B / retained`.
pub fn average_reward(result: &ReplayResult) -> Result<f64> {
    if result.retained == 0 {
        return Err(BanditError::Undefined("average reward of a replay that retained no rows".into()));
    }
    Ok(result.total_reward as f64 / result.retained as f64)
}

/// `runs` independent replays, each with a fresh policy from `factory` and
/// its own stream split from `seed`. Returns each run's average reward.
pub fn replay_repeated<F>(factory: F, log: &ReplayLog, runs: usize, seed: u64, parallel: bool) -> Result<Vec<f64>>
where
    F: Fn(&mut BanditRng) -> Result<Box<dyn Policy>> + Sync,
{
    if runs < 1 {
        return Err(BanditError::InvalidInput("at least one replay run is required".into()));
    }
    let one = |i: usize| -> Result<f64> {
        let mut rng = stream_rng(seed, &[stream::REPLAY, i as u64]);
        let mut policy = factory(&mut rng)?;
        average_reward(&replay_evaluate(policy.as_mut(), log, &mut rng)?)
    };
    if parallel {
        (0..runs).into_par_iter().map(one).collect()
    } else {
        (0..runs).map(one).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
    /// Both samples have zero variance; `t` and `p` are limits.
    pub degenerate: bool,
}

/// Welch's unequal-variance two-sample t-test.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(BanditError::InvalidInput("each sample needs at least two values".into()));
    }
    let (ma, va) = crate::stats::mean_var(a);
    let (mb, vb) = crate::stats::mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        let diff = ma - mb;
        let (t, p) = if diff == 0.0 { (0.0, 1.0) } else { (diff.signum() * f64::INFINITY, 0.0) };
        if diff != 0.0 {
            log::warn!("Welch test on two constant samples with different means");
        }
        return Ok(WelchTest { t, df: na + nb - 2.0, p, degenerate: true });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| BanditError::Numerical(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(WelchTest { t, df, p, degenerate: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn welch_matches_reference() {
        // Reference: scipy.stats.ttest_ind(a, b, equal_var=False).
        let w = welch_t_test(&[0.10, 0.12, 0.11, 0.13], &[0.09, 0.08, 0.10, 0.09]).unwrap();
        assert!((w.t - 3.273_268_353_539_886_5).abs() < 1e-6);
        assert!((w.p - 0.021_679_307_749_166_03).abs() < 1e-6);
        assert!((w.df - 5.068_965_517_241_38).abs() < 1e-9);
    }

    #[test]
    fn welch_degenerate_cases() {
        let same = welch_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((same.t, same.p), (0.0, 1.0));
        let flat = welch_t_test(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!((flat.t, flat.p, flat.degenerate), (0.0, 1.0, true));
        let apart = welch_t_test(&[2.0, 2.0], &[1.0, 1.0]).unwrap();
        assert_eq!(apart.p, 0.0);
        assert!(apart.degenerate && apart.t == f64::INFINITY);
        assert!(welch_t_test(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn average_reward_examples() {
        let result = |total, retained| ReplayResult {
            total_reward: total,
            retained,
            history: Vec::new(),
            running_average: Vec::new(),
        };
        assert_eq!(average_reward(&result(5, 5)).unwrap(), 1.0);
        assert_eq!(average_reward(&result(2, 250)).unwrap(), 0.008);
        assert!(matches!(average_reward(&result(0, 0)), Err(BanditError::Undefined(_))));
    }

    #[test]
    fn uniform_log_has_uniform_arms() {
        let mut env = crate::sim::DynamicEnv;
        let log = uniform_log(&mut env, 4000, &mut rng_from_seed(1));
        assert_eq!(log.len(), 4000);
        assert!(log.nonuniform_arms().is_empty());
    }
}
