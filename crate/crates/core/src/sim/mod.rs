//! Simulation studies: the static contextual comparison, the sinusoidal
//! restless study, replication with common random numbers, and the
//! SMC-versus-repeated-MCMC timing benchmark.

mod bench;
mod replicate;

pub use bench::{bench_smc_vs_mcmc, BenchConfig, RepeatedMcmc, TimingRow};
pub(crate) use replicate::csv_error;
pub use replicate::{
    replicate, slope_increase, tracking_summary, PolicyCurve, ReplicationReport, Scenario, SimConfig, TrackingSeries,
    TrackingSummary,
};

use crate::error::{BanditError, Result};
use crate::model::{clamp_probability, InteractionRecord};
use crate::normal;
use crate::policies::{ArmPosterior, Policy};
use crate::rng::BanditRng;
use crate::stats::argmax_random_tie;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub const STATIC_ARMS: usize = 4;
pub const STATIC_DIM: usize = 3;
pub const DYNAMIC_ARMS: usize = 2;

/// One draw from an environment: the context and every arm's true success
/// probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDraw {
    pub context: Vec<f64>,
    pub probs: Vec<f64>,
    pub optimal: usize,
}

pub trait Environment: Send {
    fn arms(&self) -> usize;

    fn dim(&self) -> usize;

    /// Context and true probabilities for interaction `t` (1-based).
    fn draw(&mut self, t: u64, rng: &mut BanditRng) -> StepDraw;
}

/// True coefficients of the static contextual study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticInstance {
    pub beta: Vec<[f64; STATIC_DIM]>,
}

/// `β_k0 ~ U(−1, 1)`, `β_k1 ~ N(0, 1)`, `β_k2 = 1` for each of the four arms.
pub fn gen_static_instance<R: Rng + ?Sized>(rng: &mut R) -> StaticInstance {
    let beta = (0..STATIC_ARMS)
        .map(|_| {
            let b0 = rng.random_range(-1.0..1.0);
            let b1: f64 = StandardNormal.sample(rng);
            [b0, b1, 1.0]
        })
        .collect();
    StaticInstance { beta }
}

/// Context `(1, X1, X2)` with standard normal features and the probit
/// success probability of every arm. Ties for the optimal arm are broken
/// uniformly.
pub fn gen_static_step<R: Rng + ?Sized>(instance: &StaticInstance, rng: &mut R) -> StepDraw {
    let x1: f64 = StandardNormal.sample(rng);
    let x2: f64 = StandardNormal.sample(rng);
    let context = vec![1.0, x1, x2];
    static_draw(instance, context, rng)
}

fn static_draw<R: Rng + ?Sized>(instance: &StaticInstance, context: Vec<f64>, rng: &mut R) -> StepDraw {
    let probs: Vec<f64> =
        instance.beta.iter().map(|b| normal::cdf(b.iter().zip(&context).map(|(a, x)| a * x).sum())).collect();
    let optimal = argmax_random_tie(&probs, rng);
    StepDraw { context, probs, optimal }
}

impl Environment for StaticInstance {
    fn arms(&self) -> usize {
        self.beta.len()
    }

    fn dim(&self) -> usize {
        STATIC_DIM
    }

    fn draw(&mut self, _t: u64, rng: &mut BanditRng) -> StepDraw {
        gen_static_step(self, rng)
    }
}

fn sinusoid_coefficient(sine: f64) -> f64 {
    normal::quantile(clamp_probability(0.5 * (sine + 1.0)))
}

/// `(β_0t, β_1t)` with `β_0t = Φ⁻¹(½[sin(t/100) + 1])` and the second arm
/// shifted by π. The shift is applied as `sin(x + π) = −sin(x)`.
pub fn gen_dynamic_truth(t: u64) -> (f64, f64) {
    let s = (t as f64 / 100.0).sin();
    (sinusoid_coefficient(s), sinusoid_coefficient(-s))
}

/// Times in `1..=horizon` at which the optimal arm of the sinusoidal study
/// switches: the first integer at or after each positive root of
/// `sin(t/100)`.
pub fn dynamic_crossings(horizon: u64) -> Vec<u64> {
    (1..).map(|m| (100.0 * std::f64::consts::PI * m as f64).ceil() as u64).take_while(|&t| t <= horizon).collect()
}

/// The two-armed sinusoidal environment with intercept-only contexts.
#[derive(Clone, Copy, Debug, Default)]
pub struct DynamicEnv;

impl Environment for DynamicEnv {
    fn arms(&self) -> usize {
        DYNAMIC_ARMS
    }

    fn dim(&self) -> usize {
        1
    }

    fn draw(&mut self, t: u64, rng: &mut BanditRng) -> StepDraw {
        let (b0, b1) = gen_dynamic_truth(t);
        let probs = vec![normal::cdf(b0), normal::cdf(b1)];
        let optimal = argmax_random_tie(&probs, rng);
        StepDraw { context: vec![1.0], probs, optimal }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceStep {
    pub t: u64,
    pub context: Vec<f64>,
    pub arm: usize,
    pub reward: bool,
    pub probs: Vec<f64>,
    pub optimal: usize,
    /// `p_opt − p_arm`.
    pub regret: f64,
    /// Policy posterior after this step's update, when recorded.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub posterior: Option<Vec<ArmPosterior>>,
    /// Whether this step's update resampled.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resampled: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EpisodeTrace {
    pub steps: Vec<TraceStep>,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Runs `policy` for `horizon` interactions. The environment stream draws
/// each context, then one uniform that decides the reward of whichever arm
/// is pulled, so policies run on the same stream face identical outcomes.
pub fn run_episode(
    policy: &mut dyn Policy,
    env: &mut dyn Environment,
    horizon: u64,
    env_rng: &mut BanditRng,
    policy_rng: &mut BanditRng,
    record_posterior: bool,
) -> Result<EpisodeTrace> {
    if horizon < 1 {
        return Err(BanditError::InvalidInput("horizon must be at least 1".into()));
    }
    if policy.arms() != env.arms() || policy.context_dim() != env.dim() {
        return Err(BanditError::Config(format!(
            "policy '{}' expects {} arms × {} features, environment has {} × {}",
            policy.name(),
            policy.arms(),
            policy.context_dim(),
            env.arms(),
            env.dim()
        )));
    }
    let mut steps = Vec::with_capacity(horizon as usize);
    for t in 1..=horizon {
        let draw = env.draw(t, env_rng);
        let u: f64 = env_rng.random();
        let arm = policy.select(&draw.context, policy_rng)?;
        let reward = u < draw.probs[arm];
        policy.update(&InteractionRecord::new(draw.context.clone(), arm, reward, t), policy_rng)?;
        let posterior = if record_posterior { policy.arm_posteriors(&draw.context) } else { None };
        let regret = (draw.probs[draw.optimal] - draw.probs[arm]).max(0.0);
        steps.push(TraceStep {
            t,
            context: draw.context,
            arm,
            reward,
            probs: draw.probs,
            optimal: draw.optimal,
            regret,
            posterior,
            resampled: policy.last_resampled(),
        });
    }
    Ok(EpisodeTrace { steps })
}

/// Prefix sums of the per-step expected regret.
pub fn cumulative_regret(trace: &EpisodeTrace) -> Vec<f64> {
    trace
        .steps
        .iter()
        .scan(0.0, |acc, s| {
            *acc += s.regret;
            Some(*acc)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn static_instance_shape() {
        let mut rng = rng_from_seed(1);
        let mut slopes = Vec::new();
        for _ in 0..10_000 {
            let inst = gen_static_instance(&mut rng);
            assert_eq!(inst.beta.len(), 4);
            for b in &inst.beta {
                assert_eq!(b[2], 1.0);
                assert!((-1.0..=1.0).contains(&b[0]));
                slopes.push(b[1]);
            }
        }
        let (_, var) = crate::stats::mean_var(&slopes);
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn static_step_examples() {
        let mut rng = rng_from_seed(2);
        let inst = StaticInstance { beta: vec![[0.5, -1.0, 1.0]] };
        let draw = static_draw(&inst, vec![1.0, 0.2, -0.3], &mut rng);
        assert!((draw.probs[0] - 0.5).abs() < 1e-15);

        let same = StaticInstance { beta: vec![[0.0, 0.0, 1.0]; 4] };
        let mut counts = [0usize; 4];
        for _ in 0..4000 {
            let draw = static_draw(&same, vec![1.0, 0.7, 0.0], &mut rng);
            assert!(draw.probs.iter().all(|&p| p == 0.5));
            counts[draw.optimal] += 1;
        }
        assert!(counts.iter().all(|&c| c > 850), "{counts:?}");
    }

    #[test]
    fn dynamic_truth_examples() {
        assert_eq!(gen_dynamic_truth(0), (0.0, 0.0));
        for t in [1, 17, 157, 314, 315, 500, 1999] {
            let (a, b) = gen_dynamic_truth(t);
            assert!((normal::cdf(a) + normal::cdf(b) - 1.0).abs() < 1e-12);
        }
        assert_eq!(dynamic_crossings(2000), vec![315, 629, 943, 1257, 1571, 1885]);
        let (a, b) = gen_dynamic_truth(314);
        assert!(a > b);
        let (a, b) = gen_dynamic_truth(315);
        assert!(a < b);
    }

    #[test]
    fn cumulative_regret_prefix_sums() {
        let step = |regret| TraceStep {
            t: 1,
            context: vec![1.0],
            arm: 0,
            reward: false,
            probs: vec![0.5],
            optimal: 0,
            regret,
            posterior: None,
            resampled: None,
        };
        let trace = EpisodeTrace { steps: vec![step(0.1), step(0.3)] };
        let c = cumulative_regret(&trace);
        assert!((c[0] - 0.1).abs() < 1e-15 && (c[1] - 0.4).abs() < 1e-15);
    }
}
