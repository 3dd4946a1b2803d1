use rand::Rng;
use smc_bandits::model::InteractionRecord;
use smc_bandits::policies::{Policy, PolicySpec, SmcDefaults};
use smc_bandits::rng::{rng_from_seed, BanditRng};
use smc_bandits::sim::{
    cumulative_regret, gen_static_instance, replicate, run_episode, Environment, Scenario, SimConfig, StaticInstance,
    StepDraw,
};
use smc_bandits::stats::mean_se;
use smc_bandits::Result;

/// Wraps an environment and remembers the optimal arm of the last draw, so
/// an oracle can read it back.
struct Peek {
    inner: StaticInstance,
    optimal: std::sync::Arc<std::sync::atomic::AtomicUsize>,
}

impl Environment for Peek {
    fn arms(&self) -> usize {
        self.inner.arms()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn draw(&mut self, t: u64, rng: &mut BanditRng) -> StepDraw {
        let draw = self.inner.draw(t, rng);
        self.optimal.store(draw.optimal, std::sync::atomic::Ordering::SeqCst);
        draw
    }
}

struct Oracle {
    optimal: std::sync::Arc<std::sync::atomic::AtomicUsize>,
}

impl Policy for Oracle {
    fn name(&self) -> &str {
        "oracle"
    }

    fn arms(&self) -> usize {
        4
    }

    fn context_dim(&self) -> usize {
        3
    }

    fn select(&self, _context: &[f64], _rng: &mut BanditRng) -> Result<usize> {
        Ok(self.optimal.load(std::sync::atomic::Ordering::SeqCst))
    }

    fn update(&mut self, _record: &InteractionRecord, _rng: &mut BanditRng) -> Result<()> {
        Ok(())
    }

    fn state_digest(&self) -> String {
        String::new()
    }
}

#[test]
fn oracle_has_zero_regret() {
    let optimal = std::sync::Arc::new(std::sync::atomic::AtomicUsize::new(0));
    let mut env = Peek { inner: gen_static_instance(&mut rng_from_seed(1)), optimal: optimal.clone() };
    let mut oracle = Oracle { optimal };
    let trace = run_episode(&mut oracle, &mut env, 500, &mut rng_from_seed(2), &mut rng_from_seed(3), false).unwrap();
    assert_eq!(trace.len(), 500);
    assert!(cumulative_regret(&trace).iter().all(|&r| r == 0.0));
}

#[test]
fn random_policy_regret_matches_its_expectation() {
    let model = SimConfig {
        scenario: Scenario::Static,
        horizon: 1,
        replications: 1,
        policies: vec![PolicySpec::random()],
        smc: SmcDefaults::new(10),
        prior_variance: 10.0,
        seed: 0,
        track_posterior: false,
        parallel: false,
    }
    .base_model()
    .unwrap();
    let mut env = gen_static_instance(&mut rng_from_seed(4));
    let mut policy = PolicySpec::random().build(&model, &SmcDefaults::new(10), &mut rng_from_seed(5)).unwrap();
    let trace =
        run_episode(policy.as_mut(), &mut env, 20_000, &mut rng_from_seed(6), &mut rng_from_seed(7), false).unwrap();
    let expected: f64 = trace
        .steps
        .iter()
        .map(|s| s.probs.iter().map(|p| s.probs[s.optimal] - p).sum::<f64>() / s.probs.len() as f64)
        .sum();
    let regrets: Vec<f64> = trace.steps.iter().map(|s| s.regret).collect();
    let (_, se) = mean_se(&regrets);
    let total: f64 = regrets.iter().sum();
    let n = regrets.len() as f64;
    assert!((total - expected).abs() / n < 3.0 * se, "{total} vs {expected}");
}

#[test]
fn regret_curves_are_monotone_and_traces_complete() {
    let model = SimConfig {
        scenario: Scenario::Static,
        horizon: 1,
        replications: 1,
        policies: vec![PolicySpec::random()],
        smc: SmcDefaults::new(10),
        prior_variance: 10.0,
        seed: 0,
        track_posterior: false,
        parallel: false,
    }
    .base_model()
    .unwrap();
    for spec in [PolicySpec::smc_static(), PolicySpec::eps_greedy(0.1), PolicySpec::ucb(0.9)] {
        let mut env = gen_static_instance(&mut rng_from_seed(8));
        let mut policy = spec.build(&model, &SmcDefaults::new(100), &mut rng_from_seed(9)).unwrap();
        let trace =
            run_episode(policy.as_mut(), &mut env, 300, &mut rng_from_seed(10), &mut rng_from_seed(11), true).unwrap();
        assert_eq!(trace.len(), 300);
        for (i, s) in trace.steps.iter().enumerate() {
            assert_eq!(s.t, i as u64 + 1);
            assert!(s.regret >= 0.0 && s.arm < 4 && s.posterior.is_some());
        }
        let curve = cumulative_regret(&trace);
        assert!(curve.windows(2).all(|w| w[1] >= w[0]));
    }
}

#[test]
fn environment_stream_is_shared_across_policies() {
    let mut env_a = gen_static_instance(&mut rng_from_seed(1));
    let mut env_b = env_a.clone();
    let (mut ra, mut rb) = (rng_from_seed(2), rng_from_seed(2));
    for t in 1..=50 {
        let a = env_a.draw(t, &mut ra);
        let ua: f64 = ra.random();
        let b = env_b.draw(t, &mut rb);
        let ub: f64 = rb.random();
        assert_eq!(a, b);
        assert_eq!(ua, ub);
    }
}

fn config(replications: usize, parallel: bool) -> SimConfig {
    SimConfig {
        scenario: Scenario::Static,
        horizon: 200,
        replications,
        policies: vec![PolicySpec::smc_static(), PolicySpec::eps_greedy(0.1), PolicySpec::random()],
        smc: SmcDefaults::new(100),
        prior_variance: 10.0,
        seed: 99,
        track_posterior: false,
        parallel,
    }
}

fn regret_csv(config: &SimConfig) -> Vec<u8> {
    let mut out = Vec::new();
    replicate(config).unwrap().write_regret_csv(&mut out).unwrap();
    out
}

#[test]
fn single_replication_report_is_the_trace() {
    let report = replicate(&config(1, false)).unwrap();
    for curve in &report.curves {
        assert_eq!(curve.finals.len(), 1);
        assert_eq!(curve.final_mean(), curve.finals[0]);
        assert!(curve.stderr.iter().all(|&s| s == 0.0));
    }
}

#[test]
fn reports_are_reproducible_and_thread_independent() {
    let sequential = regret_csv(&config(4, false));
    assert_eq!(sequential, regret_csv(&config(4, false)));
    assert_eq!(sequential, regret_csv(&config(4, true)));
    let mut other = config(4, false);
    other.seed = 100;
    assert_ne!(sequential, regret_csv(&other));
}

#[test]
fn standard_errors_shrink_with_replications() {
    let mut small = config(20, true);
    small.policies = vec![PolicySpec::random()];
    let mut large = small.clone();
    large.replications = 80;
    let se = |c: &SimConfig| {
        let report = replicate(c).unwrap();
        let curve = &report.curves[0];
        curve.stderr.iter().sum::<f64>() / curve.stderr.len() as f64
    };
    let ratio = se(&large) / se(&small);
    assert!((ratio - 0.5).abs() < 0.15, "ratio {ratio}");
}

#[test]
fn dynamic_report_tracks_posteriors() {
    let cfg = SimConfig {
        scenario: Scenario::Dynamic,
        horizon: 400,
        replications: 2,
        policies: vec![PolicySpec::smc_dynamic(1.0), PolicySpec::ucb(0.9)],
        smc: SmcDefaults::new(100),
        prior_variance: 1.0,
        seed: 5,
        track_posterior: true,
        parallel: false,
    };
    let report = replicate(&cfg).unwrap();
    assert_eq!(report.curve("smc-dynamic").unwrap().tracking.len(), 2);
    let summary: serde_json::Value = serde_json::from_str(&report.summary_json().unwrap()).unwrap();
    assert_eq!(summary["optimal_arm_switches"], serde_json::json!([315]));
    let mut csv = Vec::new();
    report.write_tracking_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.contains("smc-dynamic/arm2") && text.contains("truth/arm1"));
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = config(1, false);
    cfg.policies.push(PolicySpec::random());
    assert!(replicate(&cfg).is_err());
    let mut cfg = config(1, false);
    cfg.horizon = 0;
    assert!(replicate(&cfg).is_err());
}
