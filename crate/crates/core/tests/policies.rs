use rand::Rng;
use smc_bandits::model::{InteractionRecord, LinkFunction, ObservationModel, PriorSpec};
use smc_bandits::policies::{BetaCounts, BetaThompson, Policy, PolicySpec, SmcDefaults, SmcStatic};
use smc_bandits::rng::{rng_from_seed, stream_rng};
use smc_bandits::sim::{gen_static_instance, Environment};
use smc_bandits::smc::{DegeneracyMode, SmcConfig};
use smc_bandits::stats::mean_se;
use std::sync::Arc;

/// Rewards for every (step, arm), fixed in advance so both policies face the
/// same outcomes whatever they pull.
fn reward_stream(seed: u64, steps: usize, probs: &[f64]) -> Vec<Vec<bool>> {
    let mut rng = rng_from_seed(seed);
    (0..steps).map(|_| probs.iter().map(|&p| rng.random::<f64>() < p).collect()).collect()
}

fn first_arm_frequency(policy: &mut dyn Policy, rewards: &[Vec<bool>], seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let mut first = 0usize;
    for (i, row) in rewards.iter().enumerate() {
        let arm = policy.select(&[1.0], &mut rng).unwrap();
        first += usize::from(arm == 0);
        policy.update(&InteractionRecord::new(vec![1.0], arm, row[arm], i as u64 + 1), &mut rng).unwrap();
    }
    first as f64 / rewards.len() as f64
}

// A N(0, 1) prior on a probit intercept puts a uniform prior on the success
// probability, so particle Thompson sampling targets the Beta(1, 1) model.
#[test]
fn beta_thompson_and_particle_thompson_agree_in_distribution() {
    let steps = 2000;
    let n = 300;
    let model = Arc::new(ObservationModel::intercept_only(2, 0.0, 1.0).unwrap());
    let mut beta_freqs = Vec::new();
    let mut smc_freqs = Vec::new();
    for seed in 0..50u64 {
        let rewards = reward_stream(1000 + seed, steps, &[0.45, 0.55]);
        let mut beta = BetaThompson::new("beta", 2, 1, BetaCounts::new(1.0, 1.0).unwrap()).unwrap();
        beta_freqs.push(first_arm_frequency(&mut beta, &rewards, seed));
        let mut config = SmcConfig::for_particles(n);
        config.degeneracy = DegeneracyMode::Lenient;
        let mut smc = SmcStatic::new("smc", model.clone(), n, config, &mut rng_from_seed(5000 + seed)).unwrap();
        smc_freqs.push(first_arm_frequency(&mut smc, &rewards, 9000 + seed));
    }
    let (mb, sb) = mean_se(&beta_freqs);
    let (ms, ss) = mean_se(&smc_freqs);
    let pooled = (sb * sb + ss * ss).sqrt();
    assert!((mb - ms).abs() < 3.0 * pooled, "beta {mb:.4}±{sb:.4} smc {ms:.4}±{ss:.4}");
}

fn static_model() -> Arc<ObservationModel> {
    Arc::new(ObservationModel::new(4, 3, LinkFunction::Probit, PriorSpec::independent(3, 0.0, 10.0).unwrap()).unwrap())
}

fn selections(spec: &PolicySpec, seed: u64, steps: u64) -> (Vec<usize>, String) {
    let model = static_model();
    let mut policy_rng = stream_rng(seed, &[2]);
    let mut env_rng = stream_rng(seed, &[1]);
    let mut env = gen_static_instance(&mut stream_rng(seed, &[3]));
    let mut policy = spec.build(&model, &SmcDefaults::new(100), &mut policy_rng).unwrap();
    let mut arms = Vec::new();
    for t in 1..=steps {
        let draw = env.draw(t, &mut env_rng);
        let u: f64 = env_rng.random();
        let arm = policy.select(&draw.context, &mut policy_rng).unwrap();
        policy.update(&InteractionRecord::new(draw.context, arm, u < draw.probs[arm], t), &mut policy_rng).unwrap();
        arms.push(arm);
    }
    (arms, policy.state_digest())
}

#[test]
fn identical_seeds_give_identical_runs() {
    for spec in [
        PolicySpec::smc_static(),
        PolicySpec::beta_ts(),
        PolicySpec::eps_greedy(0.1),
        PolicySpec::ucb(0.95),
        PolicySpec::random(),
    ] {
        let a = selections(&spec, 11, 150);
        let b = selections(&spec, 11, 150);
        assert_eq!(a, b, "{}", spec.label());
        let c = selections(&spec, 12, 150);
        assert_ne!(a.0, c.0, "{}", spec.label());
    }
}

#[test]
fn eps_greedy_at_one_is_uniform() {
    let model = static_model();
    let mut rng = rng_from_seed(4);
    let policy = PolicySpec::eps_greedy(1.0).build(&model, &SmcDefaults::new(10), &mut rng).unwrap();
    let calls = 40_000;
    let mut counts = [0usize; 4];
    for _ in 0..calls {
        counts[policy.select(&[1.0, 0.3, -0.2], &mut rng).unwrap()] += 1;
    }
    let se = (0.25 * 0.75 / calls as f64).sqrt();
    assert!(counts.iter().all(|&c| (c as f64 / calls as f64 - 0.25).abs() < 3.0 * se), "{counts:?}");
}

#[test]
fn beta_thompson_update_touches_one_arm() {
    let mut policy = BetaThompson::new("beta", 3, 1, BetaCounts::new(1.0, 1.0).unwrap()).unwrap();
    let before = policy.state_digest();
    let mut rng = rng_from_seed(1);
    let _ = policy.select(&[1.0], &mut rng).unwrap();
    assert_eq!(before, policy.state_digest());
    policy.update(&InteractionRecord::new(vec![1.0], 1, true, 1), &mut rng).unwrap();
    assert_eq!(policy.counts()[1], BetaCounts::new(2.0, 1.0).unwrap());
    assert_eq!(policy.counts()[0], BetaCounts::new(1.0, 1.0).unwrap());
    assert_eq!(policy.counts()[2], BetaCounts::new(1.0, 1.0).unwrap());
}
