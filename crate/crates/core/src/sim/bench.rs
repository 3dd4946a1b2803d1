use super::{gen_static_instance, Environment, STATIC_ARMS, STATIC_DIM};
use crate::error::{BanditError, Result};
use crate::model::{InteractionRecord, LinkFunction, ObservationModel, ParamVector, PriorSpec};
use crate::policies::{Policy, SmcStatic};
use crate::rng::{stream, stream_rng, BanditRng};
use crate::smc::{check_gibbs_model, GibbsCache, History, SmcConfig};
use crate::stats::argmax_random_tie;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::{Duration, Instant};

/// Thompson sampling from a probit Gibbs chain that is restarted from the
/// prior mean at every selection, run for `burn_in + samples` sweeps over
/// the full history.
#[derive(Clone, Debug, Serialize)]
pub struct RepeatedMcmc {
    name: String,
    model: Arc<ObservationModel>,
    history: History,
    samples: usize,
    burn_in: usize,
}

impl RepeatedMcmc {
    pub fn new(
        name: impl Into<String>,
        model: Arc<ObservationModel>,
        samples: usize,
        burn_in_fraction: f64,
    ) -> Result<Self> {
        check_gibbs_model(&model)?;
        if model.is_dynamic() || samples < 1 || !(0.0..1.0).contains(&burn_in_fraction) {
            return Err(BanditError::Config(
                "repeated MCMC needs a static model, samples ≥ 1 and a burn-in fraction in [0, 1)".into(),
            ));
        }
        let burn_in = (samples as f64 * burn_in_fraction).ceil() as usize;
        Ok(Self { name: name.into(), history: History::new(model.arms()), model, samples, burn_in })
    }

    fn prior_mean(&self) -> ParamVector {
        let PriorSpec::IndependentNormal { mean, .. } = self.model.prior() else {
            unreachable!("checked at construction")
        };
        ParamVector::from_rows(&vec![mean.clone(); self.model.arms()]).expect("non-empty")
    }
}

impl Policy for RepeatedMcmc {
    fn name(&self) -> &str {
        &self.name
    }

    fn arms(&self) -> usize {
        self.model.arms()
    }

    fn context_dim(&self) -> usize {
        self.model.dim()
    }

    fn select(&self, context: &[f64], rng: &mut BanditRng) -> Result<usize> {
        self.model.check_context(context)?;
        let cache = GibbsCache::new(&self.model, &self.history)?;
        let pick = rng.random_range(0..self.samples);
        let mut state = self.prior_mean();
        let mut chosen = state.clone();
        for i in 0..self.burn_in + self.samples {
            cache.sweep(&mut state, rng);
            if i == self.burn_in + pick {
                chosen = state.clone();
            }
        }
        let eta: Vec<f64> =
            (0..self.model.arms()).map(|k| self.model.linear_predictor(&chosen, k, context)).collect::<Result<_>>()?;
        Ok(argmax_random_tie(&eta, rng))
    }

    fn update(&mut self, record: &InteractionRecord, _rng: &mut BanditRng) -> Result<()> {
        self.model.check_record(record)?;
        self.history.push(record.clone())
    }

    fn state_digest(&self) -> String {
        crate::policies::digest(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub horizons: Vec<u64>,
    /// Particles for SMC and retained draws per selection for MCMC.
    pub samples: usize,
    pub burn_in_fraction: f64,
    pub repeats: usize,
    pub prior_variance: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            horizons: vec![500, 1000, 2000],
            samples: 1000,
            burn_in_fraction: 0.1,
            repeats: 3,
            prior_variance: 10.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    #[serde(rename = "T")]
    pub horizon: u64,
    pub method: String,
    pub seconds: f64,
}

/// Wall-clock of the inference path only (select and update calls) over one
/// static-study episode.
fn time_episode(policy: &mut dyn Policy, horizon: u64, config: &BenchConfig, repeat: usize) -> Result<Duration> {
    let mut instance = gen_static_instance(&mut stream_rng(config.seed, &[stream::BENCH, stream::INSTANCE]));
    let mut env_rng = stream_rng(config.seed, &[stream::BENCH, stream::ENVIRONMENT, horizon, repeat as u64]);
    let mut policy_rng = stream_rng(config.seed, &[stream::BENCH, stream::POLICY, horizon, repeat as u64]);
    let mut elapsed = Duration::ZERO;
    for t in 1..=horizon {
        let draw = instance.draw(t, &mut env_rng);
        let u: f64 = env_rng.random();
        let start = Instant::now();
        let arm = policy.select(&draw.context, &mut policy_rng)?;
        elapsed += start.elapsed();
        let record = InteractionRecord::new(draw.context, arm, u < draw.probs[arm], t);
        let start = Instant::now();
        policy.update(&record, &mut policy_rng)?;
        elapsed += start.elapsed();
    }
    Ok(elapsed)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Median-of-`repeats` timings of static SMC and repeated MCMC on each
/// horizon. Runs sequentially so the timings do not contend.
pub fn bench_smc_vs_mcmc(config: &BenchConfig) -> Result<Vec<TimingRow>> {
    if config.repeats < 1 || config.horizons.is_empty() {
        return Err(BanditError::Config("bench needs at least one horizon and one repeat".into()));
    }
    let model = Arc::new(ObservationModel::new(
        STATIC_ARMS,
        STATIC_DIM,
        LinkFunction::Probit,
        PriorSpec::independent(STATIC_DIM, 0.0, config.prior_variance)?,
    )?);
    let mut rows = Vec::new();
    for &horizon in &config.horizons {
        let mut smc_times = Vec::new();
        let mut mcmc_times = Vec::new();
        for repeat in 0..config.repeats {
            let mut init_rng = stream_rng(config.seed, &[stream::BENCH, horizon, repeat as u64]);
            let mut smc = SmcStatic::new(
                "smc",
                model.clone(),
                config.samples,
                SmcConfig::for_particles(config.samples),
                &mut init_rng,
            )?;
            smc_times.push(time_episode(&mut smc, horizon, config, repeat)?.as_secs_f64());
            let mut mcmc = RepeatedMcmc::new("mcmc", model.clone(), config.samples, config.burn_in_fraction)?;
            mcmc_times.push(time_episode(&mut mcmc, horizon, config, repeat)?.as_secs_f64());
        }
        rows.push(TimingRow { horizon, method: "smc".into(), seconds: median(smc_times) });
        rows.push(TimingRow { horizon, method: "mcmc".into(), seconds: median(mcmc_times) });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn repeated_mcmc_prefers_a_clearly_better_arm() {
        let model = Arc::new(ObservationModel::intercept_only(2, 0.0, 1.0).unwrap());
        let mut policy = RepeatedMcmc::new("mcmc", model, 50, 0.1).unwrap();
        let mut rng = rng_from_seed(1);
        for t in 1..=60u64 {
            let arm = (t % 2) as usize;
            policy.update(&InteractionRecord::new(vec![1.0], arm, arm == 0 || t % 10 == 0, t), &mut rng).unwrap();
        }
        let before = policy.state_digest();
        let picks = (0..200).filter(|_| policy.select(&[1.0], &mut rng).unwrap() == 0).count();
        assert!(picks > 190, "{picks}");
        assert_eq!(before, policy.state_digest());
    }

    #[test]
    fn median_of_three() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0]), 2.5);
    }
}
