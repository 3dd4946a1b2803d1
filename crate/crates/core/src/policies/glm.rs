//! Per-arm MAP regression baselines: contextual ε-greedy and UCB.
//!
//! Each arm has its own probit or logit regression with a Gaussian prior.
//! Fits are found by damped Newton iterations warm-started from the previous
//! fit, and the Laplace covariance is the inverse negative Hessian at the
//! mode.

use super::{check_record_shape, digest, ArmPosterior, Policy};
use crate::error::{ensure_len, BanditError, Result};
use crate::model::{InteractionRecord, LinkFunction, ObservationModel, PriorSpec};
use crate::normal;
use crate::rng::BanditRng;
use crate::smc::History;
use crate::stats::argmax_random_tie;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Gradient-norm tolerance for the MAP Newton iterations.
pub const MAP_GRADIENT_TOL: f64 = 1e-8;
const MAX_NEWTON_ITERS: usize = 100;

/// MAP coefficients and Laplace covariance (row-major `d × d`) for one arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub mean: Vec<f64>,
    pub covariance: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
}

impl RegressionFit {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `xᵀ Σ x`.
    pub fn predictive_variance(&self, context: &[f64]) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for a in 0..d {
            for b in 0..d {
                acc += context[a] * self.covariance[a * d + b] * context[b];
            }
        }
        acc
    }

    pub fn linear_predictor(&self, context: &[f64]) -> f64 {
        self.mean.iter().zip(context).map(|(b, x)| b * x).sum()
    }
}

struct Objective<'a> {
    link: LinkFunction,
    prior_mean: &'a [f64],
    prior_var: &'a [f64],
    design: Vec<&'a [f64]>,
    rewards: Vec<bool>,
}

impl Objective<'_> {
    fn eta(&self, x: &[f64], beta: &DVector<f64>) -> f64 {
        x.iter().zip(beta.iter()).map(|(a, b)| a * b).sum()
    }

    fn value(&self, beta: &DVector<f64>) -> f64 {
        let prior: f64 =
            beta.iter().zip(self.prior_mean).zip(self.prior_var).map(|((b, m), v)| -0.5 * (b - m) * (b - m) / v).sum();
        let ll: f64 = self
            .design
            .iter()
            .zip(&self.rewards)
            .map(|(x, &y)| {
                let eta = self.eta(x, beta);
                self.link.ln_apply(if y { eta } else { -eta })
            })
            .sum();
        prior + ll
    }

    /// Gradient and negative Hessian of the log posterior.
    fn derivatives(&self, beta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let d = beta.len();
        let mut grad = DVector::from_iterator(d, (0..d).map(|j| -(beta[j] - self.prior_mean[j]) / self.prior_var[j]));
        let mut neg_hess = DMatrix::from_diagonal(&DVector::from_iterator(d, self.prior_var.iter().map(|v| 1.0 / v)));
        for (x, &y) in self.design.iter().zip(&self.rewards) {
            let eta = self.eta(x, beta);
            let (g, h) = match self.link {
                LinkFunction::Probit => {
                    let s = if y { 1.0 } else { -1.0 };
                    let lambda = normal::mills_ratio(s * eta);
                    (s * lambda, lambda * (s * eta + lambda))
                }
                LinkFunction::Logit => {
                    let p = 1.0 / (1.0 + (-eta).exp());
                    (if y { 1.0 } else { 0.0 } - p, p * (1.0 - p))
                }
            };
            for a in 0..d {
                grad[a] += g * x[a];
                for b in 0..d {
                    neg_hess[(a, b)] += h * x[a] * x[b];
                }
            }
        }
        (grad, neg_hess)
    }
}

fn factor(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| BanditError::Numerical("negative Hessian is not positive definite".into()))
}

/// MAP fit of arm `arm`'s coefficients from its records in `history`, under
/// the model's independent Gaussian prior. Warm-started from `warm` when
/// given. Hitting the iteration cap returns the best iterate with
/// `converged == false`.
pub fn map_fit(model: &ObservationModel, history: &History, arm: usize, warm: Option<&[f64]>) -> Result<RegressionFit> {
    model.check_arm(arm)?;
    let PriorSpec::IndependentNormal { mean, variance } = model.prior() else {
        return Err(BanditError::Config("MAP baselines need an independent-normal prior".into()));
    };
    let d = model.dim();
    let objective = Objective {
        link: model.link(),
        prior_mean: mean,
        prior_var: variance,
        design: history.arm_records(arm).map(|r| r.context.as_slice()).collect(),
        rewards: history.arm_records(arm).map(|r| r.reward).collect(),
    };
    let mut beta = match warm {
        Some(w) => {
            ensure_len("warm start", d, w.len())?;
            DVector::from_column_slice(w)
        }
        None => DVector::from_column_slice(mean),
    };
    let mut value = objective.value(&beta);
    let mut iterations = 0;
    let (mut grad, mut neg_hess) = objective.derivatives(&beta);
    while grad.norm() > MAP_GRADIENT_TOL && iterations < MAX_NEWTON_ITERS {
        iterations += 1;
        let step = factor(neg_hess.clone())?.solve(&grad);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate = &beta + &step * scale;
            let v = objective.value(&candidate);
            if v >= value || (v - value).abs() <= 1e-12 * value.abs().max(1.0) {
                beta = candidate;
                value = v;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        (grad, neg_hess) = objective.derivatives(&beta);
    }
    let gradient_norm = grad.norm();
    let covariance = factor(neg_hess)?.inverse();
    // Symmetrize against rounding in the inverse.
    let covariance = (&covariance + covariance.transpose()) * 0.5;
    Ok(RegressionFit {
        mean: beta.iter().copied().collect(),
        covariance: covariance.transpose().iter().copied().collect(),
        converged: gradient_norm <= MAP_GRADIENT_TOL,
        iterations,
        gradient_norm,
    })
}

/// Upper confidence score `link(x·β̂ + z √(xᵀΣx))` with `z = Φ⁻¹(confidence)`.
pub fn ucb_score(fit: &RegressionFit, link: LinkFunction, context: &[f64], confidence: f64) -> Result<f64> {
    link.eval(ucb_linear(fit, context, confidence)?)
}

fn ucb_linear(fit: &RegressionFit, context: &[f64], confidence: f64) -> Result<f64> {
    ensure_len("context", fit.dim(), context.len())?;
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(BanditError::InvalidInput(format!("confidence must lie in (0, 1), got {confidence}")));
    }
    let s = fit.predictive_variance(context);
    let scale = context.iter().map(|x| x * x).sum::<f64>().max(1.0);
    if !s.is_finite() || s < -1e-12 * scale {
        return Err(BanditError::Numerical(format!("covariance is not positive semidefinite (xᵀΣx = {s})")));
    }
    Ok(fit.linear_predictor(context) + normal::quantile(confidence) * s.max(0.0).sqrt())
}

/// With probability `1 − ε` the plug-in greedy arm, otherwise a uniform
/// draw over all arms (over the non-greedy arms when `exclude_greedy`).
pub fn eps_greedy_select<R: Rng + ?Sized>(
    fits: &[RegressionFit],
    context: &[f64],
    epsilon: f64,
    exclude_greedy: bool,
    rng: &mut R,
) -> Result<usize> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(BanditError::InvalidInput(format!("epsilon must lie in [0, 1], got {epsilon}")));
    }
    for f in fits {
        ensure_len("context", f.dim(), context.len())?;
    }
    let k = fits.len();
    let explore = rng.random::<f64>() < epsilon;
    if explore && !exclude_greedy {
        return Ok(rng.random_range(0..k));
    }
    let plug_in: Vec<f64> = fits.iter().map(|f| f.linear_predictor(context)).collect();
    let greedy = argmax_random_tie(&plug_in, rng);
    if explore && k > 1 {
        let other = rng.random_range(0..k - 1);
        return Ok(if other >= greedy { other + 1 } else { other });
    }
    Ok(greedy)
}

/// Shared state of the regression baselines.
#[derive(Clone, Debug, Serialize)]
struct Regressions {
    #[serde(skip)]
    model: std::sync::Arc<ObservationModel>,
    history: History,
    fits: Vec<RegressionFit>,
}

impl Regressions {
    fn new(model: std::sync::Arc<ObservationModel>) -> Result<Self> {
        let history = History::new(model.arms());
        let fits = (0..model.arms()).map(|k| map_fit(&model, &history, k, None)).collect::<Result<_>>()?;
        Ok(Self { model, history, fits })
    }

    fn update(&mut self, record: &InteractionRecord) -> Result<()> {
        check_record_shape(self.model.arms(), self.model.dim(), record)?;
        let arm = record.arm;
        self.history.push(record.clone())?;
        let warm = self.fits[arm].mean.clone();
        self.fits[arm] = map_fit(&self.model, &self.history, arm, Some(&warm))?;
        if !self.fits[arm].converged {
            log::warn!("MAP fit for arm {arm} stopped at gradient norm {:e}", self.fits[arm].gradient_norm);
        }
        Ok(())
    }

    fn posteriors(&self, context: &[f64]) -> Vec<ArmPosterior> {
        let d = self.model.dim();
        self.fits
            .iter()
            .map(|f| ArmPosterior {
                mean_reward: self.model.link().apply(f.linear_predictor(context)),
                coef_mean: f.mean.clone(),
                coef_variance: (0..d).map(|j| f.covariance[j * d + j]).collect(),
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EpsGreedy {
    name: String,
    epsilon: f64,
    exclude_greedy: bool,
    state: Regressions,
}

impl EpsGreedy {
    pub fn new(
        name: impl Into<String>,
        model: std::sync::Arc<ObservationModel>,
        epsilon: f64,
        exclude_greedy: bool,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(BanditError::Config(format!("epsilon must lie in [0, 1], got {epsilon}")));
        }
        Ok(Self { name: name.into(), epsilon, exclude_greedy, state: Regressions::new(model)? })
    }

    pub fn fits(&self) -> &[RegressionFit] {
        &self.state.fits
    }
}

impl Policy for EpsGreedy {
    fn name(&self) -> &str {
        &self.name
    }

    fn arms(&self) -> usize {
        self.state.model.arms()
    }

    fn context_dim(&self) -> usize {
        self.state.model.dim()
    }

    fn select(&self, context: &[f64], rng: &mut BanditRng) -> Result<usize> {
        eps_greedy_select(&self.state.fits, context, self.epsilon, self.exclude_greedy, rng)
    }

    fn update(&mut self, record: &InteractionRecord, _rng: &mut BanditRng) -> Result<()> {
        self.state.update(record)
    }

    fn state_digest(&self) -> String {
        digest(self)
    }

    fn arm_posteriors(&self, context: &[f64]) -> Option<Vec<ArmPosterior>> {
        Some(self.state.posteriors(context))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Ucb {
    name: String,
    confidence: f64,
    state: Regressions,
}

impl Ucb {
    pub fn new(name: impl Into<String>, model: std::sync::Arc<ObservationModel>, confidence: f64) -> Result<Self> {
        if !(confidence > 0.0 && confidence < 1.0) {
            return Err(BanditError::Config(format!("confidence must lie in (0, 1), got {confidence}")));
        }
        Ok(Self { name: name.into(), confidence, state: Regressions::new(model)? })
    }

    pub fn fits(&self) -> &[RegressionFit] {
        &self.state.fits
    }
}

impl Policy for Ucb {
    fn name(&self) -> &str {
        &self.name
    }

    fn arms(&self) -> usize {
        self.state.model.arms()
    }

    fn context_dim(&self) -> usize {
        self.state.model.dim()
    }

    fn select(&self, context: &[f64], rng: &mut BanditRng) -> Result<usize> {
        // The link is increasing, so ranking on the linear scale avoids ties
        // from saturation.
        let scores =
            self.state.fits.iter().map(|f| ucb_linear(f, context, self.confidence)).collect::<Result<Vec<_>>>()?;
        Ok(argmax_random_tie(&scores, rng))
    }

    fn update(&mut self, record: &InteractionRecord, _rng: &mut BanditRng) -> Result<()> {
        self.state.update(record)
    }

    fn state_digest(&self) -> String {
        digest(self)
    }

    fn arm_posteriors(&self, context: &[f64]) -> Option<Vec<ArmPosterior>> {
        Some(self.state.posteriors(context))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand_distr::{Distribution, StandardNormal};
    use std::sync::Arc;

    fn model(link: LinkFunction, arms: usize, dim: usize) -> Arc<ObservationModel> {
        Arc::new(ObservationModel::new(arms, dim, link, PriorSpec::independent(dim, 0.0, 10.0).unwrap()).unwrap())
    }

    fn fit(mean: Vec<f64>, covariance: Vec<f64>) -> RegressionFit {
        RegressionFit { mean, covariance, converged: true, iterations: 0, gradient_norm: 0.0 }
    }

    #[test]
    fn empty_history_returns_prior() {
        let m = model(LinkFunction::Probit, 2, 3);
        let f = map_fit(&m, &History::new(2), 1, None).unwrap();
        assert_eq!(f.mean, vec![0.0; 3]);
        let expected: Vec<f64> = (0..9).map(|i| if i % 4 == 0 { 10.0 } else { 0.0 }).collect();
        for (a, b) in f.covariance.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(f.converged);
    }

    fn simulated_history(link: LinkFunction, truth: &[f64], n: usize, seed: u64) -> History {
        let mut rng = rng_from_seed(seed);
        let mut history = History::new(1);
        for t in 0..n {
            let x1: f64 = StandardNormal.sample(&mut rng);
            let x2: f64 = StandardNormal.sample(&mut rng);
            let x = vec![1.0, x1, x2];
            let eta: f64 = x.iter().zip(truth).map(|(a, b)| a * b).sum();
            let y = rng.random::<f64>() < link.apply(eta);
            history.push(InteractionRecord::new(x, 0, y, t as u64 + 1)).unwrap();
        }
        history
    }

    #[test]
    fn map_is_stationary_and_consistent() {
        let truth = [0.3, -0.8, 1.0];
        for link in [LinkFunction::Probit, LinkFunction::Logit] {
            let m = model(link, 1, 3);
            let history = simulated_history(link, &truth, 500, 4);
            let f = map_fit(&m, &history, 0, None).unwrap();
            assert!(f.converged && f.gradient_norm <= MAP_GRADIENT_TOL, "{f:?}");
            for j in 0..3 {
                let se = f.covariance[j * 3 + j].sqrt();
                assert!((f.mean[j] - truth[j]).abs() < 3.0 * se, "{link:?} coord {j}: {} vs {}", f.mean[j], truth[j]);
            }
            // Warm start from the optimum converges immediately to the same point.
            let again = map_fit(&m, &history, 0, Some(&f.mean)).unwrap();
            assert_eq!(again.iterations, 0);
        }
    }

    #[test]
    fn map_handles_separable_data() {
        let m = model(LinkFunction::Probit, 1, 1);
        let mut history = History::new(1);
        for t in 1..=300 {
            history.push(InteractionRecord::new(vec![1.0], 0, true, t)).unwrap();
        }
        let f = map_fit(&m, &history, 0, None).unwrap();
        assert!(f.converged);
        assert!(f.mean[0] > 2.0 && f.mean[0].is_finite());
    }

    #[test]
    fn ucb_score_examples() {
        let f = fit(vec![0.4, -0.2], vec![0.3, 0.1, 0.1, 0.2]);
        let x = [1.0, 0.5];
        let plug_in = LinkFunction::Probit.apply(0.3);
        assert!((ucb_score(&f, LinkFunction::Probit, &x, 0.5).unwrap() - plug_in).abs() < 1e-15);
        let zero = fit(vec![0.4, -0.2], vec![0.0; 4]);
        for c in [0.5, 0.9, 0.95, 0.999] {
            assert_eq!(ucb_score(&zero, LinkFunction::Probit, &x, c).unwrap(), plug_in);
        }
        // xᵀΣx = 1 inflates the linear predictor by Φ⁻¹(0.95).
        let unit = fit(vec![0.0], vec![1.0]);
        let inflated = ucb_linear(&unit, &[1.0], 0.95).unwrap();
        assert!((inflated - 1.644_853_626_951_472_7).abs() < 1e-3);
        let broken = fit(vec![0.0], vec![-1.0]);
        assert!(matches!(ucb_score(&broken, LinkFunction::Probit, &[1.0], 0.9), Err(BanditError::Numerical(_))));
    }

    #[test]
    fn ucb_argmax_ignores_common_shift() {
        let m = model(LinkFunction::Probit, 3, 2);
        let mut policy = Ucb::new("ucb", m, 0.9).unwrap();
        policy.state.fits = vec![
            fit(vec![0.1, 0.5], vec![0.2, 0.0, 0.0, 0.1]),
            fit(vec![0.3, -0.1], vec![0.05, 0.0, 0.0, 0.05]),
            fit(vec![-0.2, 0.2], vec![0.5, 0.1, 0.1, 0.3]),
        ];
        let mut shifted = policy.clone();
        for f in &mut shifted.state.fits {
            f.mean[0] += 2.5;
        }
        let mut r1 = rng_from_seed(5);
        let mut r2 = rng_from_seed(5);
        for i in 0..200 {
            let x = [1.0, (i as f64 * 0.13).cos() * 2.0];
            assert_eq!(policy.select(&x, &mut r1).unwrap(), shifted.select(&x, &mut r2).unwrap());
        }
    }

    #[test]
    fn eps_greedy_limits() {
        let fits = vec![fit(vec![1.0], vec![1.0]), fit(vec![0.0], vec![1.0]), fit(vec![-1.0], vec![1.0])];
        let mut rng = rng_from_seed(6);
        assert!((0..1000).all(|_| eps_greedy_select(&fits, &[1.0], 0.0, false, &mut rng).unwrap() == 0));
        let n = 60_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[eps_greedy_select(&fits, &[1.0], 1.0, false, &mut rng).unwrap()] += 1;
        }
        let se = (1.0 / 3.0 * 2.0 / 3.0 / n as f64).sqrt();
        assert!(counts.iter().all(|&c| (c as f64 / n as f64 - 1.0 / 3.0).abs() < 3.0 * se));
        assert!(eps_greedy_select(&fits, &[1.0], 1.5, false, &mut rng).is_err());
    }

    #[test]
    fn eps_greedy_exploration_rate() {
        let fits = vec![
            fit(vec![1.0], vec![1.0]),
            fit(vec![0.0], vec![1.0]),
            fit(vec![-1.0], vec![1.0]),
            fit(vec![-2.0], vec![1.0]),
        ];
        let mut rng = rng_from_seed(7);
        let eps = 0.1;
        let n = 100_000;
        for (exclude, p) in [(false, eps * 3.0 / 4.0), (true, eps)] {
            let off = (0..n).filter(|_| eps_greedy_select(&fits, &[1.0], eps, exclude, &mut rng).unwrap() != 0).count()
                as f64
                / n as f64;
            assert!((off - p).abs() < 3.0 * (p * (1.0 - p) / n as f64).sqrt(), "{exclude}: {off} vs {p}");
        }
    }

    #[test]
    fn regression_policies_update_one_arm() {
        let m = model(LinkFunction::Probit, 2, 2);
        let mut policy = EpsGreedy::new("eps", m, 0.1, false).unwrap();
        let before = policy.fits().to_vec();
        policy.update(&InteractionRecord::new(vec![1.0, 0.3], 1, true, 1), &mut rng_from_seed(1)).unwrap();
        assert_eq!(policy.fits()[0], before[0]);
        assert_ne!(policy.fits()[1], before[1]);
        assert!(policy.fits()[1].mean[0] > 0.0);
    }
}
