//! Probabilistic bandit model: parameter layout, link functions, Bernoulli
//! reward likelihood, priors and random-walk state dynamics.
//!
//! A parameter state holds three blocks:
//!
//! * `beta`: arm-specific coefficients, `arms × dim`, row-major.
//! * `tau`: coefficients shared by every arm. They act on the leading
//!   `tau.len()` context coordinates and are added to each arm's predictor.
//! * `phi`: hierarchical parameters. For each slope coordinate `j` of a
//!   hierarchical prior the block stores `(nu_j, ln sigma2_j)`.
//!
//! Coordinate 0 of every context is the intercept and is fixed to 1 when the
//! model declares one.

use crate::error::{ensure_len, BanditError, Result};
use crate::normal;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Lower clamp applied to success probabilities before taking logs. The
/// upper clamp is `1 - PROB_FLOOR`.
pub const PROB_FLOOR: f64 = 1e-12;

pub fn clamp_probability(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkFunction {
    #[default]
    Probit,
    Logit,
}

impl LinkFunction {
    /// Maps a linear predictor to a success probability.
    pub fn eval(self, u: f64) -> Result<f64> {
        if !u.is_finite() {
            return Err(BanditError::InvalidInput(format!("link argument {u} is not finite")));
        }
        Ok(self.apply(u))
    }

    #[inline]
    pub(crate) fn apply(self, u: f64) -> f64 {
        match self {
            LinkFunction::Probit => normal::cdf(u),
            LinkFunction::Logit => {
                if u >= 0.0 {
                    1.0 / (1.0 + (-u).exp())
                } else {
                    let e = u.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// `ln link(u)`, accurate in the lower tail.
    #[inline]
    pub(crate) fn ln_apply(self, u: f64) -> f64 {
        match self {
            LinkFunction::Probit => normal::ln_cdf(u),
            LinkFunction::Logit => -softplus(-u),
        }
    }

    /// Inverse link. The argument is clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]`
    /// so the result is always finite.
    pub fn inverse(self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(BanditError::InvalidInput(format!("probability {p} outside [0, 1]")));
        }
        let p = clamp_probability(p);
        Ok(match self {
            LinkFunction::Probit => normal::quantile(p),
            LinkFunction::Logit => (p / (1.0 - p)).ln(),
        })
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Per-coordinate independent normal block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalBlock {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl NormalBlock {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        let block = Self { mean, variance };
        block.validate()?;
        Ok(block)
    }

    pub fn isotropic(len: usize, mean: f64, variance: f64) -> Result<Self> {
        Self::new(vec![mean; len], vec![variance; len])
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    fn validate(&self) -> Result<()> {
        ensure_len("normal block variance", self.mean.len(), self.variance.len())?;
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(BanditError::InvalidInput("prior means must be finite".into()));
        }
        if let Some(v) = self.variance.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(BanditError::InvalidInput(format!("prior variances must be strictly positive, got {v}")));
        }
        Ok(())
    }
}

fn ln_normal_density(x: f64, mean: f64, variance: f64) -> f64 {
    -0.5 * ((2.0 * PI * variance).ln() + (x - mean) * (x - mean) / variance)
}

/// Hyperprior on the shared slope variance of a hierarchical prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SlopeVariance {
    Fixed {
        value: f64,
    },
    /// `ln sigma2 ~ N(log_mean, log_variance)`.
    LogNormal {
        log_mean: f64,
        log_variance: f64,
    },
}

impl SlopeVariance {
    /// `E[sigma2]`.
    pub fn expected(&self) -> f64 {
        match *self {
            SlopeVariance::Fixed { value } => value,
            SlopeVariance::LogNormal { log_mean, log_variance } => (log_mean + 0.5 * log_variance).exp(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PriorSpec {
    /// Every arm's coefficient `j` is `N(mean[j], variance[j])`, independently.
    IndependentNormal { mean: Vec<f64>, variance: Vec<f64> },
    /// Coefficients listed in `slope_coords` share `N(nu_j, sigma2_j)` across
    /// arms, with `nu_j ~ N(nu_mean, nu_variance)` and `sigma2_j` drawn from
    /// `slope_variance`. Other coordinates use `mean`/`variance`.
    HierarchicalNormal {
        mean: Vec<f64>,
        variance: Vec<f64>,
        slope_coords: Vec<usize>,
        nu_mean: f64,
        nu_variance: f64,
        slope_variance: SlopeVariance,
    },
}

impl PriorSpec {
    pub fn independent(dim: usize, mean: f64, variance: f64) -> Result<Self> {
        let prior = PriorSpec::IndependentNormal { mean: vec![mean; dim], variance: vec![variance; dim] };
        prior.validate(dim)?;
        Ok(prior)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            PriorSpec::IndependentNormal { mean, variance } => {
                ensure_len("prior mean", dim, mean.len())?;
                NormalBlock { mean: mean.clone(), variance: variance.clone() }.validate()
            }
            PriorSpec::HierarchicalNormal { mean, variance, slope_coords, nu_mean, nu_variance, slope_variance } => {
                ensure_len("prior mean", dim, mean.len())?;
                NormalBlock { mean: mean.clone(), variance: variance.clone() }.validate()?;
                if slope_coords.is_empty() {
                    return Err(BanditError::InvalidInput(
                        "hierarchical prior needs at least one slope coordinate".into(),
                    ));
                }
                let mut seen = vec![false; dim];
                for &j in slope_coords {
                    if j >= dim || std::mem::replace(&mut seen[j], true) {
                        return Err(BanditError::InvalidInput(format!("invalid or repeated slope coordinate {j}")));
                    }
                }
                if !nu_mean.is_finite() || !(*nu_variance > 0.0 && nu_variance.is_finite()) {
                    return Err(BanditError::InvalidInput(
                        "nu hyperprior needs finite mean and positive variance".into(),
                    ));
                }
                match *slope_variance {
                    SlopeVariance::Fixed { value } if !(value > 0.0 && value.is_finite()) => {
                        Err(BanditError::InvalidInput(format!("slope variance must be positive, got {value}")))
                    }
                    SlopeVariance::LogNormal { log_mean, log_variance }
                        if !log_mean.is_finite() || !(log_variance > 0.0 && log_variance.is_finite()) =>
                    {
                        Err(BanditError::InvalidInput("log-normal slope variance needs positive log variance".into()))
                    }
                    _ => Ok(()),
                }
            }
        }
    }

    pub fn phi_dim(&self) -> usize {
        match self {
            PriorSpec::IndependentNormal { .. } => 0,
            PriorSpec::HierarchicalNormal { slope_coords, .. } => 2 * slope_coords.len(),
        }
    }

    pub fn is_independent(&self) -> bool {
        matches!(self, PriorSpec::IndependentNormal { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DynamicsSpec {
    /// `beta_{k,j,t} ~ N(beta_{k,j,t-1}, step_variance[j])` for every arm.
    /// A zero step variance marks a static coordinate.
    RandomWalk { step_variance: Vec<f64> },
}

impl DynamicsSpec {
    pub fn random_walk(dim: usize, step_variance: f64) -> Result<Self> {
        let spec = DynamicsSpec::RandomWalk { step_variance: vec![step_variance; dim] };
        spec.validate(dim)?;
        Ok(spec)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let DynamicsSpec::RandomWalk { step_variance } = self;
        ensure_len("dynamics step variance", dim, step_variance.len())?;
        if let Some(v) = step_variance.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(BanditError::InvalidInput(format!("step variance must be non-negative, got {v}")));
        }
        Ok(())
    }

    pub fn step_variance(&self) -> &[f64] {
        let DynamicsSpec::RandomWalk { step_variance } = self;
        step_variance
    }
}

/// Full parameter state of one particle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    arms: usize,
    dim: usize,
    pub beta: Vec<f64>,
    pub tau: Vec<f64>,
    pub phi: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(arms: usize, dim: usize, tau_len: usize, phi_len: usize) -> Self {
        Self { arms, dim, beta: vec![0.0; arms * dim], tau: vec![0.0; tau_len], phi: vec![0.0; phi_len] }
    }

    /// Builds a state with no shared or hierarchical block from per-arm rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let arms = rows.len();
        let dim = rows.first().map_or(0, Vec::len);
        if arms == 0 || dim == 0 {
            return Err(BanditError::InvalidInput("need at least one arm and one coefficient".into()));
        }
        let mut beta = Vec::with_capacity(arms * dim);
        for row in rows {
            ensure_len("coefficient row", dim, row.len())?;
            beta.extend_from_slice(row);
        }
        Ok(Self { arms, dim, beta, tau: Vec::new(), phi: Vec::new() })
    }

    pub fn arms(&self) -> usize {
        self.arms
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn coefficients(&self, arm: usize) -> &[f64] {
        &self.beta[arm * self.dim..(arm + 1) * self.dim]
    }

    #[inline]
    pub fn coefficients_mut(&mut self, arm: usize) -> &mut [f64] {
        &mut self.beta[arm * self.dim..(arm + 1) * self.dim]
    }

    pub fn num_coords(&self) -> usize {
        self.beta.len() + self.tau.len() + self.phi.len()
    }

    /// All coordinates in `beta, tau, phi` order.
    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.beta.iter().chain(&self.tau).chain(&self.phi).copied()
    }

    /// Same layout as `self`, filled from a flat iterator.
    pub fn with_flat(&self, values: &[f64]) -> Self {
        let nb = self.beta.len();
        let nt = self.tau.len();
        Self {
            arms: self.arms,
            dim: self.dim,
            beta: values[..nb].to_vec(),
            tau: values[nb..nb + nt].to_vec(),
            phi: values[nb + nt..].to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.flat().all(f64::is_finite)
    }
}

/// One `(context, arm, reward)` observation. Arms are zero-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub context: Vec<f64>,
    pub arm: usize,
    pub reward: bool,
    pub time_index: u64,
}

impl InteractionRecord {
    pub fn new(context: Vec<f64>, arm: usize, reward: bool, time_index: u64) -> Self {
        Self { context, arm, reward, time_index }
    }

    pub fn reward_value(&self) -> f64 {
        if self.reward {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationModel {
    arms: usize,
    dim: usize,
    link: LinkFunction,
    prior: PriorSpec,
    #[serde(default)]
    shared: Option<NormalBlock>,
    #[serde(default)]
    dynamics: Option<DynamicsSpec>,
    #[serde(default = "default_true")]
    intercept: bool,
}

fn default_true() -> bool {
    true
}

impl ObservationModel {
    pub fn new(arms: usize, dim: usize, link: LinkFunction, prior: PriorSpec) -> Result<Self> {
        if arms == 0 {
            return Err(BanditError::InvalidInput("a model needs at least one arm".into()));
        }
        if dim == 0 {
            return Err(BanditError::InvalidInput("context dimension must be at least 1".into()));
        }
        prior.validate(dim)?;
        Ok(Self { arms, dim, link, prior, shared: None, dynamics: None, intercept: true })
    }

    /// Intercept-only probit model with an independent `N(mean, variance)`
    /// prior on every arm's single coefficient.
    pub fn intercept_only(arms: usize, prior_mean: f64, prior_variance: f64) -> Result<Self> {
        Self::new(arms, 1, LinkFunction::Probit, PriorSpec::independent(1, prior_mean, prior_variance)?)
    }

    pub fn with_dynamics(mut self, dynamics: DynamicsSpec) -> Result<Self> {
        dynamics.validate(self.dim)?;
        self.dynamics = Some(dynamics);
        Ok(self)
    }

    pub fn with_shared(mut self, shared: NormalBlock) -> Result<Self> {
        shared.validate()?;
        if shared.len() > self.dim {
            return Err(BanditError::InvalidInput("shared block longer than the context".into()));
        }
        self.shared = Some(shared);
        Ok(self)
    }

    pub fn without_intercept(mut self) -> Self {
        self.intercept = false;
        self
    }

    pub fn arms(&self) -> usize {
        self.arms
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn link(&self) -> LinkFunction {
        self.link
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn dynamics(&self) -> Option<&DynamicsSpec> {
        self.dynamics.as_ref()
    }

    pub fn is_dynamic(&self) -> bool {
        self.dynamics.is_some()
    }

    pub fn shared(&self) -> Option<&NormalBlock> {
        self.shared.as_ref()
    }

    pub fn shared_dim(&self) -> usize {
        self.shared.as_ref().map_or(0, NormalBlock::len)
    }

    pub fn phi_dim(&self) -> usize {
        self.prior.phi_dim()
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    pub fn check_arm(&self, arm: usize) -> Result<()> {
        if arm >= self.arms {
            return Err(BanditError::ArmOutOfRange { arm, arms: self.arms });
        }
        Ok(())
    }

    pub fn check_context(&self, context: &[f64]) -> Result<()> {
        ensure_len("context", self.dim, context.len())?;
        if context.iter().any(|x| !x.is_finite()) {
            return Err(BanditError::InvalidInput("context entries must be finite".into()));
        }
        if self.intercept && context[0] != 1.0 {
            return Err(BanditError::InvalidInput(format!("intercept slot must equal 1, got {}", context[0])));
        }
        Ok(())
    }

    pub fn check_record(&self, record: &InteractionRecord) -> Result<()> {
        self.check_arm(record.arm)?;
        self.check_context(&record.context)
    }

    pub fn check_params(&self, params: &ParamVector) -> Result<()> {
        ensure_len("parameter arms", self.arms, params.arms)?;
        ensure_len("parameter dimension", self.dim, params.dim)?;
        ensure_len("beta block", self.arms * self.dim, params.beta.len())?;
        ensure_len("tau block", self.shared_dim(), params.tau.len())?;
        ensure_len("phi block", self.phi_dim(), params.phi.len())?;
        Ok(())
    }

    #[inline]
    pub(crate) fn linear_predictor_unchecked(&self, params: &ParamVector, arm: usize, context: &[f64]) -> f64 {
        let own: f64 = params.coefficients(arm).iter().zip(context).map(|(b, x)| b * x).sum();
        let shared: f64 = params.tau.iter().zip(context).map(|(b, x)| b * x).sum();
        own + shared
    }

    pub fn linear_predictor(&self, params: &ParamVector, arm: usize, context: &[f64]) -> Result<f64> {
        self.check_arm(arm)?;
        ensure_len("context", self.dim, context.len())?;
        self.check_params(params)?;
        Ok(self.linear_predictor_unchecked(params, arm, context))
    }

    /// Success probability of `arm` under `params`, clamped to the
    /// probability band.
    pub fn expected_reward(&self, params: &ParamVector, arm: usize, context: &[f64]) -> Result<f64> {
        let eta = self.linear_predictor(params, arm, context)?;
        if !eta.is_finite() {
            return Err(BanditError::InvalidInput("non-finite linear predictor".into()));
        }
        Ok(clamp_probability(self.link.apply(eta)))
    }

    #[inline]
    pub(crate) fn log_likelihood_unchecked(&self, params: &ParamVector, record: &InteractionRecord) -> f64 {
        let eta = self.linear_predictor_unchecked(params, record.arm, &record.context);
        let floor = PROB_FLOOR.ln();
        let ceil = (-PROB_FLOOR).ln_1p();
        let ll = if record.reward { self.link.ln_apply(eta) } else { self.link.ln_apply(-eta) };
        // Same band as clamping p to [PROB_FLOOR, 1 - PROB_FLOOR].
        if ll.is_nan() {
            floor
        } else {
            ll.clamp(floor, ceil)
        }
    }

    /// Bernoulli log-likelihood of one record. Never `-inf` or NaN.
    pub fn log_likelihood(&self, params: &ParamVector, record: &InteractionRecord) -> Result<f64> {
        self.check_record(record)?;
        self.check_params(params)?;
        Ok(self.log_likelihood_unchecked(params, record))
    }

    /// Independent draw from the prior. Hierarchical priors draw their
    /// hyperparameters first.
    pub fn prior_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut params = ParamVector::zeros(self.arms, self.dim, self.shared_dim(), self.phi_dim());
        let mut gauss = || -> f64 { StandardNormal.sample(rng) };
        match &self.prior {
            PriorSpec::IndependentNormal { mean, variance } => {
                for arm in 0..self.arms {
                    for (j, b) in params.coefficients_mut(arm).iter_mut().enumerate() {
                        *b = mean[j] + variance[j].sqrt() * gauss();
                    }
                }
            }
            PriorSpec::HierarchicalNormal { mean, variance, slope_coords, nu_mean, nu_variance, slope_variance } => {
                let mut row_mean = mean.clone();
                let mut row_var = variance.clone();
                for (g, &j) in slope_coords.iter().enumerate() {
                    let nu = nu_mean + nu_variance.sqrt() * gauss();
                    let ln_s2 = match *slope_variance {
                        SlopeVariance::Fixed { value } => value.ln(),
                        SlopeVariance::LogNormal { log_mean, log_variance } => log_mean + log_variance.sqrt() * gauss(),
                    };
                    params.phi[2 * g] = nu;
                    params.phi[2 * g + 1] = ln_s2;
                    row_mean[j] = nu;
                    row_var[j] = ln_s2.exp();
                }
                for arm in 0..self.arms {
                    for (j, b) in params.coefficients_mut(arm).iter_mut().enumerate() {
                        *b = row_mean[j] + row_var[j].sqrt() * gauss();
                    }
                }
            }
        }
        if let Some(shared) = &self.shared {
            for (j, t) in params.tau.iter_mut().enumerate() {
                *t = shared.mean[j] + shared.variance[j].sqrt() * gauss();
            }
        }
        params
    }

    /// Joint prior log-density. Fixed slope variances are point masses: a
    /// state whose stored `ln sigma2` differs from the fixed value has density
    /// zero (`-inf`).
    pub fn prior_logdensity(&self, params: &ParamVector) -> Result<f64> {
        self.check_params(params)?;
        Ok(self.prior_logdensity_unchecked(params))
    }

    pub(crate) fn prior_logdensity_unchecked(&self, params: &ParamVector) -> f64 {
        let mut total = 0.0;
        match &self.prior {
            PriorSpec::IndependentNormal { mean, variance } => {
                for arm in 0..self.arms {
                    for (j, &b) in params.coefficients(arm).iter().enumerate() {
                        total += ln_normal_density(b, mean[j], variance[j]);
                    }
                }
            }
            PriorSpec::HierarchicalNormal { mean, variance, slope_coords, nu_mean, nu_variance, slope_variance } => {
                let mut row_mean = mean.clone();
                let mut row_var = variance.clone();
                for (g, &j) in slope_coords.iter().enumerate() {
                    let nu = params.phi[2 * g];
                    let ln_s2 = params.phi[2 * g + 1];
                    total += ln_normal_density(nu, *nu_mean, *nu_variance);
                    match *slope_variance {
                        SlopeVariance::Fixed { value } => {
                            if (ln_s2 - value.ln()).abs() > 1e-12 {
                                return f64::NEG_INFINITY;
                            }
                        }
                        SlopeVariance::LogNormal { log_mean, log_variance } => {
                            total += ln_normal_density(ln_s2, log_mean, log_variance);
                        }
                    }
                    row_mean[j] = nu;
                    row_var[j] = ln_s2.exp();
                }
                for arm in 0..self.arms {
                    for (j, &b) in params.coefficients(arm).iter().enumerate() {
                        total += ln_normal_density(b, row_mean[j], row_var[j]);
                    }
                }
            }
        }
        if let Some(shared) = &self.shared {
            for (j, &t) in params.tau.iter().enumerate() {
                total += ln_normal_density(t, shared.mean[j], shared.variance[j]);
            }
        }
        total
    }

    /// Flat-layout mask of coordinates a Metropolis move may perturb.
    pub(crate) fn free_coordinates(&self) -> Vec<bool> {
        let mut mask = vec![true; self.arms * self.dim + self.shared_dim()];
        if let PriorSpec::HierarchicalNormal { slope_coords, slope_variance, .. } = &self.prior {
            let fixed = matches!(slope_variance, SlopeVariance::Fixed { .. });
            for _ in slope_coords {
                mask.push(true);
                mask.push(!fixed);
            }
        }
        mask
    }

    /// Advances `params` one step through the random-walk dynamics.
    pub fn propagate<R: Rng + ?Sized>(&self, params: &ParamVector, rng: &mut R) -> Result<ParamVector> {
        let mut next = params.clone();
        self.propagate_in_place(&mut next, rng)?;
        Ok(next)
    }

    pub(crate) fn propagate_in_place<R: Rng + ?Sized>(&self, params: &mut ParamVector, rng: &mut R) -> Result<()> {
        let dynamics = self
            .dynamics
            .as_ref()
            .ok_or_else(|| BanditError::Contract("propagation requested on a static model".into()))?;
        let sd: Vec<f64> = dynamics.step_variance().iter().map(|v| v.sqrt()).collect();
        for arm in 0..self.arms {
            for (b, &s) in params.coefficients_mut(arm).iter_mut().zip(&sd) {
                if s > 0.0 {
                    let e: f64 = StandardNormal.sample(rng);
                    *b += s * e;
                }
            }
        }
        Ok(())
    }
}
