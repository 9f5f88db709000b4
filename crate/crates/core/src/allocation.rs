//! Confidence scoring, verification-cost and utility models, and the budget-constrained
//! allocation solver (projected gradient ascent on the simplex) with its meta-allocation and
//! rolling-horizon wrappers.

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::markets::{LmsrMarket, ParimutuelPool, Side};
use crate::model::StrategyId;
use crate::num::{apportion_real, Amount, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum AllocationError {
    #[error("no strategies to allocate across")]
    EmptyStrategySet,
    #[error("budget must be positive")]
    NonPositiveBudget,
    #[error("allocation must be non-negative")]
    NegativeAllocation,
    #[error("objective is not concave: {0}")]
    NonConcave(&'static str),
    #[error("discount factor must lie in (0, 1), got {0}")]
    Discount(f64),
    #[error("lookahead must be at least one epoch")]
    Lookahead,
    #[error("no eligible instances; capital stays idle")]
    NoEligibleInstances,
    #[error("return noise scale must be positive")]
    NoiseScale,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConfidenceSource {
    Parimutuel,
    Lmsr,
    Default,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceScore<S> {
    pub strategy: StrategyId,
    pub value: S,
    pub source: ConfidenceSource,
    pub agree_stake_fraction: S,
}

/// Market whose belief feeds a confidence score.
#[derive(Clone, Copy, Debug)]
pub enum MarketRef<'a, S> {
    Parimutuel(&'a ParimutuelPool),
    Lmsr(&'a LmsrMarket<S>),
}

/// Market-implied probability that the strategy meets its intention. Untraded markets score
/// an uninformative 0.5.
pub fn confidence_score<S: Scalar>(strategy: StrategyId, market: MarketRef<'_, S>) -> ConfidenceScore<S> {
    let half = S::lit(0.5);
    let default = ConfidenceScore { strategy, value: half, source: ConfidenceSource::Default, agree_stake_fraction: half };
    match market {
        MarketRef::Parimutuel(pool) => match pool.implied_probability::<S>() {
            Ok(p) => ConfidenceScore { strategy, value: p, source: ConfidenceSource::Parimutuel, agree_stake_fraction: p },
            Err(_) => default,
        },
        MarketRef::Lmsr(m) => {
            if !m.has_trades() {
                return default;
            }
            let (y, n) = (m.shares(Side::Agree), m.shares(Side::Disagree));
            ConfidenceScore { strategy, value: m.price(), source: ConfidenceSource::Lmsr, agree_stake_fraction: y / (y + n) }
        }
    }
}

/// `base_fee + marginal_rate * complexity^complexity_exponent * allocation`, in tokens.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationCostModel<S> {
    pub base_fee: S,
    pub marginal_rate: S,
    pub complexity_exponent: S,
}

impl<S: Scalar> VerificationCostModel<S> {
    pub fn cost(&self, allocation: S, complexity: S) -> Result<S, AllocationError> {
        if allocation < S::zero() {
            return Err(AllocationError::NegativeAllocation);
        }
        Ok(self.base_fee + self.marginal(complexity) * allocation)
    }

    /// Derivative of the cost with respect to allocation.
    pub fn marginal(&self, complexity: S) -> S {
        self.marginal_rate * complexity.powf(self.complexity_exponent)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UtilityKind {
    Linear,
    /// `wealth * ln(1 + x / wealth)`, extended quadratically below a small wealth floor so it
    /// stays finite and concave for every real `x`.
    LogWealth,
    MeanVariance,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityModel<S> {
    pub kind: UtilityKind,
    pub risk_aversion: S,
    /// Reference wealth for LogWealth.
    pub wealth: S,
}

const LOG_FLOOR: f64 = 1e-3;

impl<S: Scalar> UtilityModel<S> {
    pub fn linear() -> Self {
        Self { kind: UtilityKind::Linear, risk_aversion: S::zero(), wealth: S::one() }
    }

    fn safe_ln(z: S) -> (S, S) {
        let z0 = S::lit(LOG_FLOOR);
        if z >= z0 {
            (z.ln(), z.recip())
        } else {
            let d = z - z0;
            let two = S::lit(2.0);
            (z0.ln() + d / z0 - d * d / (two * z0 * z0), z0.recip() - d / (z0 * z0))
        }
    }

    /// Realised utility of a value `x` whose expectation was `expected`, with its derivative.
    pub fn utility(&self, x: S, expected: S) -> S {
        match self.kind {
            UtilityKind::Linear => x,
            UtilityKind::MeanVariance => {
                let d = x - expected;
                x - self.risk_aversion * d * d / S::lit(2.0)
            }
            UtilityKind::LogWealth => self.wealth * Self::safe_ln(S::one() + x / self.wealth).0,
        }
    }
}

/// Gaussian return model. The allocator's posterior mean depends only on market confidence;
/// realised returns also depend on the latent quality.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnModel<S> {
    pub belief_intercept: S,
    pub belief_slope: S,
    pub quality_intercept: S,
    pub quality_slope: S,
    pub noise_scale: S,
    pub confidence_coupling: S,
}

impl<S: Scalar> ReturnModel<S> {
    pub fn validate(&self) -> Result<(), AllocationError> {
        if !(self.noise_scale > S::zero()) {
            return Err(AllocationError::NoiseScale);
        }
        Ok(())
    }

    /// Expected return given only the confidence score.
    pub fn posterior_mean(&self, confidence: S) -> S {
        self.belief_intercept + self.belief_slope * confidence
    }

    pub fn mean_given_quality(&self, quality: S) -> S {
        self.quality_intercept + self.quality_slope * quality
    }

    /// Mean of the realised-return distribution.
    pub fn sampling_mean(&self, quality: S, confidence: S) -> S {
        let c = self.confidence_coupling;
        c * self.posterior_mean(confidence) + (S::one() - c) * self.mean_given_quality(quality)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationModels<S> {
    pub utility: UtilityModel<S>,
    pub returns: ReturnModel<S>,
    pub cost: VerificationCostModel<S>,
}

impl<S: Scalar> AllocationModels<S> {
    fn check_concave(&self) -> Result<(), AllocationError> {
        if self.utility.risk_aversion < S::zero() {
            return Err(AllocationError::NonConcave("negative risk aversion"));
        }
        if self.cost.marginal_rate < S::zero() {
            return Err(AllocationError::NonConcave("negative marginal verification rate"));
        }
        if self.utility.kind == UtilityKind::LogWealth && !(self.utility.wealth > S::zero()) {
            return Err(AllocationError::NonConcave("non-positive reference wealth"));
        }
        Ok(())
    }
}

/// One candidate for capital: its confidence and complexity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationItem<S> {
    pub strategy: StrategyId,
    pub confidence: S,
    pub complexity: S,
}

/// Physicists' Gauss-Hermite rule (weight `e^{-x^2}`), 64 nodes.
fn gauss_hermite() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        const N: usize = 64;
        const PIM4: f64 = 0.751_125_544_464_942_5;
        let n = N as f64;
        let mut x = [0.0_f64; N];
        let mut w = [0.0_f64; N];
        let mut z = 0.0_f64;
        for i in 0..N.div_ceil(2) {
            z = match i {
                0 => (2.0 * n + 1.0).sqrt() - 1.85575 * (2.0 * n + 1.0).powf(-0.166_666_67),
                1 => z - 1.14 * n.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let (mut p1, mut p2) = (PIM4, 0.0);
                for j in 0..N {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * n).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 3e-14 {
                    break;
                }
            }
            x[i] = z;
            x[N - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[N - 1 - i] = w[i];
        }
        x.iter().copied().zip(w.iter().copied()).collect()
    })
}

/// `E[f(r)]` for `r ~ N(mean, sd^2)` by 64-node Gauss-Hermite quadrature.
fn gaussian_expectation<S: Scalar>(mean: S, sd: S, f: impl Fn(S) -> S) -> S {
    let sqrt2 = S::SQRT_2();
    let total = gauss_hermite()
        .iter()
        .fold(S::zero(), |acc, (x, w)| acc + S::lit(*w) * f(mean + sqrt2 * sd * S::lit(*x)));
    total / S::PI().sqrt()
}

/// Expected utility of allocating `allocation` tokens to the item, net of verification cost.
pub fn expected_net_utility<S: Scalar>(item: &AllocationItem<S>, allocation: S, models: &AllocationModels<S>) -> Result<S, AllocationError> {
    let cost = models.cost.cost(allocation, item.complexity)?;
    Ok(gross_utility(item, allocation, models) - cost)
}

fn gross_utility<S: Scalar>(item: &AllocationItem<S>, a: S, models: &AllocationModels<S>) -> S {
    let mu = models.returns.posterior_mean(item.confidence);
    let sd = models.returns.noise_scale;
    let u = &models.utility;
    match u.kind {
        UtilityKind::Linear => mu * a,
        UtilityKind::MeanVariance => mu * a - u.risk_aversion * sd * sd * a * a / S::lit(2.0),
        UtilityKind::LogWealth => {
            gaussian_expectation(mu, sd, |r| u.wealth * UtilityModel::<S>::safe_ln(S::one() + r * a / u.wealth).0)
        }
    }
}

/// Derivative of [`expected_net_utility`] with respect to the allocation.
pub fn net_utility_gradient<S: Scalar>(item: &AllocationItem<S>, a: S, models: &AllocationModels<S>) -> S {
    let mu = models.returns.posterior_mean(item.confidence);
    let sd = models.returns.noise_scale;
    let u = &models.utility;
    let gross = match u.kind {
        UtilityKind::Linear => mu,
        UtilityKind::MeanVariance => mu - u.risk_aversion * sd * sd * a,
        UtilityKind::LogWealth => {
            gaussian_expectation(mu, sd, |r| r * UtilityModel::<S>::safe_ln(S::one() + r * a / u.wealth).1)
        }
    };
    gross - models.cost.marginal(item.complexity)
}

/// Sum of net utilities of a real allocation vector.
pub fn allocation_objective<S: Scalar>(items: &[AllocationItem<S>], allocation: &[S], models: &AllocationModels<S>) -> S {
    items.iter().zip(allocation).fold(S::zero(), |acc, (it, a)| {
        acc + gross_utility(it, *a, models) - models.cost.base_fee - models.cost.marginal(it.complexity) * *a
    })
}

/// Euclidean projection onto `{x >= 0, sum x = total}`.
pub fn project_to_simplex<S: Scalar>(v: &[S], total: S) -> Vec<S> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite allocation"));
    let mut cumulative = S::zero();
    let mut theta = S::zero();
    for (k, u) in sorted.iter().enumerate() {
        cumulative = cumulative + *u;
        let t = (cumulative - total) / S::from_usize(k + 1).unwrap();
        if *u - t > S::zero() {
            theta = t;
        }
    }
    v.iter().map(|x| (*x - theta).max(S::zero())).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub max_iterations: usize,
    /// Stop once an accepted step moves no coordinate by more than `tolerance * budget`.
    pub tolerance: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { max_iterations: 20_000, tolerance: 1e-13 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationSolution<S> {
    /// Fixed-point allocation; sums to the budget exactly.
    pub amounts: Vec<Amount>,
    /// Real-valued optimiser output, in tokens.
    pub real: Vec<S>,
    /// Objective evaluated at `amounts`.
    pub objective: S,
    pub iterations: usize,
}

/// Maximises total expected net utility subject to spending exactly `budget`. Starts from the
/// uniform split and runs projected gradient ascent with a backtracking step. Rounding to
/// micro-units uses largest remainders, ties going to the lowest strategy id.
pub fn solve_allocation<S: Scalar>(
    budget: Amount,
    items: &[AllocationItem<S>],
    models: &AllocationModels<S>,
) -> Result<AllocationSolution<S>, AllocationError> {
    solve_allocation_with(budget, items, models, SolverSettings::default())
}

pub fn solve_allocation_with<S: Scalar>(
    budget: Amount,
    items: &[AllocationItem<S>],
    models: &AllocationModels<S>,
    settings: SolverSettings,
) -> Result<AllocationSolution<S>, AllocationError> {
    if items.is_empty() {
        return Err(AllocationError::EmptyStrategySet);
    }
    if !budget.is_positive() {
        return Err(AllocationError::NonPositiveBudget);
    }
    models.check_concave()?;
    models.returns.validate()?;

    let total: S = budget.to_real();
    let n = items.len();
    let f = |x: &[S]| allocation_objective(items, x, models);
    let grad = |x: &[S]| -> Vec<S> { items.iter().zip(x).map(|(it, a)| net_utility_gradient(it, *a, models)).collect() };

    let mut x = vec![total / S::from_usize(n).unwrap(); n];
    let mut fx = f(&x);
    let mut step = S::one();
    let tol = S::lit(settings.tolerance) * total;
    let armijo = S::lit(1e-4);
    let mut iterations = 0;
    if n > 1 {
        while iterations < settings.max_iterations {
            iterations += 1;
            let g = grad(&x);
            let gmax = g.iter().fold(S::zero(), |m, v| m.max(v.abs()));
            if gmax == S::zero() {
                break;
            }
            let mut accepted = None;
            for _ in 0..200 {
                let trial: Vec<S> = x.iter().zip(&g).map(|(a, d)| *a + step * *d).collect();
                let y = project_to_simplex(&trial, total);
                let ascent = g.iter().zip(y.iter().zip(&x)).fold(S::zero(), |acc, (d, (yi, xi))| acc + *d * (*yi - *xi));
                let fy = f(&y);
                if fy >= fx + armijo * ascent {
                    accepted = Some((y, fy));
                    break;
                }
                step = step / S::lit(2.0);
            }
            let Some((y, fy)) = accepted else { break };
            let moved = y.iter().zip(&x).fold(S::zero(), |m, (a, b)| m.max((*a - *b).abs()));
            x = y;
            fx = fy;
            step = step * S::lit(2.0);
            if moved <= tol {
                break;
            }
        }
    }

    // largest remainders in strategy-id order so the rounding does not depend on input order
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|i| items[*i].strategy);
    let ordered: Vec<S> = order.iter().map(|i| x[*i]).collect();
    let rounded = apportion_real(budget, &ordered);
    let mut amounts = vec![Amount::ZERO; n];
    for (k, i) in order.iter().enumerate() {
        amounts[*i] = rounded[k];
    }
    let real_rounded: Vec<S> = amounts.iter().map(|a| a.to_real()).collect();
    Ok(AllocationSolution { objective: f(&real_rounded), amounts, real: x, iterations })
}

/// Knobs of the meta-allocation weight `w = confidence * agree_fraction^vote_exponent * g(env)`
/// with `g(env) = max(0, env_intercept + env_slope * env)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaParams<S> {
    pub vote_exponent: S,
    pub env_intercept: S,
    pub env_slope: S,
}

impl<S: Scalar> MetaParams<S> {
    pub fn neutral() -> Self {
        Self { vote_exponent: S::zero(), env_intercept: S::one(), env_slope: S::zero() }
    }

    pub fn env_discount(&self, env: S) -> S {
        (self.env_intercept + self.env_slope * env).max(S::zero())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaInput<S> {
    pub item: AllocationItem<S>,
    pub agree_fraction: S,
    /// Exogenous environment signal, e.g. volatility.
    pub env: S,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaAllocation<S> {
    /// Weight-proportional split of the budget before refinement.
    pub prior: Vec<Amount>,
    pub solution: AllocationSolution<S>,
}

/// Allocates an intention's budget across its Agree-settled instances. Vote-weighted,
/// environment-discounted confidence replaces the raw confidence in the solver.
pub fn meta_allocation<S: Scalar>(
    budget: Amount,
    inputs: &[MetaInput<S>],
    params: &MetaParams<S>,
    models: &AllocationModels<S>,
) -> Result<MetaAllocation<S>, AllocationError> {
    if inputs.is_empty() {
        return Err(AllocationError::NoEligibleInstances);
    }
    let weights: Vec<S> = inputs
        .iter()
        .map(|m| {
            let vote = if params.vote_exponent == S::zero() { S::one() } else { m.agree_fraction.powf(params.vote_exponent) };
            (m.item.confidence * vote * params.env_discount(m.env)).max(S::zero()).min(S::one())
        })
        .collect();
    let prior = if weights.iter().all(|w| *w == S::zero()) {
        apportion_real(budget, &vec![S::one(); weights.len()])
    } else {
        apportion_real(budget, &weights)
    };
    let items: Vec<AllocationItem<S>> =
        inputs.iter().zip(&weights).map(|(m, w)| AllocationItem { confidence: *w, ..m.item }).collect();
    let solution = solve_allocation(budget, &items, models)?;
    Ok(MetaAllocation { prior, solution })
}

/// Myopic rolling-horizon allocation for the current epoch. Only the one-step lookahead is
/// solved, so the discount factor does not affect the result.
pub fn rolling_horizon_step<S: Scalar>(
    budget: Amount,
    items: &[AllocationItem<S>],
    models: &AllocationModels<S>,
    discount: f64,
    lookahead: u32,
) -> Result<AllocationSolution<S>, AllocationError> {
    if !(discount > 0.0 && discount < 1.0) {
        return Err(AllocationError::Discount(discount));
    }
    if lookahead == 0 {
        return Err(AllocationError::Lookahead);
    }
    solve_allocation(budget, items, models)
}

/// Outcome of deploying capital for one period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizedValue<S> {
    pub r: S,
    /// Scalar value `r * allocation`, in tokens.
    pub value: S,
    /// Metric vector: value, volatility proxy, drawdown proxy, liquidity proxy, then zeros.
    pub metrics: Vec<S>,
}

/// Samples one period's return for a strategy of latent `quality` and confidence, and the
/// resulting value vector for `allocation` tokens.
pub fn realized_value<S: Scalar, R: Rng + ?Sized>(
    quality: S,
    item: &AllocationItem<S>,
    allocation: S,
    returns: &ReturnModel<S>,
    dims: usize,
    rng: &mut R,
) -> Result<RealizedValue<S>, AllocationError> {
    if allocation < S::zero() {
        return Err(AllocationError::NegativeAllocation);
    }
    let mean = returns.sampling_mean(quality, item.confidence);
    let z: f64 = rng.sample(StandardNormal);
    let r = mean + returns.noise_scale * S::lit(z);
    let proxies = [
        r * allocation,
        (r - mean).abs() * allocation,
        (-r).max(S::zero()) * allocation,
        allocation / (S::one() + item.complexity),
    ];
    let metrics = (0..dims).map(|j| proxies.get(j).copied().unwrap_or_else(S::zero)).collect();
    Ok(RealizedValue { r, value: r * allocation, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn models(kind: UtilityKind, risk: f64) -> AllocationModels<f64> {
        AllocationModels {
            utility: UtilityModel { kind, risk_aversion: risk, wealth: 1000.0 },
            returns: ReturnModel {
                belief_intercept: -0.05,
                belief_slope: 0.2,
                quality_intercept: -0.05,
                quality_slope: 0.2,
                noise_scale: 0.1,
                confidence_coupling: 0.5,
            },
            cost: VerificationCostModel { base_fee: 1.0, marginal_rate: 0.001, complexity_exponent: 1.0 },
        }
    }

    fn item(id: u32, confidence: f64) -> AllocationItem<f64> {
        AllocationItem { strategy: StrategyId(id), confidence, complexity: 1.0 }
    }

    #[test]
    fn quadrature_rule_moments() {
        let rule = gauss_hermite();
        let w: f64 = rule.iter().map(|(_, w)| w).sum();
        let m2: f64 = rule.iter().map(|(x, w)| w * x * x).sum();
        let pi = std::f64::consts::PI;
        assert!((w - pi.sqrt()).abs() < 1e-12);
        assert!((m2 - pi.sqrt() / 2.0).abs() < 1e-12);
        let e = gaussian_expectation(0.3_f64, 0.2, |r| r * r);
        assert!((e - (0.09 + 0.04)).abs() < 1e-12);
    }

    #[test]
    fn verification_cost_shape() {
        let m = VerificationCostModel { base_fee: 2.0_f64, marginal_rate: 0.5, complexity_exponent: 1.7 };
        assert_eq!(m.cost(0.0, 3.0).unwrap(), 2.0);
        let one = m.cost(10.0, 3.0).unwrap() - 2.0;
        let two = m.cost(20.0, 3.0).unwrap() - 2.0;
        assert!((two - 2.0 * one).abs() < 1e-12);
        let flat = VerificationCostModel { base_fee: 2.0, marginal_rate: 0.0, complexity_exponent: 1.0 };
        assert_eq!(flat.cost(1e6, 5.0).unwrap(), 2.0);
        assert_eq!(m.cost(-1.0, 1.0), Err(AllocationError::NegativeAllocation));
    }

    #[test]
    fn linear_net_utility() {
        let mut m = models(UtilityKind::Linear, 0.0);
        m.cost = VerificationCostModel { base_fee: 5.0, marginal_rate: 0.0, complexity_exponent: 1.0 };
        // posterior mean -0.05 + 0.2 * 0.75 = 0.1
        let it = item(0, 0.75);
        assert!((expected_net_utility(&it, 100.0, &m).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(expected_net_utility(&it, 0.0, &m).unwrap(), -5.0);
        let mv = AllocationModels { utility: UtilityModel { kind: UtilityKind::MeanVariance, ..m.utility }, ..m };
        assert_eq!(expected_net_utility(&it, 100.0, &mv).unwrap(), expected_net_utility(&it, 100.0, &m).unwrap());
    }

    #[test]
    fn projection_lands_on_simplex() {
        let p = project_to_simplex(&[3.0_f64, -1.0, 0.5], 2.0);
        assert!((p.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        assert!(p.iter().all(|x| *x >= 0.0));
        assert_eq!(project_to_simplex(&[1.0_f64, 1.0], 2.0), vec![1.0, 1.0]);
    }

    #[test]
    fn symmetric_and_single_instances() {
        for kind in [UtilityKind::Linear, UtilityKind::MeanVariance, UtilityKind::LogWealth] {
            let m = models(kind, 0.5);
            let s = solve_allocation(Amount::tokens(100), &[item(0, 0.7), item(1, 0.7)], &m).unwrap();
            assert_eq!(s.amounts, vec![Amount::tokens(50), Amount::tokens(50)], "{kind:?}");
            let s = solve_allocation(Amount::tokens(100), &[item(0, 0.2)], &m).unwrap();
            assert_eq!(s.amounts, vec![Amount::tokens(100)]);
        }
        let m = models(UtilityKind::Linear, 0.0);
        assert_eq!(solve_allocation(Amount::tokens(1), &[], &m).unwrap_err(), AllocationError::EmptyStrategySet);
        let mut bad = m;
        bad.utility.risk_aversion = -1.0;
        assert!(matches!(solve_allocation(Amount::tokens(1), &[item(0, 0.5)], &bad), Err(AllocationError::NonConcave(_))));
    }

    #[test]
    fn meta_allocation_rules() {
        let m = models(UtilityKind::MeanVariance, 0.001);
        let params = MetaParams { vote_exponent: 1.0, env_intercept: 1.0, env_slope: 0.0 };
        let one = [MetaInput { item: item(0, 0.8), agree_fraction: 0.9, env: 0.0 }];
        let r = meta_allocation(Amount::tokens(500), &one, &params, &m).unwrap();
        assert_eq!(r.solution.amounts, vec![Amount::tokens(500)]);

        let two = [
            MetaInput { item: item(0, 0.8), agree_fraction: 0.9, env: 0.0 },
            MetaInput { item: item(1, 0.8), agree_fraction: 0.6, env: 0.0 },
        ];
        let r = meta_allocation(Amount::tokens(500), &two, &params, &m).unwrap();
        assert!(r.solution.amounts[0] > r.solution.amounts[1]);
        assert!(r.prior[0] > r.prior[1]);

        let neutral = meta_allocation(Amount::tokens(500), &two, &MetaParams::neutral(), &m).unwrap();
        let direct = solve_allocation(Amount::tokens(500), &[item(0, 0.8), item(1, 0.8)], &m).unwrap();
        assert_eq!(neutral.solution, direct);
        assert_eq!(meta_allocation(Amount::tokens(1), &[], &params, &m).unwrap_err(), AllocationError::NoEligibleInstances);
    }

    #[test]
    fn rolling_horizon_is_myopic() {
        let m = models(UtilityKind::MeanVariance, 0.002);
        let items = [item(0, 0.9), item(1, 0.4), item(2, 0.6)];
        let a = rolling_horizon_step(Amount::tokens(100), &items, &m, 0.99, 1).unwrap();
        let b = rolling_horizon_step(Amount::tokens(100), &items, &m, 0.5, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, solve_allocation(Amount::tokens(100), &items, &m).unwrap());
        assert_eq!(rolling_horizon_step(Amount::tokens(100), &items, &m, 1.0, 1).unwrap_err(), AllocationError::Discount(1.0));
        assert_eq!(rolling_horizon_step(Amount::tokens(100), &items, &m, 0.9, 0).unwrap_err(), AllocationError::Lookahead);
    }

    #[test]
    fn realized_value_degenerate_cases() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut r = models(UtilityKind::Linear, 0.0).returns;
        let it = item(0, 0.5);
        let v = realized_value(0.7, &it, 0.0, &r, 4, &mut rng).unwrap();
        assert!(v.metrics.iter().all(|x| *x == 0.0));
        r.noise_scale = 0.0;
        r.confidence_coupling = 0.0;
        let v = realized_value(0.7, &it, 10.0, &r, 4, &mut rng).unwrap();
        assert_eq!(v.r, r.mean_given_quality(0.7));
        assert_eq!(realized_value(0.7, &it, 10.0, &r, 6, &mut rng).unwrap().metrics.len(), 6);
    }
}
