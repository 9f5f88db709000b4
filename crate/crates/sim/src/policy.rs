//! Agent behaviour. Policies see redacted observations: latent quality and ground truth are
//! reachable only through noisy or accuracy-limited probes, never directly.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use stratval_core::allocation::ReturnModel;
use stratval_core::markets::Side;
use stratval_core::model::StrategyView;
use stratval_core::{Amount, InstanceId};

fn truth_side(quality: f64) -> Side {
    if quality >= 0.5 {
        Side::Agree
    } else {
        Side::Disagree
    }
}

/// What a verifier sees about one open market.
pub struct VoteObservation<'a> {
    pub instance: InstanceId,
    pub strategy: &'a StrategyView,
    pub confidence: f64,
    pub free_supra: Amount,
    quality: f64,
}

impl<'a> VoteObservation<'a> {
    pub fn new(instance: InstanceId, strategy: &'a StrategyView, confidence: f64, free_supra: Amount, quality: f64) -> Self {
        Self { instance, strategy, confidence, free_supra, quality }
    }

    /// Latent quality plus Gaussian noise of the given standard deviation.
    pub fn private_signal(&self, noise: f64, rng: &mut ChaCha8Rng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.quality + noise * z
    }
}

/// What a deep searcher or arbitrator sees about a resolved or escalated market.
pub struct ResolutionObservation {
    pub instance: InstanceId,
    pub confidence: f64,
    /// The resolution under challenge, if any.
    pub current: Option<Side>,
    quality: f64,
}

impl ResolutionObservation {
    pub fn new(instance: InstanceId, confidence: f64, current: Option<Side>, quality: f64) -> Self {
        Self { instance, confidence, current, quality }
    }

    /// Investigates the claim: the true side with probability `accuracy`, otherwise the other.
    pub fn investigate(&self, accuracy: f64, rng: &mut ChaCha8Rng) -> Side {
        let truth = truth_side(self.quality);
        if rng.random_bool(accuracy) {
            truth
        } else {
            !truth
        }
    }
}

pub trait VerifierPolicy: Send {
    /// Side and SUPRA amount to commit, or `None` to pass this epoch.
    fn vote(&mut self, obs: &VoteObservation<'_>, rng: &mut ChaCha8Rng) -> Option<(Side, Amount)>;
}

pub struct HonestVerifier {
    pub noise: f64,
    pub stake: Amount,
    pub vote_probability: f64,
}

impl VerifierPolicy for HonestVerifier {
    fn vote(&mut self, obs: &VoteObservation<'_>, rng: &mut ChaCha8Rng) -> Option<(Side, Amount)> {
        if !rng.random_bool(self.vote_probability) {
            return None;
        }
        let signal = obs.private_signal(self.noise, rng);
        let side = if signal > 0.5 { Side::Agree } else { Side::Disagree };
        let amount = self.stake.min(obs.free_supra);
        amount.is_positive().then_some((side, amount))
    }
}

/// Honest when it votes, but skips each market with probability `abstain`.
pub struct LazyVerifier {
    pub abstain: f64,
    pub inner: HonestVerifier,
}

impl VerifierPolicy for LazyVerifier {
    fn vote(&mut self, obs: &VoteObservation<'_>, rng: &mut ChaCha8Rng) -> Option<(Side, Amount)> {
        if rng.random_bool(self.abstain) {
            return None;
        }
        self.inner.vote(obs, rng)
    }
}

/// A strategy a proposer intends to submit; the quality stays private to the engine.
#[derive(Clone, Debug, PartialEq)]
pub struct StrategyDraft {
    pub quality: f64,
    pub complexity: f64,
    pub metrics: Vec<f64>,
}

pub trait ProposerPolicy: Send {
    fn draft(&mut self, rng: &mut ChaCha8Rng) -> StrategyDraft;
}

/// Shared shape of reported metrics: expected return, volatility, drawdown and liquidity
/// proxies, then zeros up to `dims`.
fn metrics_for(claimed_quality: f64, complexity: f64, returns: &ReturnModel<f64>, noise: f64, dims: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let z: f64 = rng.sample(StandardNormal);
    let mean = returns.mean_given_quality(claimed_quality) + noise * z;
    let mut m = vec![mean, returns.noise_scale, (returns.noise_scale - mean).max(0.0), 1.0 / (1.0 + complexity)];
    m.resize(dims.max(4), 0.0);
    m
}

pub struct HonestProposer {
    pub quality_range: (f64, f64),
    pub complexity_range: (f64, f64),
    pub metric_noise: f64,
    pub returns: ReturnModel<f64>,
    pub dims: usize,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

impl ProposerPolicy for HonestProposer {
    fn draft(&mut self, rng: &mut ChaCha8Rng) -> StrategyDraft {
        let quality = uniform(rng, self.quality_range);
        let complexity = uniform(rng, self.complexity_range);
        let metrics = metrics_for(quality, complexity, &self.returns, self.metric_noise, self.dims, rng);
        StrategyDraft { quality, complexity, metrics }
    }
}

/// Submits strategies below the fraud threshold while reporting inflated metrics.
pub struct AdversarialProposer {
    pub fraud_threshold: f64,
    pub inflation: f64,
    pub complexity_range: (f64, f64),
    pub metric_noise: f64,
    pub returns: ReturnModel<f64>,
    pub dims: usize,
}

impl ProposerPolicy for AdversarialProposer {
    fn draft(&mut self, rng: &mut ChaCha8Rng) -> StrategyDraft {
        let quality = uniform(rng, (0.0, self.fraud_threshold));
        let complexity = uniform(rng, self.complexity_range);
        let claimed = (quality + self.inflation).min(1.0);
        let metrics = metrics_for(claimed, complexity, &self.returns, self.metric_noise, self.dims, rng);
        StrategyDraft { quality, complexity, metrics }
    }
}

pub trait SearcherPolicy: Send {
    fn resolve(&mut self, obs: &ResolutionObservation, rng: &mut ChaCha8Rng) -> Side;
}

pub struct DeepSearcher {
    pub accuracy: f64,
}

impl SearcherPolicy for DeepSearcher {
    fn resolve(&mut self, obs: &ResolutionObservation, rng: &mut ChaCha8Rng) -> Side {
        obs.investigate(self.accuracy, rng)
    }
}

pub trait ArbitratorPolicy: Send {
    fn challenge(&mut self, obs: &ResolutionObservation, rng: &mut ChaCha8Rng) -> bool;
}

/// Challenges with probability `propensity` when its own investigation disagrees with the
/// resolution.
pub struct Arbitrator {
    pub accuracy: f64,
    pub propensity: f64,
}

impl ArbitratorPolicy for Arbitrator {
    fn challenge(&mut self, obs: &ResolutionObservation, rng: &mut ChaCha8Rng) -> bool {
        let Some(current) = obs.current else { return false };
        let own = obs.investigate(self.accuracy, rng);
        own != current && rng.random_bool(self.propensity)
    }
}
