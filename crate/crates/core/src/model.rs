//! Domain types shared across the protocol: agents, strategies, intentions, the epoch clock
//! and intention predicate evaluation.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Amount;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    CapitalOwner,
    Proposer,
    Verifier,
    DeepSearcher,
    Arbitrator,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "agent:{}", self.0)
    }
}

/// A participant. The role is fixed when the agent is created.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agent {
    pub id: AgentId,
    pub role: Role,
}

impl Agent {
    pub fn new(id: AgentId, role: Role) -> Self {
        Self { id, role }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StrategyId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntentionId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstanceId(pub u32);

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "strategy:{}", self.0)
    }
}

impl fmt::Display for IntentionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "intention:{}", self.0)
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "instance:{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("predicate references metric {index} but the metric vector has {len} entries")]
    MetricIndexOutOfRange { index: usize, len: usize },
    #[error("collateral {collateral} is below the minimum {minimum}")]
    CollateralBelowMinimum { collateral: Amount, minimum: Amount },
    #[error("complexity must be positive, got {0}")]
    NonPositiveComplexity(f64),
    #[error("true quality must lie in [0, 1], got {0}")]
    QualityOutOfRange(f64),
    #[error("intention deposit must be positive")]
    NonPositiveDeposit,
    #[error("intention alpha burn must be positive")]
    NonPositiveBurn,
    #[error("readjustment cadence must be at least one epoch")]
    ZeroCadence,
    #[error("majority threshold must exceed 0.5 and be at most 1, got {0}")]
    MajorityThreshold(f64),
    #[error("divergence tolerance must be non-negative, got {0}")]
    NegativeDivergence(f64),
    #[error("phase interval lengths must be positive")]
    ZeroInterval,
}

/// Lifecycle phases, cycled in declaration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Proposal,
    Assessment,
    Rebalancing,
    Withdrawal,
}

impl Phase {
    pub const CYCLE: [Phase; 4] = [Phase::Proposal, Phase::Assessment, Phase::Rebalancing, Phase::Withdrawal];

    pub fn next(self) -> Phase {
        match self {
            Phase::Proposal => Phase::Assessment,
            Phase::Assessment => Phase::Rebalancing,
            Phase::Rebalancing => Phase::Withdrawal,
            Phase::Withdrawal => Phase::Proposal,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Number of epochs each phase lasts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalLengths {
    pub proposal: u64,
    pub assessment: u64,
    pub rebalancing: u64,
    pub withdrawal: u64,
}

impl IntervalLengths {
    pub fn new(proposal: u64, assessment: u64, rebalancing: u64, withdrawal: u64) -> Result<Self, ModelError> {
        let lens = Self { proposal, assessment, rebalancing, withdrawal };
        if lens.as_array().contains(&0) {
            return Err(ModelError::ZeroInterval);
        }
        Ok(lens)
    }

    pub fn get(&self, phase: Phase) -> u64 {
        self.as_array()[phase.index()]
    }

    pub fn cycle_len(&self) -> u64 {
        self.as_array().iter().sum()
    }

    fn as_array(&self) -> [u64; 4] {
        [self.proposal, self.assessment, self.rebalancing, self.withdrawal]
    }
}

impl Default for IntervalLengths {
    fn default() -> Self {
        Self { proposal: 1, assessment: 2, rebalancing: 1, withdrawal: 2 }
    }
}

/// Epoch counter plus the lifecycle phase it falls in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochClock {
    pub epoch: u64,
    pub phase: Phase,
    /// Epochs already spent in the current phase, including the current one.
    pub elapsed_in_phase: u64,
    pub intervals: IntervalLengths,
}

impl EpochClock {
    pub fn new(intervals: IntervalLengths) -> Self {
        Self { epoch: 0, phase: Phase::Proposal, elapsed_in_phase: 1, intervals }
    }

    /// Clock positioned at an arbitrary epoch; the phase follows from the cycle.
    pub fn at(intervals: IntervalLengths, epoch: u64) -> Self {
        let mut offset = epoch % intervals.cycle_len();
        let mut phase = Phase::Proposal;
        while offset >= intervals.get(phase) {
            offset -= intervals.get(phase);
            phase = phase.next();
        }
        Self { epoch, phase, elapsed_in_phase: offset + 1, intervals }
    }

    pub fn is_first_epoch_of_phase(&self) -> bool {
        self.elapsed_in_phase == 1
    }

    pub fn is_last_epoch_of_phase(&self) -> bool {
        self.elapsed_in_phase == self.intervals.get(self.phase)
    }
}

/// Moves the clock forward one epoch, switching phase once the current interval is used up.
pub fn advance_epoch(clock: EpochClock) -> EpochClock {
    let mut next = clock;
    next.epoch += 1;
    if clock.elapsed_in_phase >= clock.intervals.get(clock.phase) {
        next.phase = clock.phase.next();
        next.elapsed_in_phase = 1;
    } else {
        next.elapsed_in_phase += 1;
    }
    next
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

/// Single-metric threshold rule: `metrics[metric] <cmp> threshold`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub metric: usize,
    pub cmp: Comparison,
    pub threshold: f64,
}

impl Predicate {
    pub fn new(metric: usize, cmp: Comparison, threshold: f64) -> Self {
        Self { metric, cmp, threshold }
    }
}

pub fn evaluate_predicate(predicate: &Predicate, metrics: &[f64]) -> Result<bool, ModelError> {
    let value = *metrics
        .get(predicate.metric)
        .ok_or(ModelError::MetricIndexOutOfRange { index: predicate.metric, len: metrics.len() })?;
    let t = predicate.threshold;
    Ok(match predicate.cmp {
        Comparison::Lt => value < t,
        Comparison::Le => value <= t,
        Comparison::Gt => value > t,
        Comparison::Ge => value >= t,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Goal {
    Maximize,
    Minimize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionCriteria {
    pub majority_threshold: f64,
    pub divergence_tolerance: Option<f64>,
    pub require_deep_searcher: bool,
}

impl DecisionCriteria {
    pub fn new(
        majority_threshold: f64,
        divergence_tolerance: Option<f64>,
        require_deep_searcher: bool,
    ) -> Result<Self, ModelError> {
        if !(majority_threshold > 0.5 && majority_threshold <= 1.0) {
            return Err(ModelError::MajorityThreshold(majority_threshold));
        }
        if let Some(d) = divergence_tolerance {
            if !(d >= 0.0) {
                return Err(ModelError::NegativeDivergence(d));
            }
        }
        Ok(Self { majority_threshold, divergence_tolerance, require_deep_searcher })
    }
}

/// A capital owner's declared intention: filtering predicates, the metric/goal pair used for
/// allocation, the reassessment cadence and the decision criteria.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntentionSpec {
    pub id: IntentionId,
    pub owner: AgentId,
    pub predicates: Vec<Predicate>,
    pub metric_index: usize,
    pub goal: Goal,
    pub readjust_every: u64,
    pub criteria: DecisionCriteria,
    pub deposit: Amount,
    pub alpha_burn: Amount,
}

impl IntentionSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.deposit.is_positive() {
            return Err(ModelError::NonPositiveDeposit);
        }
        if !self.alpha_burn.is_positive() {
            return Err(ModelError::NonPositiveBurn);
        }
        if self.readjust_every == 0 {
            return Err(ModelError::ZeroCadence);
        }
        DecisionCriteria::new(
            self.criteria.majority_threshold,
            self.criteria.divergence_tolerance,
            self.criteria.require_deep_searcher,
        )?;
        Ok(())
    }
}

/// A submitted strategy. `true_quality` is simulation ground truth; agent policies only ever
/// see a [`StrategyView`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyProposal {
    pub id: StrategyId,
    pub proposer: AgentId,
    pub collateral: Amount,
    pub complexity: f64,
    pub metrics_profile: Vec<f64>,
    true_quality: f64,
    pub linked_intentions: BTreeSet<IntentionId>,
}

impl StrategyProposal {
    pub fn new(
        id: StrategyId,
        proposer: AgentId,
        collateral: Amount,
        complexity: f64,
        metrics_profile: Vec<f64>,
        true_quality: f64,
        min_collateral: Amount,
    ) -> Result<Self, ModelError> {
        if collateral < min_collateral {
            return Err(ModelError::CollateralBelowMinimum { collateral, minimum: min_collateral });
        }
        if !(complexity > 0.0) {
            return Err(ModelError::NonPositiveComplexity(complexity));
        }
        if !(0.0..=1.0).contains(&true_quality) {
            return Err(ModelError::QualityOutOfRange(true_quality));
        }
        Ok(Self {
            id,
            proposer,
            collateral,
            complexity,
            metrics_profile,
            true_quality,
            linked_intentions: BTreeSet::new(),
        })
    }

    /// Latent quality. Reserved for the outcome sampler, audit oracle and metrics reporter.
    pub fn true_quality(&self) -> f64 {
        self.true_quality
    }

    pub fn view(&self) -> StrategyView {
        StrategyView {
            id: self.id,
            proposer: self.proposer,
            collateral: self.collateral,
            complexity: self.complexity,
            metrics_profile: self.metrics_profile.clone(),
        }
    }
}

/// What agent policies are allowed to observe about a strategy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyView {
    pub id: StrategyId,
    pub proposer: AgentId,
    pub collateral: Amount,
    pub complexity: f64,
    pub metrics_profile: Vec<f64>,
}

/// Ids of the strategies whose metrics satisfy every predicate of the intention, in input order.
pub fn filter_strategies(intention: &IntentionSpec, strategies: &[StrategyProposal]) -> Vec<StrategyId> {
    strategies
        .iter()
        .filter(|s| passes_predicates(&intention.predicates, &s.metrics_profile))
        .map(|s| s.id)
        .collect()
}

/// Conjunction of the predicates; a predicate whose metric index is out of range fails.
pub fn passes_predicates(predicates: &[Predicate], metrics: &[f64]) -> bool {
    predicates.iter().all(|p| evaluate_predicate(p, metrics).unwrap_or(false))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(metric: usize, cmp: Comparison, threshold: f64) -> Predicate {
        Predicate::new(metric, cmp, threshold)
    }

    #[test]
    fn predicate_boundaries() {
        let lt = rule(0, Comparison::Lt, 0.05);
        assert!(evaluate_predicate(&lt, &[0.03, 1.0]).unwrap());
        assert!(!evaluate_predicate(&lt, &[0.05, 1.0]).unwrap());
        let ge = rule(1, Comparison::Ge, 0.10);
        assert!(evaluate_predicate(&ge, &[0.0, 0.10]).unwrap());
        let le = rule(0, Comparison::Le, 0.05);
        assert!(evaluate_predicate(&le, &[0.05]).unwrap());
        let gt = rule(0, Comparison::Gt, 0.05);
        assert!(!evaluate_predicate(&gt, &[0.05]).unwrap());
    }

    #[test]
    fn predicate_index_out_of_range() {
        let r = rule(4, Comparison::Lt, 1.0);
        assert_eq!(
            evaluate_predicate(&r, &[0.0; 4]),
            Err(ModelError::MetricIndexOutOfRange { index: 4, len: 4 })
        );
    }

    fn strategy(id: u32, metrics: Vec<f64>) -> StrategyProposal {
        StrategyProposal::new(StrategyId(id), AgentId(0), Amount::tokens(100), 1.0, metrics, 0.5, Amount::tokens(100))
            .unwrap()
    }

    fn intention(predicates: Vec<Predicate>) -> IntentionSpec {
        IntentionSpec {
            id: IntentionId(0),
            owner: AgentId(9),
            predicates,
            metric_index: 0,
            goal: Goal::Maximize,
            readjust_every: 1,
            criteria: DecisionCriteria::new(0.7, None, false).unwrap(),
            deposit: Amount::tokens(1000),
            alpha_burn: Amount::tokens(1),
        }
    }

    #[test]
    fn filter_keeps_order_and_matches() {
        let s = vec![strategy(1, vec![0.2]), strategy(2, vec![0.01]), strategy(3, vec![0.3])];
        let i = intention(vec![rule(0, Comparison::Gt, 0.1)]);
        assert_eq!(filter_strategies(&i, &s), vec![StrategyId(1), StrategyId(3)]);
        assert_eq!(filter_strategies(&intention(vec![]), &s).len(), 3);
        let none = intention(vec![rule(0, Comparison::Gt, 5.0)]);
        assert!(filter_strategies(&none, &s).is_empty());
    }

    #[test]
    fn clock_transitions() {
        let lens = IntervalLengths::new(2, 1, 1, 1).unwrap();
        let c0 = EpochClock::new(lens);
        let c1 = advance_epoch(c0);
        assert_eq!((c1.epoch, c1.phase), (1, Phase::Proposal));
        let c2 = advance_epoch(c1);
        assert_eq!((c2.epoch, c2.phase), (2, Phase::Assessment));
        let c4 = advance_epoch(advance_epoch(c2));
        assert_eq!(c4.phase, Phase::Withdrawal);
        let c5 = advance_epoch(c4);
        assert_eq!((c5.epoch, c5.phase), (5, Phase::Proposal));
        assert_eq!(EpochClock::at(lens, 5), c5);
        assert_eq!(EpochClock::at(lens, 4), c4);
    }

    #[test]
    fn constructors_enforce_invariants() {
        assert!(DecisionCriteria::new(0.4, None, false).is_err());
        assert!(DecisionCriteria::new(0.5, None, false).is_err());
        assert!(DecisionCriteria::new(1.0, Some(0.1), false).is_ok());
        assert!(IntervalLengths::new(1, 0, 1, 1).is_err());
        let low = StrategyProposal::new(StrategyId(0), AgentId(0), Amount::tokens(99), 1.0, vec![], 0.5, Amount::tokens(100));
        assert!(matches!(low, Err(ModelError::CollateralBelowMinimum { .. })));
        let mut i = intention(vec![]);
        assert!(i.validate().is_ok());
        i.alpha_burn = Amount::ZERO;
        assert_eq!(i.validate(), Err(ModelError::NonPositiveBurn));
    }
}
