//! Scenario files: nested TOML sections, unknown keys rejected, every range checked at load.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use stratval_core::allocation::{
    AllocationModels, MetaParams, ReturnModel, UtilityKind, UtilityModel, VerificationCostModel,
};
use stratval_core::model::{DecisionCriteria, IntervalLengths};
use stratval_core::tokens::Ppm;
use stratval_core::waterfall::{Mechanism, WaterfallParams};
use stratval_core::Amount;
use thiserror::Error;

/// One problem found in a scenario file, located by its dotted field path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("invalid scenario:\n{}", .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<ConfigIssue>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub name: String,
    /// Horizon in epochs.
    pub epochs: u64,
    /// Welfare discount factor.
    pub discount: f64,
    pub metric_dims: usize,
    /// Ledger snapshot interval in epochs; 0 disables snapshots.
    pub snapshot_every: u64,
    pub intervals: Intervals,
    pub population: Population,
    pub proposers: ProposerConfig,
    pub verifiers: VerifierConfig,
    pub deep_searchers: SearcherConfig,
    pub arbitrators: ArbitratorConfig,
    pub market: MarketConfig,
    pub audit: AuditConfig,
    pub tokens: TokenConfig,
    pub genesis: GenesisConfig,
    pub intentions: IntentionConfig,
    pub allocation: AllocationConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Intervals {
    pub proposal: u64,
    pub assessment: u64,
    pub rebalancing: u64,
    pub withdrawal: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Population {
    pub capital_owners: u32,
    pub honest_proposers: u32,
    pub adversarial_proposers: u32,
    pub verifiers: u32,
    pub lazy_verifiers: u32,
    pub deep_searchers: u32,
    pub arbitrators: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProposerConfig {
    pub strategies_per_cycle: u32,
    /// Number of cycles in which proposers submit; 0 means every cycle.
    pub active_cycles: u64,
    pub collateral: f64,
    pub complexity_min: f64,
    pub complexity_max: f64,
    pub honest_quality_min: f64,
    pub honest_quality_max: f64,
    /// Noise on the reported expected-return metric.
    pub metric_noise: f64,
    /// Quality uplift adversarial proposers claim in their metrics.
    pub adversarial_inflation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifierConfig {
    /// Standard deviation of the private quality signal.
    pub noise: f64,
    pub stake: f64,
    /// Chance of voting in a given Assessment epoch, until the vote is cast.
    pub vote_probability: f64,
    /// Lazy verifiers skip a market with this probability.
    pub lazy_abstain: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearcherConfig {
    pub accuracy: f64,
    pub stake: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArbitratorConfig {
    pub accuracy: f64,
    pub propensity: f64,
    pub stake: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    Parimutuel,
    Lmsr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarketConfig {
    pub mechanism: MechanismKind,
    pub liquidity: f64,
    pub majority_threshold: f64,
    pub divergence_tolerance: Option<f64>,
    pub divergence_window: usize,
    pub require_deep_searcher: bool,
    pub min_community_votes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditConfig {
    pub rate: f64,
    pub gas_fee: f64,
    pub reward_coeff: f64,
    pub detection_accuracy: f64,
    pub fraud_threshold: f64,
    pub auditors_per_audit: usize,
    pub min_reputation: f64,
    /// Fraction of the fee pool moved to the lottery pool each epoch.
    pub lottery_topup: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenConfig {
    pub fee_rate: f64,
    pub commission_rate: f64,
    pub commission_diverted: f64,
    pub min_collateral: f64,
    pub min_searcher_stake: f64,
    pub min_arbitration_stake: f64,
    pub arbitration_window: u64,
    pub min_arbitrator_participation: u32,
    pub reputation_floor: f64,
    pub verifier_reward: f64,
    pub reward_reputation_scale: f64,
    pub searcher_reward: f64,
    pub arbitrator_reward: f64,
    /// Per-epoch decay rate of free Alpha; 0 disables decay.
    pub alpha_decay: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenesisConfig {
    pub supra_per_agent: f64,
    pub alpha_per_agent: f64,
    pub capital_owner_supra: f64,
    pub lottery_pool: f64,
    pub subsidy_pool: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntentionConfig {
    pub per_owner: u32,
    pub deposit: f64,
    pub alpha_burn: f64,
    pub readjust_every: u64,
    /// Strategies must report an expected return above this value.
    pub min_expected_return: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityName {
    Linear,
    LogWealth,
    MeanVariance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AllocationConfig {
    pub utility: UtilityName,
    pub risk_aversion: f64,
    pub wealth: f64,
    pub belief_intercept: f64,
    pub belief_slope: f64,
    pub quality_intercept: f64,
    pub quality_slope: f64,
    pub noise_scale: f64,
    pub confidence_coupling: f64,
    pub base_fee: f64,
    pub marginal_rate: f64,
    pub complexity_exponent: f64,
    pub vote_exponent: f64,
    pub env_intercept: f64,
    pub env_slope: f64,
    /// Share of each intention's deposit that is deployed.
    pub budget_fraction: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "default".into(),
            epochs: 60,
            discount: 0.95,
            metric_dims: 4,
            snapshot_every: 0,
            intervals: Intervals::default(),
            population: Population::default(),
            proposers: ProposerConfig::default(),
            verifiers: VerifierConfig::default(),
            deep_searchers: SearcherConfig::default(),
            arbitrators: ArbitratorConfig::default(),
            market: MarketConfig::default(),
            audit: AuditConfig::default(),
            tokens: TokenConfig::default(),
            genesis: GenesisConfig::default(),
            intentions: IntentionConfig::default(),
            allocation: AllocationConfig::default(),
        }
    }
}

impl Default for Intervals {
    fn default() -> Self {
        Self { proposal: 1, assessment: 2, rebalancing: 1, withdrawal: 2 }
    }
}

impl Default for Population {
    fn default() -> Self {
        Self {
            capital_owners: 2,
            honest_proposers: 4,
            adversarial_proposers: 1,
            verifiers: 10,
            lazy_verifiers: 0,
            deep_searchers: 2,
            arbitrators: 1,
        }
    }
}

impl Default for ProposerConfig {
    fn default() -> Self {
        Self {
            strategies_per_cycle: 1,
            active_cycles: 0,
            collateral: 100.0,
            complexity_min: 0.5,
            complexity_max: 2.0,
            honest_quality_min: 0.0,
            honest_quality_max: 1.0,
            metric_noise: 0.02,
            adversarial_inflation: 0.5,
        }
    }
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self { noise: 0.1, stake: 30.0, vote_probability: 1.0, lazy_abstain: 0.5 }
    }
}

impl Default for SearcherConfig {
    fn default() -> Self {
        Self { accuracy: 0.9, stake: 50.0 }
    }
}

impl Default for ArbitratorConfig {
    fn default() -> Self {
        Self { accuracy: 0.95, propensity: 0.5, stake: 100.0 }
    }
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            mechanism: MechanismKind::Parimutuel,
            liquidity: 100.0,
            majority_threshold: 0.7,
            divergence_tolerance: None,
            divergence_window: 5,
            require_deep_searcher: false,
            min_community_votes: 1,
        }
    }
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            rate: 0.05,
            gas_fee: 1.0,
            reward_coeff: 0.01,
            detection_accuracy: 0.95,
            fraud_threshold: 0.3,
            auditors_per_audit: 3,
            min_reputation: 0.0,
            lottery_topup: 0.5,
        }
    }
}

impl Default for TokenConfig {
    fn default() -> Self {
        Self {
            fee_rate: 0.01,
            commission_rate: 0.1,
            commission_diverted: 0.2,
            min_collateral: 100.0,
            min_searcher_stake: 50.0,
            min_arbitration_stake: 100.0,
            arbitration_window: 2,
            min_arbitrator_participation: 0,
            reputation_floor: 0.0,
            verifier_reward: 1.0,
            reward_reputation_scale: 0.0,
            searcher_reward: 2.0,
            arbitrator_reward: 2.0,
            alpha_decay: 0.0,
        }
    }
}

impl Default for GenesisConfig {
    fn default() -> Self {
        Self {
            supra_per_agent: 10_000.0,
            alpha_per_agent: 200.0,
            capital_owner_supra: 100_000.0,
            lottery_pool: 5_000.0,
            subsidy_pool: 5_000.0,
        }
    }
}

impl Default for IntentionConfig {
    fn default() -> Self {
        Self { per_owner: 1, deposit: 10_000.0, alpha_burn: 10.0, readjust_every: 6, min_expected_return: -1.0 }
    }
}

impl Default for AllocationConfig {
    fn default() -> Self {
        Self {
            utility: UtilityName::MeanVariance,
            risk_aversion: 0.01,
            wealth: 10_000.0,
            belief_intercept: -0.05,
            belief_slope: 0.2,
            quality_intercept: -0.05,
            quality_slope: 0.2,
            noise_scale: 0.1,
            confidence_coupling: 0.0,
            base_fee: 0.0,
            marginal_rate: 0.001,
            complexity_exponent: 1.0,
            vote_exponent: 0.0,
            env_intercept: 1.0,
            env_slope: 0.0,
            budget_fraction: 1.0,
        }
    }
}

struct Checker {
    issues: Vec<ConfigIssue>,
}

impl Checker {
    fn fail(&mut self, path: &str, message: impl Into<String>) {
        self.issues.push(ConfigIssue { path: path.into(), message: message.into() });
    }

    fn positive(&mut self, path: &str, v: f64) {
        if !(v > 0.0 && v.is_finite()) {
            self.fail(path, format!("must be positive, got {v}"));
        }
    }

    fn non_negative(&mut self, path: &str, v: f64) {
        if !(v >= 0.0 && v.is_finite()) {
            self.fail(path, format!("must be non-negative, got {v}"));
        }
    }

    fn probability(&mut self, path: &str, v: f64) {
        if !(0.0..=1.0).contains(&v) {
            self.fail(path, format!("must lie in [0, 1], got {v}"));
        }
    }

    fn finite(&mut self, path: &str, v: f64) {
        if !v.is_finite() {
            self.fail(path, format!("must be finite, got {v}"));
        }
    }

    /// Token amounts must fit the micro-unit range comfortably.
    fn tokens(&mut self, path: &str, v: f64) {
        if !(0.0..=1e12).contains(&v) {
            self.fail(path, format!("must be a token amount in [0, 1e12], got {v}"));
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text).map_err(|e| match e {
            ScenarioError::Parse(msg) => ScenarioError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Every violated constraint, each with its field path.
    pub fn issues(&self) -> Vec<ConfigIssue> {
        let mut c = Checker { issues: Vec::new() };
        if self.epochs == 0 {
            c.fail("epochs", "must be at least 1");
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            c.fail("discount", format!("must lie in (0, 1), got {}", self.discount));
        }
        if self.metric_dims < 4 {
            c.fail("metric_dims", format!("must be at least 4, got {}", self.metric_dims));
        }
        let iv = &self.intervals;
        for (name, v) in [("proposal", iv.proposal), ("assessment", iv.assessment), ("rebalancing", iv.rebalancing), ("withdrawal", iv.withdrawal)] {
            if v == 0 {
                c.fail(&format!("intervals.{name}"), "must be at least 1 epoch");
            }
        }

        let p = &self.proposers;
        c.tokens("proposers.collateral", p.collateral);
        if p.collateral < self.tokens.min_collateral {
            c.fail("proposers.collateral", format!("must be at least tokens.min_collateral ({})", self.tokens.min_collateral));
        }
        c.positive("proposers.complexity_min", p.complexity_min);
        if p.complexity_max < p.complexity_min {
            c.fail("proposers.complexity_max", "must not be below complexity_min");
        }
        c.probability("proposers.honest_quality_min", p.honest_quality_min);
        c.probability("proposers.honest_quality_max", p.honest_quality_max);
        if p.honest_quality_max < p.honest_quality_min {
            c.fail("proposers.honest_quality_max", "must not be below honest_quality_min");
        }
        c.non_negative("proposers.metric_noise", p.metric_noise);
        c.non_negative("proposers.adversarial_inflation", p.adversarial_inflation);

        let v = &self.verifiers;
        c.non_negative("verifiers.noise", v.noise);
        c.tokens("verifiers.stake", v.stake);
        c.positive("verifiers.stake", v.stake);
        c.probability("verifiers.vote_probability", v.vote_probability);
        c.probability("verifiers.lazy_abstain", v.lazy_abstain);

        c.probability("deep_searchers.accuracy", self.deep_searchers.accuracy);
        c.tokens("deep_searchers.stake", self.deep_searchers.stake);
        if self.deep_searchers.stake < self.tokens.min_searcher_stake {
            c.fail("deep_searchers.stake", "must be at least tokens.min_searcher_stake");
        }
        c.probability("arbitrators.accuracy", self.arbitrators.accuracy);
        c.probability("arbitrators.propensity", self.arbitrators.propensity);
        c.tokens("arbitrators.stake", self.arbitrators.stake);
        if self.arbitrators.stake < self.tokens.min_arbitration_stake {
            c.fail("arbitrators.stake", "must be at least tokens.min_arbitration_stake");
        }

        let m = &self.market;
        if !(m.majority_threshold > 0.5 && m.majority_threshold <= 1.0) {
            c.fail("market.majority_threshold", format!("must exceed 0.5 and be at most 1, got {}", m.majority_threshold));
        }
        if let Some(d) = m.divergence_tolerance {
            c.non_negative("market.divergence_tolerance", d);
        }
        if m.divergence_window == 0 {
            c.fail("market.divergence_window", "must be at least 1");
        }
        if m.mechanism == MechanismKind::Lmsr {
            c.positive("market.liquidity", m.liquidity);
            let bound = m.liquidity * std::f64::consts::LN_2;
            if self.tokens.min_collateral < bound {
                c.fail(
                    "tokens.min_collateral",
                    format!("must cover the LMSR loss bound liquidity*ln2 = {bound:.6} so the proposer bond absorbs maker loss"),
                );
            }
        }

        let a = &self.audit;
        if !(a.rate > 0.0 && a.rate.is_finite()) {
            c.fail("audit.rate", format!("audit rate must be positive, got {}", a.rate));
        }
        c.tokens("audit.gas_fee", a.gas_fee);
        c.probability("audit.reward_coeff", a.reward_coeff);
        c.probability("audit.detection_accuracy", a.detection_accuracy);
        c.probability("audit.fraud_threshold", a.fraud_threshold);
        if a.auditors_per_audit == 0 {
            c.fail("audit.auditors_per_audit", "must be at least 1");
        }
        c.tokens("audit.min_reputation", a.min_reputation);
        c.probability("audit.lottery_topup", a.lottery_topup);

        let t = &self.tokens;
        if !(0.0..1.0).contains(&t.fee_rate) {
            c.fail("tokens.fee_rate", format!("must lie in [0, 1), got {}", t.fee_rate));
        }
        c.probability("tokens.commission_rate", t.commission_rate);
        c.probability("tokens.commission_diverted", t.commission_diverted);
        for (name, v) in [
            ("min_collateral", t.min_collateral),
            ("min_searcher_stake", t.min_searcher_stake),
            ("min_arbitration_stake", t.min_arbitration_stake),
            ("reputation_floor", t.reputation_floor),
            ("verifier_reward", t.verifier_reward),
            ("reward_reputation_scale", t.reward_reputation_scale),
            ("searcher_reward", t.searcher_reward),
            ("arbitrator_reward", t.arbitrator_reward),
        ] {
            c.tokens(&format!("tokens.{name}"), v);
        }
        c.positive("tokens.min_collateral", t.min_collateral);
        c.positive("tokens.min_searcher_stake", t.min_searcher_stake);
        if !(0.0..1.0).contains(&t.alpha_decay) {
            c.fail("tokens.alpha_decay", format!("must lie in [0, 1), got {}", t.alpha_decay));
        }

        let g = &self.genesis;
        for (name, v) in [
            ("supra_per_agent", g.supra_per_agent),
            ("alpha_per_agent", g.alpha_per_agent),
            ("capital_owner_supra", g.capital_owner_supra),
            ("lottery_pool", g.lottery_pool),
            ("subsidy_pool", g.subsidy_pool),
        ] {
            c.tokens(&format!("genesis.{name}"), v);
        }

        let i = &self.intentions;
        c.tokens("intentions.deposit", i.deposit);
        c.positive("intentions.deposit", i.deposit);
        c.tokens("intentions.alpha_burn", i.alpha_burn);
        c.positive("intentions.alpha_burn", i.alpha_burn);
        if i.readjust_every == 0 {
            c.fail("intentions.readjust_every", "must be at least 1 epoch");
        }
        c.finite("intentions.min_expected_return", i.min_expected_return);
        if self.population.capital_owners > 0 && i.per_owner > 0 {
            if i.deposit > g.capital_owner_supra {
                c.fail("intentions.deposit", "exceeds genesis.capital_owner_supra");
            }
            if i.alpha_burn > g.alpha_per_agent {
                c.fail("intentions.alpha_burn", "exceeds genesis.alpha_per_agent");
            }
        }

        let al = &self.allocation;
        c.non_negative("allocation.risk_aversion", al.risk_aversion);
        if al.utility == UtilityName::LogWealth {
            c.positive("allocation.wealth", al.wealth);
        }
        for (name, v) in [
            ("belief_intercept", al.belief_intercept),
            ("belief_slope", al.belief_slope),
            ("quality_intercept", al.quality_intercept),
            ("quality_slope", al.quality_slope),
            ("env_intercept", al.env_intercept),
            ("env_slope", al.env_slope),
        ] {
            c.finite(&format!("allocation.{name}"), v);
        }
        c.positive("allocation.noise_scale", al.noise_scale);
        c.probability("allocation.confidence_coupling", al.confidence_coupling);
        c.non_negative("allocation.base_fee", al.base_fee);
        c.non_negative("allocation.marginal_rate", al.marginal_rate);
        c.positive("allocation.complexity_exponent", al.complexity_exponent);
        c.non_negative("allocation.vote_exponent", al.vote_exponent);
        if !(al.budget_fraction > 0.0 && al.budget_fraction <= 1.0) {
            c.fail("allocation.budget_fraction", format!("must lie in (0, 1], got {}", al.budget_fraction));
        }
        c.issues
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(issues))
        }
    }

    /// Non-fatal advisories, such as an audit reward that is large relative to capital.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.audit.reward_coeff >= 0.1 {
            w.push(format!("audit.reward_coeff {} is not small relative to allocated capital", self.audit.reward_coeff));
        }
        w
    }

    pub fn interval_lengths(&self) -> IntervalLengths {
        let iv = &self.intervals;
        IntervalLengths::new(iv.proposal, iv.assessment, iv.rebalancing, iv.withdrawal).expect("validated intervals")
    }

    pub fn criteria(&self) -> DecisionCriteria {
        DecisionCriteria::new(self.market.majority_threshold, self.market.divergence_tolerance, self.market.require_deep_searcher)
            .expect("validated criteria")
    }

    pub fn waterfall_params(&self) -> WaterfallParams {
        let t = &self.tokens;
        WaterfallParams {
            mechanism: match self.market.mechanism {
                MechanismKind::Parimutuel => Mechanism::Parimutuel,
                MechanismKind::Lmsr => Mechanism::Lmsr { liquidity: self.market.liquidity },
            },
            min_collateral: Amount::from_real(t.min_collateral),
            min_searcher_stake: Amount::from_real(t.min_searcher_stake),
            min_arbitration_stake: Amount::from_real(t.min_arbitration_stake),
            arbitration_window: t.arbitration_window,
            min_arbitrator_participation: t.min_arbitrator_participation,
            fee_rate: Ppm::from_fraction(t.fee_rate),
            min_community_votes: self.market.min_community_votes,
            divergence_window: self.market.divergence_window,
            reputation_floor: Amount::from_real(t.reputation_floor),
            verifier_reward: Amount::from_real(t.verifier_reward),
            reward_reputation_scale: Amount::from_real(t.reward_reputation_scale),
            searcher_reward: Amount::from_real(t.searcher_reward),
            arbitrator_reward: Amount::from_real(t.arbitrator_reward),
        }
    }

    pub fn allocation_models(&self) -> AllocationModels<f64> {
        let a = &self.allocation;
        AllocationModels {
            utility: UtilityModel {
                kind: match a.utility {
                    UtilityName::Linear => UtilityKind::Linear,
                    UtilityName::LogWealth => UtilityKind::LogWealth,
                    UtilityName::MeanVariance => UtilityKind::MeanVariance,
                },
                risk_aversion: a.risk_aversion,
                wealth: a.wealth,
            },
            returns: ReturnModel {
                belief_intercept: a.belief_intercept,
                belief_slope: a.belief_slope,
                quality_intercept: a.quality_intercept,
                quality_slope: a.quality_slope,
                noise_scale: a.noise_scale,
                confidence_coupling: a.confidence_coupling,
            },
            cost: VerificationCostModel {
                base_fee: a.base_fee,
                marginal_rate: a.marginal_rate,
                complexity_exponent: a.complexity_exponent,
            },
        }
    }

    pub fn meta_params(&self) -> MetaParams<f64> {
        let a = &self.allocation;
        MetaParams { vote_exponent: a.vote_exponent, env_intercept: a.env_intercept, env_slope: a.env_slope }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let s = Scenario::from_toml("").unwrap();
        assert_eq!(s, Scenario::default());
        assert!(s.issues().is_empty());
    }

    #[test]
    fn round_trips_through_toml() {
        let s = Scenario::default();
        assert_eq!(Scenario::from_toml(&s.to_toml()).unwrap(), s);
    }

    #[test]
    fn low_majority_threshold_rejected() {
        let err = Scenario::from_toml("[market]\nmajority_threshold = 0.4\n").unwrap_err();
        let ScenarioError::Invalid(issues) = err else { panic!("{err}") };
        assert_eq!(issues[0].path, "market.majority_threshold");
        assert!(issues[0].message.contains("must exceed 0.5"));
    }

    #[test]
    fn zero_audit_rate_rejected() {
        let err = Scenario::from_toml("[audit]\nrate = 0.0\n").unwrap_err();
        assert!(err.to_string().contains("audit.rate: audit rate must be positive"), "{err}");
    }

    #[test]
    fn unknown_keys_are_errors() {
        let err = Scenario::from_toml("[market]\nmajority = 0.7\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, ScenarioError::Parse(_)));
        assert!(msg.contains("majority"), "{msg}");
        assert!(Scenario::from_toml("bogus = 1\n").is_err());
    }

    #[test]
    fn all_issues_reported_together() {
        let err = Scenario::from_toml("epochs = 0\n[audit]\nrate = -1.0\ndetection_accuracy = 2.0\n").unwrap_err();
        let ScenarioError::Invalid(issues) = err else { panic!() };
        let paths: Vec<_> = issues.iter().map(|i| i.path.as_str()).collect();
        assert_eq!(paths, ["epochs", "audit.rate", "audit.detection_accuracy"]);
    }

    #[test]
    fn lmsr_needs_bond_covering_loss() {
        let err = Scenario::from_toml("[market]\nmechanism = \"lmsr\"\nliquidity = 1000.0\n").unwrap_err();
        assert!(err.to_string().contains("tokens.min_collateral"));
        assert!(Scenario::from_toml("[market]\nmechanism = \"lmsr\"\nliquidity = 100.0\n").is_ok());
    }

    #[test]
    fn large_audit_reward_warns() {
        let s = Scenario::from_toml("[audit]\nreward_coeff = 0.2\n").unwrap();
        assert_eq!(s.warnings().len(), 1);
    }
}
