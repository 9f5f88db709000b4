//! Stochastic audit lottery. Audits on each strategy arrive as a Poisson process; each
//! executed audit is paid from the lottery pool (flat gas plus a reward proportional to the
//! capital allocated to the strategy).

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AgentId, StrategyId, StrategyProposal};
use crate::num::{apportion, Amount, Scalar};
use crate::tokens::{Account, DualLedger, LedgerError, MoveKind, ProtocolAccount, Ppm, Token};

#[derive(Debug, Error, PartialEq)]
pub enum AuditError {
    #[error("audit rate must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("elapsed time must be non-negative, got {0}")]
    NegativeElapsed(f64),
    #[error("horizon must be positive")]
    NonPositiveHorizon,
    #[error("detection accuracy must lie in [0, 1], got {0}")]
    Accuracy(f64),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// Probability of at least one audit within `elapsed` epochs: `1 - exp(-rate * elapsed)`.
pub fn audit_probability<S: Scalar>(rate: S, elapsed: S) -> Result<S, AuditError> {
    if !(rate > S::zero()) {
        return Err(AuditError::NonPositiveRate(rate.to_f64().unwrap_or(f64::NAN)));
    }
    if !(elapsed >= S::zero()) {
        return Err(AuditError::NegativeElapsed(elapsed.to_f64().unwrap_or(f64::NAN)));
    }
    Ok(-(-rate * elapsed).exp_m1())
}

/// Event times of a rate-`rate` Poisson process on `(0, horizon]`, built from exponential
/// inter-arrival gaps.
pub fn sample_audit_times<S: Scalar, R: Rng + ?Sized>(rng: &mut R, rate: S, horizon: S) -> Result<Vec<S>, AuditError> {
    if !(rate > S::zero()) {
        return Err(AuditError::NonPositiveRate(rate.to_f64().unwrap_or(f64::NAN)));
    }
    if !(horizon > S::zero()) {
        return Err(AuditError::NonPositiveHorizon);
    }
    let mut times = Vec::new();
    let mut t = S::zero();
    loop {
        let u: f64 = rng.random();
        // -ln(1 - u) with u in [0, 1) is a unit exponential
        let gap = S::lit(-(-u).ln_1p()) / rate;
        t = t + gap;
        if t > horizon {
            return Ok(times);
        }
        times.push(t);
    }
}

/// Audit epochs over `horizon` epochs: an event at time `t` fires in epoch `ceil(t) - 1`, i.e.
/// it is rounded up to the next epoch boundary. Several audits may share an epoch. Returned
/// epochs are relative to the start of the horizon and sorted.
pub fn sample_audit_events<R: Rng + ?Sized>(rng: &mut R, rate: f64, horizon: u64) -> Result<Vec<u64>, AuditError> {
    if horizon == 0 {
        return Err(AuditError::NonPositiveHorizon);
    }
    let times = sample_audit_times(rng, rate, horizon as f64)?;
    Ok(times.into_iter().map(|t| (t.ceil() as u64).max(1) - 1).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuditOutcome {
    Clean,
    FraudDetected,
    /// The lottery pool could not cover gas plus reward; nothing happened.
    Starved,
    /// No verifier met the reputation floor; nothing happened.
    Unstaffed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub strategy: StrategyId,
    pub outcome: AuditOutcome,
    pub gas: Amount,
    pub reward: Amount,
    pub rewards: Vec<(AgentId, Amount)>,
}

impl AuditReport {
    pub fn executed(&self) -> bool {
        matches!(self.outcome, AuditOutcome::Clean | AuditOutcome::FraudDetected)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditSchedule {
    pub rate: f64,
    pub gas_fee: Amount,
    /// Reward per unit of allocated capital.
    pub reward_coeff: Ppm,
    pub min_reputation: Amount,
    pub detection_accuracy: f64,
    /// Strategies with true quality below this are fraudulent.
    pub fraud_threshold: f64,
    pub auditors_per_audit: usize,
    pub last_audit_epoch: BTreeMap<StrategyId, u64>,
}

impl AuditSchedule {
    pub fn new(
        rate: f64,
        gas_fee: Amount,
        reward_coeff: Ppm,
        min_reputation: Amount,
        detection_accuracy: f64,
        fraud_threshold: f64,
    ) -> Result<Self, AuditError> {
        if !(rate > 0.0) {
            return Err(AuditError::NonPositiveRate(rate));
        }
        if !(0.0..=1.0).contains(&detection_accuracy) {
            return Err(AuditError::Accuracy(detection_accuracy));
        }
        Ok(Self {
            rate,
            gas_fee,
            reward_coeff,
            min_reputation,
            detection_accuracy,
            fraud_threshold,
            auditors_per_audit: 3,
            last_audit_epoch: BTreeMap::new(),
        })
    }

    /// Audit costs should stay small relative to the capital they protect.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.reward_coeff >= Ppm::from_fraction(0.1) {
            w.push(format!(
                "audit reward coefficient {} is not small relative to allocated capital",
                self.reward_coeff.as_f64()
            ));
        }
        w
    }

    pub fn lottery_pool(ledger: &DualLedger) -> Amount {
        ledger.protocol(ProtocolAccount::LotteryPool, Token::Supra)
    }

    pub fn is_fraudulent(&self, strategy: &StrategyProposal) -> bool {
        strategy.true_quality() < self.fraud_threshold
    }

    /// Runs one audit of `strategy`, which currently has `allocated` capital. Participating
    /// verifiers are drawn from `candidates` that meet the reputation floor; they split the
    /// reward. Fraud is caught with probability `detection_accuracy`; clean strategies are
    /// never flagged.
    pub fn run_audit<R: Rng + ?Sized>(
        &mut self,
        ledger: &mut DualLedger,
        strategy: &StrategyProposal,
        allocated: Amount,
        candidates: &[AgentId],
        epoch: u64,
        rng: &mut R,
    ) -> Result<AuditReport, AuditError> {
        let reward = self.reward_coeff.of_floor(allocated.max(Amount::ZERO));
        let mut report = AuditReport {
            strategy: strategy.id,
            outcome: AuditOutcome::Starved,
            gas: self.gas_fee,
            reward,
            rewards: Vec::new(),
        };
        if Self::lottery_pool(ledger) < self.gas_fee + reward {
            return Ok(report);
        }
        let mut eligible: Vec<AgentId> =
            candidates.iter().copied().filter(|v| ledger.reputation(*v) >= self.min_reputation).collect();
        if eligible.is_empty() {
            report.outcome = AuditOutcome::Unstaffed;
            return Ok(report);
        }
        // partial Fisher-Yates to pick the participants
        let k = self.auditors_per_audit.max(1).min(eligible.len());
        for i in 0..k {
            let j = rng.random_range(i..eligible.len());
            eligible.swap(i, j);
        }
        let mut auditors = eligible[..k].to_vec();
        auditors.sort();
        let caught = rng.random::<f64>() < self.detection_accuracy;

        let pool = Account::Protocol(ProtocolAccount::LotteryPool);
        let shares = apportion(reward, &vec![1; auditors.len()]);
        let mut moves = vec![(pool, Account::Protocol(ProtocolAccount::GasSink), self.gas_fee)];
        for (a, s) in auditors.iter().zip(&shares) {
            moves.push((pool, Account::free(*a), *s));
        }
        ledger.transfer_batch(Token::Supra, MoveKind::Audit, &moves)?;

        report.rewards = auditors.into_iter().zip(shares).collect();
        report.outcome = if self.is_fraudulent(strategy) && caught {
            AuditOutcome::FraudDetected
        } else {
            AuditOutcome::Clean
        };
        self.last_audit_epoch.insert(strategy.id, epoch);
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn probability_values() {
        assert_eq!(audit_probability(0.3_f64, 0.0).unwrap(), 0.0);
        let p = audit_probability(0.5_f64, 2.0).unwrap();
        assert!((p - (1.0 - (-1.0_f64).exp())).abs() < 1e-15);
        assert!((p - 0.632121).abs() < 1e-6);
        assert!(audit_probability(0.1_f64, 1e6).unwrap() <= 1.0);
        assert!(audit_probability(0.0_f64, 1.0).is_err());
        assert!(audit_probability(0.1_f64, -1.0).is_err());
        assert!(audit_probability(0.25_f32, 4.0).unwrap() > 0.63);
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_audit_events(&mut ChaCha8Rng::seed_from_u64(7), 0.1, 100).unwrap();
        let b = sample_audit_events(&mut ChaCha8Rng::seed_from_u64(7), 0.1, 100).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
        assert!(a.iter().all(|e| *e < 100));
    }

    fn setup(pool: i64) -> (DualLedger, AuditSchedule, StrategyProposal, StrategyProposal) {
        let mut ledger = DualLedger::new();
        ledger
            .genesis_credit(Account::Protocol(ProtocolAccount::LotteryPool), Token::Supra, Amount::tokens(pool))
            .unwrap();
        for v in 1..=3 {
            ledger.genesis_credit(Account::free(AgentId(v)), Token::Alpha, Amount::tokens(10)).unwrap();
        }
        ledger.seal();
        let sched = AuditSchedule::new(0.1, Amount::tokens(1), Ppm::from_fraction(0.01), Amount::tokens(5), 1.0, 0.3)
            .unwrap();
        let mk = |id, q| {
            StrategyProposal::new(StrategyId(id), AgentId(0), Amount::tokens(100), 1.0, vec![], q, Amount::ZERO).unwrap()
        };
        (ledger, sched, mk(0, 0.8), mk(1, 0.1))
    }

    #[test]
    fn clean_audit_pays_fee_and_reward() {
        let (mut ledger, mut sched, good, _) = setup(100);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = sched
            .run_audit(&mut ledger, &good, Amount::tokens(300), &[AgentId(1), AgentId(2), AgentId(3)], 4, &mut rng)
            .unwrap();
        assert_eq!(r.outcome, AuditOutcome::Clean);
        assert_eq!(AuditSchedule::lottery_pool(&ledger), Amount::tokens(100 - 1 - 3));
        assert_eq!(r.rewards.iter().map(|(_, a)| *a).sum::<Amount>(), Amount::tokens(3));
        assert_eq!(sched.last_audit_epoch[&good.id], 4);
        ledger.check_invariants().unwrap();
    }

    #[test]
    fn fraud_detected_with_perfect_accuracy() {
        let (mut ledger, mut sched, _, bad) = setup(100);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = sched.run_audit(&mut ledger, &bad, Amount::ZERO, &[AgentId(1)], 0, &mut rng).unwrap();
        assert_eq!(r.outcome, AuditOutcome::FraudDetected);
    }

    #[test]
    fn starved_and_unstaffed_change_nothing() {
        let (mut ledger, mut sched, good, _) = setup(1);
        ledger.take_journal();
        let before = ledger.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = sched.run_audit(&mut ledger, &good, Amount::tokens(10), &[AgentId(1)], 0, &mut rng).unwrap();
        assert_eq!(r.outcome, AuditOutcome::Starved);
        assert_eq!(ledger, before);
        let r = sched.run_audit(&mut ledger, &good, Amount::ZERO, &[AgentId(9)], 0, &mut rng).unwrap();
        assert_eq!(r.outcome, AuditOutcome::Unstaffed);
        assert_eq!(ledger, before);
        assert!(sched.last_audit_epoch.is_empty());
    }

    #[test]
    fn large_reward_coefficient_warns() {
        let (_, mut sched, _, _) = setup(1);
        assert!(sched.warnings().is_empty());
        sched.reward_coeff = Ppm::from_fraction(0.1);
        assert_eq!(sched.warnings().len(), 1);
    }
}
