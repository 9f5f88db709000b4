//! Validation-instance state machine: market inception, voting, resolution by the community or
//! a deep searcher, the arbitration window, and settlement against the ledger.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{confidence_score, ConfidenceScore, MarketRef};
use crate::markets::{LmsrMarket, MarketError, ParimutuelPool, Side};
use crate::model::{
    passes_predicates, Agent, AgentId, DecisionCriteria, InstanceId, IntentionId, IntentionSpec, ModelError, Phase, Role,
    StrategyId, StrategyProposal,
};
use crate::num::Amount;
use crate::tokens::{Account, DualLedger, LedgerError, MintReason, MoveKind, Ppm, ProtocolAccount, SubAccount, Token};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InstanceState {
    Initiated,
    MarketOpen,
    PendingResolution,
    ArbitrationWindow,
    Settled,
    Reversed,
}

impl InstanceState {
    /// The allowed transition relation.
    pub fn can_transition(self, to: InstanceState) -> bool {
        use InstanceState::*;
        matches!(
            (self, to),
            (Initiated, MarketOpen)
                | (MarketOpen, PendingResolution)
                | (PendingResolution, ArbitrationWindow)
                | (PendingResolution, Settled)
                | (ArbitrationWindow, Settled)
                | (ArbitrationWindow, Reversed)
                | (Reversed, Settled)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resolver {
    Community,
    DeepSearcher(AgentId),
    Arbitrator(AgentId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub outcome: Side,
    pub resolver: Resolver,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisputeRecord {
    pub challenger: AgentId,
    pub target_resolver: AgentId,
    pub challenger_stake: Amount,
    pub upheld: Option<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Mechanism {
    Parimutuel,
    Lmsr { liquidity: f64 },
}

/// Protocol parameters the waterfall enforces.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaterfallParams {
    pub mechanism: Mechanism,
    pub min_collateral: Amount,
    pub min_searcher_stake: Amount,
    pub min_arbitration_stake: Amount,
    pub arbitration_window: u64,
    pub min_arbitrator_participation: u32,
    pub fee_rate: Ppm,
    /// Verifier votes needed before the community may resolve a market.
    pub min_community_votes: usize,
    /// Number of recent vote events over which the divergence criterion is measured.
    pub divergence_window: usize,
    pub reputation_floor: Amount,
    pub verifier_reward: Amount,
    /// Reputation at which the verifier reward doubles; zero keeps the reward flat.
    pub reward_reputation_scale: Amount,
    pub searcher_reward: Amount,
    pub arbitrator_reward: Amount,
}

impl Default for WaterfallParams {
    fn default() -> Self {
        Self {
            mechanism: Mechanism::Parimutuel,
            min_collateral: Amount::tokens(100),
            min_searcher_stake: Amount::tokens(50),
            min_arbitration_stake: Amount::tokens(100),
            arbitration_window: 2,
            min_arbitrator_participation: 0,
            fee_rate: Ppm::from_fraction(0.01),
            min_community_votes: 1,
            divergence_window: 5,
            reputation_floor: Amount::ZERO,
            verifier_reward: Amount::tokens(1),
            reward_reputation_scale: Amount::ZERO,
            searcher_reward: Amount::tokens(2),
            arbitrator_reward: Amount::tokens(2),
        }
    }
}

impl WaterfallParams {
    /// Flat reward, scaled by up to 2x with reputation when a scale is configured.
    pub fn verifier_reward_for(&self, reputation: Amount) -> Amount {
        if !self.reward_reputation_scale.is_positive() {
            return self.verifier_reward;
        }
        let capped = reputation.max(Amount::ZERO).min(self.reward_reputation_scale);
        self.verifier_reward + self.verifier_reward.mul_div_floor(capped.0, self.reward_reputation_scale.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WaterfallError {
    #[error("{instance} is {found:?}, operation needs {expected:?}")]
    WrongState { instance: InstanceId, expected: InstanceState, found: InstanceState },
    #[error("operation not allowed during the {0:?} phase")]
    WrongPhase(Phase),
    #[error("stake {stake} is below the required minimum {minimum}")]
    BelowMinimum { stake: Amount, minimum: Amount },
    #[error("{0} fails the intention's predicates")]
    PredicateFailed(StrategyId),
    #[error("{agent} has role {role:?}, operation needs {expected:?}")]
    WrongRole { agent: AgentId, role: Role, expected: Role },
    #[error("{0} does not meet the arbitrator participation requirement")]
    Unqualified(AgentId),
    #[error("arbitration window closed at epoch {deadline}")]
    WindowClosed { deadline: u64 },
    #[error("{0} already has a dispute")]
    AlreadyDisputed(InstanceId),
    #[error("{0} has not been escalated to deep searchers")]
    NotEscalated(InstanceId),
    #[error("{0} is already resolved")]
    AlreadyResolved(InstanceId),
    #[error("{0} cannot settle yet")]
    Premature(InstanceId),
    #[error("vote amount too small to enter the market")]
    DustVote,
    #[error("{0} did not settle Agree")]
    NotAgreeSettled(InstanceId),
    #[error("subsidy pool cannot cover a market-maker loss of {0}")]
    SubsidyShortfall(Amount),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// An intention whose deposit has been escrowed and whose Alpha burn has been paid. Only
/// [`register_intention`] creates one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegisteredIntention {
    spec: IntentionSpec,
    pub created_epoch: u64,
    pub last_validation_epoch: Option<u64>,
}

impl RegisteredIntention {
    pub fn spec(&self) -> &IntentionSpec {
        &self.spec
    }

    pub fn id(&self) -> IntentionId {
        self.spec.id
    }
}

/// Burns the intention's Alpha fee and escrows its SUPRA deposit, atomically.
pub fn register_intention(ledger: &mut DualLedger, spec: IntentionSpec, epoch: u64) -> Result<RegisteredIntention, WaterfallError> {
    spec.validate()?;
    let available = ledger.free(spec.owner, Token::Supra);
    if available < spec.deposit {
        return Err(LedgerError::Insufficient {
            account: Account::free(spec.owner),
            token: Token::Supra,
            needed: spec.deposit,
            available,
        }
        .into());
    }
    ledger.burn_alpha_for_intention(spec.owner, spec.alpha_burn)?;
    ledger.escrow(spec.owner, spec.deposit)?;
    Ok(RegisteredIntention { spec, created_epoch: epoch, last_validation_epoch: None })
}

/// LMSR market with micro-unit bookkeeping of shares and escrowed purchase costs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmsrBook {
    pub market: LmsrMarket<f64>,
    pub shares: BTreeMap<(AgentId, Side), Amount>,
    pub paid: BTreeMap<AgentId, Amount>,
    /// Proposer bond that finances the maker's loss.
    pub bond: Amount,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MarketBook {
    Parimutuel(ParimutuelPool),
    Lmsr(LmsrBook),
}

impl MarketBook {
    pub fn confidence(&self, strategy: StrategyId) -> ConfidenceScore<f64> {
        match self {
            MarketBook::Parimutuel(p) => confidence_score(strategy, MarketRef::Parimutuel(p)),
            MarketBook::Lmsr(b) => confidence_score(strategy, MarketRef::Lmsr(&b.market)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CriteriaVerdict {
    Resolved(Side),
    NeedsDeepSearcher,
    StillOpen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoteReceipt {
    pub gross: Amount,
    pub fee: Amount,
    /// SUPRA that entered the market.
    pub staked: Amount,
    /// LMSR shares bought; equal to `staked` for parimutuel pools.
    pub shares: Amount,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ArbitrationOutcome {
    Upheld { new_outcome: Side, slashed_searcher: AgentId, slashed: Amount },
    Failed { forfeited: Amount },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettlementReport {
    pub instance: InstanceId,
    pub outcome: Side,
    pub total_staked: Amount,
    pub payouts: Vec<(AgentId, Amount)>,
    pub mints: Vec<(AgentId, Amount, MintReason)>,
    pub refunded: bool,
    /// LMSR only: real-valued maker loss and its liquidity bound.
    pub maker_loss: Option<f64>,
    pub loss_bound: Option<f64>,
    pub bond_used: Amount,
    pub subsidy_used: Amount,
    /// Agree settlements make the strategy eligible for capital.
    pub allocation_eligible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationInstance {
    pub id: InstanceId,
    pub strategy: StrategyId,
    pub intention: IntentionId,
    pub proposer: AgentId,
    pub criteria: DecisionCriteria,
    pub book: MarketBook,
    state: InstanceState,
    resolution: Option<Resolution>,
    escalated: bool,
    searcher_stake: Option<(AgentId, Amount)>,
    dispute: Option<DisputeRecord>,
    pub deadlines: BTreeMap<InstanceState, u64>,
    pub initial_agree: Amount,
    pub history: Vec<(InstanceState, u64)>,
    /// Confidence after each vote.
    pub belief_path: Vec<f64>,
    pub community_votes: usize,
    pub audit_reversed: bool,
}

/// Moves value from `sources` to `sinks` (equal totals) with a deterministic two-pointer match.
fn clearing_moves(sources: &[(Account, Amount)], sinks: &[(Account, Amount)]) -> Vec<(Account, Account, Amount)> {
    let mut moves = Vec::new();
    let mut src: Vec<(Account, Amount)> = sources.iter().copied().filter(|(_, a)| a.is_positive()).collect();
    let mut dst: Vec<(Account, Amount)> = sinks.iter().copied().filter(|(_, a)| a.is_positive()).collect();
    let (mut i, mut j) = (0, 0);
    while i < src.len() && j < dst.len() {
        let amount = src[i].1.min(dst[j].1);
        moves.push((src[i].0, dst[j].0, amount));
        src[i].1 -= amount;
        dst[j].1 -= amount;
        if src[i].1 == Amount::ZERO {
            i += 1;
        }
        if dst[j].1 == Amount::ZERO {
            j += 1;
        }
    }
    moves
}

fn escrow_of(agent: AgentId) -> Account {
    Account::Agent(agent, SubAccount::Escrowed)
}

/// Opens a market for `strategy` against `intention`, seeding the Agree side with the
/// proposer's stake (escrowed). Under LMSR the stake is the bond covering the maker's loss.
pub fn open_validation(
    id: InstanceId,
    strategy: &StrategyProposal,
    intention: &RegisteredIntention,
    proposer_stake: Amount,
    params: &WaterfallParams,
    ledger: &mut DualLedger,
    epoch: u64,
) -> Result<ValidationInstance, WaterfallError> {
    if proposer_stake < params.min_collateral {
        return Err(WaterfallError::BelowMinimum { stake: proposer_stake, minimum: params.min_collateral });
    }
    if !passes_predicates(&intention.spec.predicates, &strategy.metrics_profile) {
        return Err(WaterfallError::PredicateFailed(strategy.id));
    }
    let book = match params.mechanism {
        Mechanism::Parimutuel => {
            let mut pool = ParimutuelPool::new(id);
            pool.stake(strategy.proposer, Side::Agree, proposer_stake)?;
            MarketBook::Parimutuel(pool)
        }
        Mechanism::Lmsr { liquidity } => MarketBook::Lmsr(LmsrBook {
            market: LmsrMarket::new(id, liquidity)?,
            shares: BTreeMap::new(),
            paid: BTreeMap::new(),
            bond: proposer_stake,
        }),
    };
    ledger.escrow(strategy.proposer, proposer_stake)?;
    let mut inst = ValidationInstance {
        id,
        strategy: strategy.id,
        intention: intention.spec.id,
        proposer: strategy.proposer,
        criteria: intention.spec.criteria,
        book,
        state: InstanceState::Initiated,
        resolution: None,
        escalated: false,
        searcher_stake: None,
        dispute: None,
        deadlines: BTreeMap::new(),
        initial_agree: proposer_stake,
        history: vec![(InstanceState::Initiated, epoch)],
        belief_path: Vec::new(),
        community_votes: 0,
        audit_reversed: false,
    };
    inst.transition(InstanceState::MarketOpen, epoch)?;
    Ok(inst)
}

/// True when the intention is due for reassessment: its cadence has elapsed since the last
/// validation and the clock is in the Rebalancing interval.
pub fn reopen_intention(intention: &RegisteredIntention, current_epoch: u64, phase: Phase) -> bool {
    match intention.last_validation_epoch {
        Some(last) => phase == Phase::Rebalancing && current_epoch.saturating_sub(last) >= intention.spec.readjust_every,
        None => false,
    }
}

impl ValidationInstance {
    pub fn state(&self) -> InstanceState {
        self.state
    }

    pub fn resolution(&self) -> Option<Resolution> {
        self.resolution
    }

    pub fn dispute(&self) -> Option<DisputeRecord> {
        self.dispute
    }

    pub fn searcher_stake(&self) -> Option<(AgentId, Amount)> {
        self.searcher_stake
    }

    pub fn is_escalated(&self) -> bool {
        self.escalated
    }

    pub fn confidence(&self) -> ConfidenceScore<f64> {
        self.book.confidence(self.strategy)
    }

    /// Outcome the instance settled with, if settled.
    pub fn final_outcome(&self) -> Option<Side> {
        (self.state == InstanceState::Settled).then(|| self.resolution.map(|r| r.outcome)).flatten()
    }

    fn expect_state(&self, expected: InstanceState) -> Result<(), WaterfallError> {
        if self.state != expected {
            return Err(WaterfallError::WrongState { instance: self.id, expected, found: self.state });
        }
        Ok(())
    }

    fn transition(&mut self, to: InstanceState, epoch: u64) -> Result<(), WaterfallError> {
        if !self.state.can_transition(to) {
            return Err(WaterfallError::WrongState { instance: self.id, expected: to, found: self.state });
        }
        self.state = to;
        self.history.push((to, epoch));
        Ok(())
    }

    /// Commits `amount` SUPRA to `side`. The validation fee is taken first; the rest is
    /// staked (parimutuel) or spent on shares (LMSR).
    pub fn cast_vote(
        &mut self,
        voter: AgentId,
        side: Side,
        amount: Amount,
        phase: Phase,
        params: &WaterfallParams,
        ledger: &mut DualLedger,
    ) -> Result<VoteReceipt, WaterfallError> {
        self.expect_state(InstanceState::MarketOpen)?;
        if phase != Phase::Assessment {
            return Err(WaterfallError::WrongPhase(phase));
        }
        if !amount.is_positive() {
            return Err(MarketError::NonPositiveAmount.into());
        }
        let available = ledger.free(voter, Token::Supra);
        if available < amount {
            return Err(LedgerError::Insufficient { account: Account::free(voter), token: Token::Supra, needed: amount, available }.into());
        }
        // Fee preview; the ledger's running rounding decides the exact value.
        let max_fee = Amount::ceil_real(amount.to_real::<f64>() * params.fee_rate.as_f64()) + Amount(1);
        if amount <= max_fee {
            return Err(WaterfallError::DustVote);
        }
        let receipt = match &mut self.book {
            MarketBook::Parimutuel(pool) => {
                let fee = ledger.charge_validation_fee(voter, amount, params.fee_rate)?;
                let net = amount - fee;
                ledger.escrow(voter, net)?;
                pool.stake(voter, side, net)?;
                VoteReceipt { gross: amount, fee, staked: net, shares: net }
            }
            MarketBook::Lmsr(book) => {
                let budget = amount - max_fee;
                let shares = Amount::from_real(book.market.shares_for_budget(side, budget.to_real::<f64>())?.max(0.0))
                    .min(Amount::tokens(1_000_000_000));
                let shares = Amount(shares.0.saturating_sub(1));
                if !shares.is_positive() {
                    return Err(WaterfallError::DustVote);
                }
                let cost_real = book.market.cost(side, shares.to_real())?;
                let cost = Amount::ceil_real(cost_real);
                if cost > budget {
                    return Err(WaterfallError::DustVote);
                }
                let fee = ledger.charge_validation_fee(voter, amount, params.fee_rate)?;
                ledger.escrow(voter, cost)?;
                book.market.buy(voter, side, shares.to_real(), f64::INFINITY)?;
                *book.shares.entry((voter, side)).or_insert(Amount::ZERO) += shares;
                *book.paid.entry(voter).or_insert(Amount::ZERO) += cost;
                VoteReceipt { gross: amount, fee, staked: cost, shares }
            }
        };
        self.community_votes += 1;
        let c = self.confidence().value;
        self.belief_path.push(c);
        Ok(receipt)
    }

    /// Ends the voting window.
    pub fn close_voting(&mut self, epoch: u64) -> Result<(), WaterfallError> {
        self.expect_state(InstanceState::MarketOpen)?;
        self.transition(InstanceState::PendingResolution, epoch)
    }

    /// Standard deviation of the confidence over the last `window` votes.
    pub fn belief_dispersion(&self, window: usize) -> Option<f64> {
        if self.belief_path.is_empty() || window == 0 {
            return None;
        }
        let tail = &self.belief_path[self.belief_path.len().saturating_sub(window)..];
        let n = tail.len() as f64;
        let mean = tail.iter().sum::<f64>() / n;
        Some((tail.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt())
    }

    /// Applies the intention's decision criteria to the current market. A market that meets
    /// neither side's threshold escalates once voting has closed.
    pub fn check_decision_criteria(&self, criteria: &DecisionCriteria, params: &WaterfallParams) -> CriteriaVerdict {
        let closed = self.state != InstanceState::MarketOpen;
        let undecided = if closed { CriteriaVerdict::NeedsDeepSearcher } else { CriteriaVerdict::StillOpen };
        if criteria.require_deep_searcher {
            return CriteriaVerdict::NeedsDeepSearcher;
        }
        if self.community_votes < params.min_community_votes {
            return undecided;
        }
        if let Some(tol) = criteria.divergence_tolerance {
            match self.belief_dispersion(params.divergence_window) {
                Some(d) if d <= tol => {}
                _ => return undecided,
            }
        }
        let p = self.confidence().value;
        if p >= criteria.majority_threshold {
            CriteriaVerdict::Resolved(Side::Agree)
        } else if 1.0 - p >= criteria.majority_threshold {
            CriteriaVerdict::Resolved(Side::Disagree)
        } else {
            undecided
        }
    }

    /// Records the verdict of [`Self::check_decision_criteria`] on a closed market.
    pub fn apply_verdict(&mut self, verdict: CriteriaVerdict) -> Result<(), WaterfallError> {
        self.expect_state(InstanceState::PendingResolution)?;
        if self.resolution.is_some() {
            return Err(WaterfallError::AlreadyResolved(self.id));
        }
        match verdict {
            CriteriaVerdict::Resolved(outcome) => {
                self.resolution = Some(Resolution { outcome, resolver: Resolver::Community });
            }
            CriteriaVerdict::NeedsDeepSearcher => self.escalated = true,
            CriteriaVerdict::StillOpen => {}
        }
        Ok(())
    }

    /// An escalated market is resolved by one deep searcher, who escrows Alpha until the
    /// arbitration window closes.
    pub fn deep_searcher_resolve(
        &mut self,
        searcher: Agent,
        stake: Amount,
        outcome: Side,
        params: &WaterfallParams,
        ledger: &mut DualLedger,
        epoch: u64,
    ) -> Result<(), WaterfallError> {
        self.expect_state(InstanceState::PendingResolution)?;
        if !self.escalated {
            return Err(WaterfallError::NotEscalated(self.id));
        }
        if self.resolution.is_some() {
            return Err(WaterfallError::AlreadyResolved(self.id));
        }
        if searcher.role != Role::DeepSearcher {
            return Err(WaterfallError::WrongRole { agent: searcher.id, role: searcher.role, expected: Role::DeepSearcher });
        }
        if stake < params.min_searcher_stake {
            return Err(WaterfallError::BelowMinimum { stake, minimum: params.min_searcher_stake });
        }
        ledger.stake(searcher.id, Token::Alpha, stake)?;
        self.searcher_stake = Some((searcher.id, stake));
        self.resolution = Some(Resolution { outcome, resolver: Resolver::DeepSearcher(searcher.id) });
        self.deadlines.insert(InstanceState::ArbitrationWindow, epoch + params.arbitration_window);
        self.transition(InstanceState::ArbitrationWindow, epoch)
    }

    pub fn arbitration_deadline(&self) -> Option<u64> {
        self.deadlines.get(&InstanceState::ArbitrationWindow).copied()
    }

    /// Challenges a deep searcher's resolution. An upheld challenge flips the outcome and
    /// slashes the searcher's whole stake; a failed one forfeits the arbitrator's stake.
    #[allow(clippy::too_many_arguments)]
    pub fn arbitrator_challenge(
        &mut self,
        arbitrator: Agent,
        participation: u32,
        stake: Amount,
        upheld_by_audit: bool,
        params: &WaterfallParams,
        ledger: &mut DualLedger,
        epoch: u64,
    ) -> Result<ArbitrationOutcome, WaterfallError> {
        self.expect_state(InstanceState::ArbitrationWindow)?;
        let deadline = self.arbitration_deadline().expect("arbitration deadline set on entry");
        if epoch > deadline {
            return Err(WaterfallError::WindowClosed { deadline });
        }
        if self.dispute.is_some() {
            return Err(WaterfallError::AlreadyDisputed(self.id));
        }
        if arbitrator.role != Role::Arbitrator {
            return Err(WaterfallError::WrongRole { agent: arbitrator.id, role: arbitrator.role, expected: Role::Arbitrator });
        }
        if participation < params.min_arbitrator_participation {
            return Err(WaterfallError::Unqualified(arbitrator.id));
        }
        if stake < params.min_arbitration_stake {
            return Err(WaterfallError::BelowMinimum { stake, minimum: params.min_arbitration_stake });
        }
        let (searcher, searcher_stake) = self.searcher_stake.expect("searcher resolved before arbitration");
        ledger.stake(arbitrator.id, Token::Alpha, stake)?;
        let mut record = DisputeRecord { challenger: arbitrator.id, target_resolver: searcher, challenger_stake: stake, upheld: None };
        let outcome = if upheld_by_audit {
            ledger.slash(searcher, Token::Alpha, SubAccount::Staked, searcher_stake)?;
            ledger.release(arbitrator.id, Token::Alpha, stake)?;
            if ledger.reputation(arbitrator.id) >= params.reputation_floor && params.arbitrator_reward.is_positive() {
                ledger.mint_alpha(arbitrator.id, params.arbitrator_reward, MintReason::ArbitratorReward, true)?;
            }
            let res = self.resolution.as_mut().expect("resolved");
            res.outcome = !res.outcome;
            res.resolver = Resolver::Arbitrator(arbitrator.id);
            self.searcher_stake = Some((searcher, Amount::ZERO));
            record.upheld = Some(true);
            self.transition(InstanceState::Reversed, epoch)?;
            ArbitrationOutcome::Upheld { new_outcome: res_outcome(self), slashed_searcher: searcher, slashed: searcher_stake }
        } else {
            ledger.slash(arbitrator.id, Token::Alpha, SubAccount::Staked, stake)?;
            record.upheld = Some(false);
            ArbitrationOutcome::Failed { forfeited: stake }
        };
        self.dispute = Some(record);
        Ok(outcome)
    }

    pub fn can_settle(&self, epoch: u64) -> bool {
        match self.state {
            InstanceState::PendingResolution => {
                matches!(self.resolution, Some(Resolution { resolver: Resolver::Community, .. }))
            }
            InstanceState::ArbitrationWindow => {
                self.dispute.is_some() || self.arbitration_deadline().is_some_and(|d| epoch > d)
            }
            InstanceState::Reversed => true,
            _ => false,
        }
    }

    /// Pays out the market with the final outcome, returns or keeps dispute stakes and mints
    /// Alpha to eligible winners.
    pub fn settle_instance(
        &mut self,
        params: &WaterfallParams,
        ledger: &mut DualLedger,
        epoch: u64,
    ) -> Result<SettlementReport, WaterfallError> {
        if !self.can_settle(epoch) {
            return Err(WaterfallError::Premature(self.id));
        }
        let outcome = self.resolution.expect("resolution present when settleable").outcome;
        let mut report = SettlementReport {
            instance: self.id,
            outcome,
            total_staked: Amount::ZERO,
            payouts: Vec::new(),
            mints: Vec::new(),
            refunded: false,
            maker_loss: None,
            loss_bound: None,
            bond_used: Amount::ZERO,
            subsidy_used: Amount::ZERO,
            allocation_eligible: outcome == Side::Agree,
        };
        let mut winners: Vec<AgentId> = Vec::new();
        match &mut self.book {
            MarketBook::Parimutuel(pool) => {
                let mut staked: BTreeMap<AgentId, Amount> = BTreeMap::new();
                for (agent, _, amount) in pool.stakes() {
                    *staked.entry(agent).or_insert(Amount::ZERO) += amount;
                }
                let settlement = pool.clone().settle(outcome)?;
                let sources: Vec<(Account, Amount)> = staked.iter().map(|(a, v)| (escrow_of(*a), *v)).collect();
                let sinks: Vec<(Account, Amount)> = settlement.payouts.iter().map(|(a, v)| (Account::free(*a), *v)).collect();
                ledger.transfer_batch(Token::Supra, MoveKind::Payout, &clearing_moves(&sources, &sinks))?;
                *pool = {
                    let mut p = pool.clone();
                    p.settle(outcome)?;
                    p
                };
                report.total_staked = settlement.total_staked;
                report.refunded = settlement.refunded;
                report.payouts = settlement.payouts.into_iter().collect();
                if !report.refunded {
                    winners = pool.stakes().filter(|(a, s, _)| *s == outcome && *a != self.proposer).map(|(a, _, _)| a).collect();
                }
            }
            MarketBook::Lmsr(book) => {
                let settlement = book.market.clone().settle(outcome)?;
                let payouts: Vec<(AgentId, Amount)> = book
                    .shares
                    .iter()
                    .filter(|((_, s), _)| *s == outcome)
                    .map(|((a, _), v)| (*a, *v))
                    .fold(BTreeMap::new(), |mut m: BTreeMap<AgentId, Amount>, (a, v)| {
                        *m.entry(a).or_insert(Amount::ZERO) += v;
                        m
                    })
                    .into_iter()
                    .collect();
                let owed: Amount = payouts.iter().map(|(_, v)| *v).sum();
                let collected: Amount = book.paid.values().copied().sum();
                let loss = owed - collected;
                let mut sources: Vec<(Account, Amount)> = book.paid.iter().map(|(a, v)| (escrow_of(*a), *v)).collect();
                let mut sinks: Vec<(Account, Amount)> = payouts.iter().map(|(a, v)| (Account::free(*a), *v)).collect();
                let bond_used = loss.max(Amount::ZERO).min(book.bond);
                let subsidy_used = loss.max(Amount::ZERO) - bond_used;
                if subsidy_used > ledger.protocol(ProtocolAccount::SubsidyPool, Token::Supra) {
                    return Err(WaterfallError::SubsidyShortfall(subsidy_used));
                }
                sources.push((escrow_of(self.proposer), book.bond));
                sources.push((Account::Protocol(ProtocolAccount::SubsidyPool), subsidy_used));
                sinks.push((Account::free(self.proposer), book.bond - bond_used));
                if loss.is_negative() {
                    sinks.push((Account::Protocol(ProtocolAccount::SubsidyPool), -loss));
                }
                ledger.transfer_batch(Token::Supra, MoveKind::Payout, &clearing_moves(&sources, &sinks))?;
                book.market.settle(outcome)?;
                report.total_staked = collected + book.bond;
                report.maker_loss = Some(settlement.maker_loss);
                report.loss_bound = Some(book.market.loss_bound());
                report.bond_used = bond_used;
                report.subsidy_used = subsidy_used;
                winners = payouts.iter().map(|(a, _)| *a).filter(|a| *a != self.proposer).collect();
                report.payouts = payouts;
            }
        }
        winners.sort();
        winners.dedup();
        if params.verifier_reward.is_positive() {
            for w in winners {
                let reputation = ledger.reputation(w);
                if reputation >= params.reputation_floor {
                    let reward = params.verifier_reward_for(reputation);
                    ledger.mint_alpha(w, reward, MintReason::VerifierReward, true)?;
                    report.mints.push((w, reward, MintReason::VerifierReward));
                }
            }
        }
        // searcher stake comes back unless an upheld challenge slashed it
        if let (Some((searcher, stake)), Some(Resolution { resolver: Resolver::DeepSearcher(_), .. })) =
            (self.searcher_stake, self.resolution)
        {
            ledger.release(searcher, Token::Alpha, stake)?;
            if params.searcher_reward.is_positive() {
                ledger.mint_alpha(searcher, params.searcher_reward, MintReason::DeepSearcherReward, true)?;
                report.mints.push((searcher, params.searcher_reward, MintReason::DeepSearcherReward));
            }
        }
        self.transition(InstanceState::Settled, epoch)?;
        Ok(report)
    }

    /// Audit found the Agree-settled strategy fraudulent: the claim is treated as Disagree from
    /// here on and the strategy leaves the allocation set.
    pub fn audit_reverse(&mut self) -> Result<(), WaterfallError> {
        if self.final_outcome() != Some(Side::Agree) || self.audit_reversed {
            return Err(WaterfallError::NotAgreeSettled(self.id));
        }
        self.audit_reversed = true;
        Ok(())
    }

    /// Settled Agree and not reversed by an audit.
    pub fn allocation_eligible(&self) -> bool {
        self.final_outcome() == Some(Side::Agree) && !self.audit_reversed
    }
}

fn res_outcome(inst: &ValidationInstance) -> Side {
    inst.resolution.expect("resolved").outcome
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Goal, Predicate, Comparison};

    pub(crate) const PROPOSER: AgentId = AgentId(1);
    const OWNER: AgentId = AgentId(2);
    const V1: AgentId = AgentId(10);
    const V2: AgentId = AgentId(11);
    const SEARCHER: AgentId = AgentId(20);
    const ARB: AgentId = AgentId(30);

    fn ledger() -> DualLedger {
        let mut l = DualLedger::new();
        for a in [PROPOSER, OWNER, V1, V2, SEARCHER, ARB] {
            l.genesis_credit(Account::free(a), Token::Supra, Amount::tokens(10_000)).unwrap();
            l.genesis_credit(Account::free(a), Token::Alpha, Amount::tokens(500)).unwrap();
        }
        l.genesis_credit(Account::Protocol(ProtocolAccount::SubsidyPool), Token::Supra, Amount::tokens(1000)).unwrap();
        l.seal();
        l
    }

    fn intention(l: &mut DualLedger, criteria: DecisionCriteria) -> RegisteredIntention {
        let spec = IntentionSpec {
            id: IntentionId(0),
            owner: OWNER,
            predicates: vec![Predicate::new(0, Comparison::Gt, 0.0)],
            metric_index: 0,
            goal: Goal::Maximize,
            readjust_every: 5,
            criteria,
            deposit: Amount::tokens(1000),
            alpha_burn: Amount::tokens(10),
        };
        register_intention(l, spec, 0).unwrap()
    }

    fn strategy(metric: f64) -> StrategyProposal {
        StrategyProposal::new(StrategyId(3), PROPOSER, Amount::tokens(100), 1.0, vec![metric], 0.6, Amount::tokens(100)).unwrap()
    }

    fn open(params: &WaterfallParams, l: &mut DualLedger, criteria: DecisionCriteria) -> ValidationInstance {
        let i = intention(l, criteria);
        open_validation(InstanceId(7), &strategy(0.1), &i, Amount::tokens(100), params, l, 0).unwrap()
    }

    fn criteria(t: f64, deep: bool) -> DecisionCriteria {
        DecisionCriteria::new(t, None, deep).unwrap()
    }

    #[test]
    fn open_seeds_agree_side() {
        let mut l = ledger();
        let p = WaterfallParams::default();
        let inst = open(&p, &mut l, criteria(0.7, false));
        assert_eq!(inst.state(), InstanceState::MarketOpen);
        let MarketBook::Parimutuel(pool) = &inst.book else { panic!() };
        assert_eq!(pool.total(Side::Agree), Amount::tokens(100));
        assert_eq!(l.sub(PROPOSER, SubAccount::Escrowed, Token::Supra), Amount::tokens(100));
        l.check_invariants().unwrap();
    }

    #[test]
    fn open_rejects_low_stake_and_failed_predicate() {
        let mut l = ledger();
        let p = WaterfallParams::default();
        let i = intention(&mut l, criteria(0.7, false));
        let low = open_validation(InstanceId(0), &strategy(0.1), &i, Amount::tokens(99), &p, &mut l, 0);
        assert!(matches!(low, Err(WaterfallError::BelowMinimum { .. })));
        let bad = open_validation(InstanceId(0), &strategy(-1.0), &i, Amount::tokens(100), &p, &mut l, 0);
        assert_eq!(bad.unwrap_err(), WaterfallError::PredicateFailed(StrategyId(3)));
        assert_eq!(l.sub(PROPOSER, SubAccount::Escrowed, Token::Supra), Amount::ZERO);
    }

    #[test]
    fn register_intention_burns_and_escrows() {
        let mut l = ledger();
        let i = intention(&mut l, criteria(0.7, false));
        assert_eq!(l.alpha_burned_total(), Amount::tokens(10));
        assert_eq!(l.sub(OWNER, SubAccount::Escrowed, Token::Supra), i.spec().deposit);
        let mut poor = i.spec().clone();
        poor.owner = AgentId(99);
        assert!(register_intention(&mut l, poor, 0).is_err());
    }

    #[test]
    fn vote_guards() {
        let mut l = ledger();
        let p = WaterfallParams { fee_rate: Ppm(0), ..Default::default() };
        let mut inst = open(&p, &mut l, criteria(0.7, false));
        inst.cast_vote(V1, Side::Disagree, Amount::tokens(5), Phase::Assessment, &p, &mut l).unwrap();
        let MarketBook::Parimutuel(pool) = &inst.book else { panic!() };
        assert_eq!(pool.total(Side::Disagree), Amount::tokens(5));
        assert!(matches!(
            inst.cast_vote(V1, Side::Agree, Amount::ZERO, Phase::Assessment, &p, &mut l),
            Err(WaterfallError::Market(MarketError::NonPositiveAmount))
        ));
        assert_eq!(
            inst.cast_vote(V1, Side::Agree, Amount::tokens(1), Phase::Proposal, &p, &mut l),
            Err(WaterfallError::WrongPhase(Phase::Proposal))
        );
        assert!(inst.cast_vote(V1, Side::Agree, Amount::tokens(1_000_000), Phase::Assessment, &p, &mut l).is_err());
        inst.close_voting(2).unwrap();
        assert!(matches!(
            inst.cast_vote(V1, Side::Agree, Amount::tokens(1), Phase::Assessment, &p, &mut l),
            Err(WaterfallError::WrongState { .. })
        ));
    }

    #[test]
    fn criteria_verdicts() {
        let mut l = ledger();
        let p = WaterfallParams { fee_rate: Ppm(0), ..Default::default() };
        // 100 agree seed + 44.444... disagree gives p = 0.6923 < 0.7; add agree to reach 0.72
        let mut inst = open(&p, &mut l, criteria(0.7, false));
        inst.cast_vote(V1, Side::Agree, Amount::tokens(44), Phase::Assessment, &p, &mut l).unwrap();
        inst.cast_vote(V2, Side::Disagree, Amount::tokens(56), Phase::Assessment, &p, &mut l).unwrap();
        assert!((inst.confidence().value - 0.72).abs() < 1e-12);
        assert_eq!(inst.check_decision_criteria(&criteria(0.7, false), &p), CriteriaVerdict::Resolved(Side::Agree));
        assert_eq!(inst.check_decision_criteria(&criteria(0.75, false), &p), CriteriaVerdict::StillOpen);
        assert_eq!(inst.check_decision_criteria(&criteria(0.7, true), &p), CriteriaVerdict::NeedsDeepSearcher);
        inst.close_voting(1).unwrap();
        assert_eq!(inst.check_decision_criteria(&criteria(0.75, false), &p), CriteriaVerdict::NeedsDeepSearcher);
    }

    #[test]
    fn unvoted_market_escalates() {
        let mut l = ledger();
        let p = WaterfallParams::default();
        let mut inst = open(&p, &mut l, criteria(0.7, false));
        inst.close_voting(1).unwrap();
        assert_eq!(inst.check_decision_criteria(&inst.criteria.clone(), &p), CriteriaVerdict::NeedsDeepSearcher);
    }

    fn escalated(p: &WaterfallParams, l: &mut DualLedger) -> ValidationInstance {
        let mut inst = open(p, l, criteria(0.7, true));
        inst.close_voting(1).unwrap();
        let v = inst.check_decision_criteria(&inst.criteria.clone(), p);
        inst.apply_verdict(v).unwrap();
        inst
    }

    #[test]
    fn deep_searcher_guards() {
        let mut l = ledger();
        let p = WaterfallParams::default();
        let mut inst = escalated(&p, &mut l);
        let low = inst.deep_searcher_resolve(Agent::new(SEARCHER, Role::DeepSearcher), Amount::tokens(49), Side::Disagree, &p, &mut l, 2);
        assert!(matches!(low, Err(WaterfallError::BelowMinimum { .. })));
        let role = inst.deep_searcher_resolve(Agent::new(V1, Role::Verifier), Amount::tokens(50), Side::Disagree, &p, &mut l, 2);
        assert!(matches!(role, Err(WaterfallError::WrongRole { .. })));
        inst.deep_searcher_resolve(Agent::new(SEARCHER, Role::DeepSearcher), Amount::tokens(50), Side::Disagree, &p, &mut l, 2).unwrap();
        assert_eq!(inst.state(), InstanceState::ArbitrationWindow);
        assert_eq!(inst.resolution().unwrap().outcome, Side::Disagree);
        assert_eq!(l.sub(SEARCHER, SubAccount::Staked, Token::Alpha), Amount::tokens(50));
    }

    #[test]
    fn upheld_challenge_flips_and_slashes_searcher() {
        let mut l = ledger();
        let p = WaterfallParams::default();
        let mut inst = escalated(&p, &mut l);
        inst.deep_searcher_resolve(Agent::new(SEARCHER, Role::DeepSearcher), Amount::tokens(50), Side::Agree, &p, &mut l, 2).unwrap();
        let out = inst
            .arbitrator_challenge(Agent::new(ARB, Role::Arbitrator), 0, Amount::tokens(100), true, &p, &mut l, 3)
            .unwrap();
        assert!(matches!(out, ArbitrationOutcome::Upheld { new_outcome: Side::Disagree, slashed, .. } if slashed == Amount::tokens(50)));
        assert_eq!(l.sub(SEARCHER, SubAccount::Staked, Token::Alpha), Amount::ZERO);
        assert_eq!(l.protocol(ProtocolAccount::SlashPool, Token::Alpha), Amount::tokens(50));
        assert_eq!(inst.state(), InstanceState::Reversed);
        let r = inst.settle_instance(&p, &mut l, 3).unwrap();
        assert_eq!(r.outcome, Side::Disagree);
        assert!(!r.allocation_eligible);
        assert_eq!(inst.state(), InstanceState::Settled);
        l.check_invariants().unwrap();
    }

    #[test]
    fn failed_challenge_forfeits_arbitrator_stake() {
        let mut l = ledger();
        let p = WaterfallParams::default();
        let mut inst = escalated(&p, &mut l);
        inst.deep_searcher_resolve(Agent::new(SEARCHER, Role::DeepSearcher), Amount::tokens(50), Side::Agree, &p, &mut l, 2).unwrap();
        let out = inst
            .arbitrator_challenge(Agent::new(ARB, Role::Arbitrator), 0, Amount::tokens(100), false, &p, &mut l, 3)
            .unwrap();
        assert_eq!(out, ArbitrationOutcome::Failed { forfeited: Amount::tokens(100) });
        assert_eq!(l.protocol(ProtocolAccount::SlashPool, Token::Alpha), Amount::tokens(100));
        let r = inst.settle_instance(&p, &mut l, 3).unwrap();
        assert_eq!(r.outcome, Side::Agree);
        assert_eq!(l.sub(SEARCHER, SubAccount::Staked, Token::Alpha), Amount::ZERO);
        assert_eq!(l.free(SEARCHER, Token::Alpha), Amount::tokens(502));
        l.check_invariants().unwrap();
    }

    #[test]
    fn challenge_after_window_rejected() {
        let mut l = ledger();
        let p = WaterfallParams { min_arbitrator_participation: 2, ..Default::default() };
        let mut inst = escalated(&p, &mut l);
        inst.deep_searcher_resolve(Agent::new(SEARCHER, Role::DeepSearcher), Amount::tokens(50), Side::Agree, &p, &mut l, 2).unwrap();
        let arb = Agent::new(ARB, Role::Arbitrator);
        assert_eq!(
            inst.arbitrator_challenge(arb, 1, Amount::tokens(100), true, &p, &mut l, 3),
            Err(WaterfallError::Unqualified(ARB))
        );
        assert_eq!(
            inst.arbitrator_challenge(arb, 5, Amount::tokens(100), true, &p, &mut l, 5),
            Err(WaterfallError::WindowClosed { deadline: 4 })
        );
        assert_eq!(inst.settle_instance(&p, &mut l, 4).unwrap_err(), WaterfallError::Premature(InstanceId(7)));
        let r = inst.settle_instance(&p, &mut l, 5).unwrap();
        assert_eq!(r.outcome, Side::Agree);
    }

    #[test]
    fn community_settlement_conserves_and_mints() {
        let mut l = ledger();
        let p = WaterfallParams::default();
        let mut inst = open(&p, &mut l, criteria(0.6, false));
        for v in [V1, V2, SEARCHER] {
            inst.cast_vote(v, Side::Agree, Amount::tokens(20), Phase::Assessment, &p, &mut l).unwrap();
        }
        inst.cast_vote(ARB, Side::Disagree, Amount::tokens(30), Phase::Assessment, &p, &mut l).unwrap();
        inst.close_voting(2).unwrap();
        let v = inst.check_decision_criteria(&inst.criteria.clone(), &p);
        assert_eq!(v, CriteriaVerdict::Resolved(Side::Agree));
        inst.apply_verdict(v).unwrap();
        let r = inst.settle_instance(&p, &mut l, 2).unwrap();
        assert_eq!(r.payouts.iter().map(|(_, a)| *a).sum::<Amount>(), r.total_staked);
        assert_eq!(r.mints.len(), 3);
        assert!(r.allocation_eligible);
        assert_eq!(inst.settle_instance(&p, &mut l, 2).unwrap_err(), WaterfallError::Premature(InstanceId(7)));
        for a in [PROPOSER, V1, V2, SEARCHER, ARB] {
            assert_eq!(l.sub(a, SubAccount::Escrowed, Token::Supra), Amount::ZERO);
        }
        l.check_invariants().unwrap();
    }

    #[test]
    fn disagree_outcome_takes_proposer_stake() {
        let mut l = ledger();
        let p = WaterfallParams { fee_rate: Ppm(0), ..Default::default() };
        let mut inst = open(&p, &mut l, criteria(0.6, false));
        inst.cast_vote(V1, Side::Disagree, Amount::tokens(400), Phase::Assessment, &p, &mut l).unwrap();
        inst.close_voting(2).unwrap();
        let v = inst.check_decision_criteria(&inst.criteria.clone(), &p);
        inst.apply_verdict(v).unwrap();
        let r = inst.settle_instance(&p, &mut l, 2).unwrap();
        assert_eq!(r.outcome, Side::Disagree);
        assert_eq!(l.free(V1, Token::Supra), Amount::tokens(10_100));
        assert_eq!(l.free(PROPOSER, Token::Supra), Amount::tokens(9_900));
        assert!(!inst.allocation_eligible());
    }

    #[test]
    fn lmsr_settlement_draws_on_bond() {
        let mut l = ledger();
        let p = WaterfallParams { mechanism: Mechanism::Lmsr { liquidity: 50.0 }, fee_rate: Ppm(0), ..Default::default() };
        let mut inst = open(&p, &mut l, criteria(0.6, false));
        let r1 = inst.cast_vote(V1, Side::Agree, Amount::tokens(30), Phase::Assessment, &p, &mut l).unwrap();
        assert!(r1.staked <= Amount::tokens(30) && r1.shares > r1.staked);
        inst.close_voting(2).unwrap();
        let v = inst.check_decision_criteria(&inst.criteria.clone(), &p);
        assert_eq!(v, CriteriaVerdict::Resolved(Side::Agree));
        inst.apply_verdict(v).unwrap();
        let r = inst.settle_instance(&p, &mut l, 2).unwrap();
        let loss = r.maker_loss.unwrap();
        assert!(loss > 0.0 && loss <= 50.0 * 2f64.ln() + 1e-6);
        assert_eq!(r.bond_used, r1.shares - r1.staked);
        assert_eq!(l.free(V1, Token::Supra), Amount::tokens(10_000) - r1.staked + r1.shares);
        l.check_invariants().unwrap();
    }

    #[test]
    fn reopen_cadence() {
        let mut l = ledger();
        let mut i = intention(&mut l, criteria(0.7, false));
        assert!(!reopen_intention(&i, 100, Phase::Rebalancing));
        i.last_validation_epoch = Some(10);
        assert!(reopen_intention(&i, 15, Phase::Rebalancing));
        assert!(!reopen_intention(&i, 14, Phase::Rebalancing));
        assert!(!reopen_intention(&i, 15, Phase::Assessment));
    }

    #[test]
    fn reputation_weighted_reward() {
        let flat = WaterfallParams::default();
        assert_eq!(flat.verifier_reward_for(Amount::tokens(1000)), Amount::tokens(1));
        let p = WaterfallParams { reward_reputation_scale: Amount::tokens(100), ..Default::default() };
        assert_eq!(p.verifier_reward_for(Amount::ZERO), Amount::tokens(1));
        assert_eq!(p.verifier_reward_for(Amount::tokens(50)), Amount(1_500_000));
        assert_eq!(p.verifier_reward_for(Amount::tokens(400)), Amount::tokens(2));
    }

    #[test]
    fn transition_relation() {
        use InstanceState::*;
        assert!(Initiated.can_transition(MarketOpen));
        assert!(ArbitrationWindow.can_transition(Reversed));
        assert!(!Settled.can_transition(Settled));
        assert!(!MarketOpen.can_transition(Settled));
        assert!(!Reversed.can_transition(ArbitrationWindow));
    }
}
