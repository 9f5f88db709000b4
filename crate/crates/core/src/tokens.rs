//! Dual-token ledger. SUPRA is the collateral/fee token and is conserved after genesis;
//! Alpha is the reputation token, minted as verification rewards and burned on intention
//! creation. Every mutation is atomic and recorded in a journal that can be replayed.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AgentId, StrategyId};
use crate::num::Amount;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Token {
    Supra,
    Alpha,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Token::Supra => "SUPRA",
            Token::Alpha => "ALPHA",
        })
    }
}

/// Agent sub-balances. SUPRA uses free/staked/escrowed, Alpha uses free/staked/locked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SubAccount {
    Free,
    Staked,
    Escrowed,
    Locked,
}

impl SubAccount {
    fn valid_for(self, token: Token) -> bool {
        !matches!((token, self), (Token::Supra, SubAccount::Locked) | (Token::Alpha, SubAccount::Escrowed))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProtocolAccount {
    FeePool,
    SlashPool,
    LotteryPool,
    SubsidyPool,
    /// Flat per-audit gas fees end up here.
    GasSink,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Account {
    Agent(AgentId, SubAccount),
    Protocol(ProtocolAccount),
}

impl Account {
    pub fn free(agent: AgentId) -> Self {
        Account::Agent(agent, SubAccount::Free)
    }

    fn valid_for(self, token: Token) -> bool {
        match self {
            Account::Agent(_, sub) => sub.valid_for(token),
            Account::Protocol(_) => true,
        }
    }
}

impl fmt::Display for Account {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Account::Agent(a, sub) => write!(f, "{a},{}", format!("{sub:?}").to_lowercase()),
            Account::Protocol(p) => {
                let name = match p {
                    ProtocolAccount::FeePool => "fee_pool",
                    ProtocolAccount::SlashPool => "slash_pool",
                    ProtocolAccount::LotteryPool => "lottery_pool",
                    ProtocolAccount::SubsidyPool => "subsidy_pool",
                    ProtocolAccount::GasSink => "gas_sink",
                };
                write!(f, "protocol:{name},balance")
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MoveKind {
    Stake,
    Release,
    Escrow,
    Lock,
    Transfer,
    Slash,
    Fee,
    Payout,
    Commission,
    Audit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MintReason {
    Genesis,
    VerifierReward,
    DeepSearcherReward,
    ArbitratorReward,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BurnReason {
    IntentionCreation,
    Decay,
}

/// One primitive ledger mutation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LedgerEntry {
    Genesis { account: Account, amount: Amount },
    Move { token: Token, kind: MoveKind, from: Account, to: Account, amount: Amount },
    Mint { to: AgentId, amount: Amount, reason: MintReason },
    Burn { from: AgentId, amount: Amount, reason: BurnReason },
}

#[derive(Debug, Error, PartialEq)]
pub enum LedgerError {
    #[error("{account} holds {available} {token}, needs {needed}")]
    Insufficient { account: Account, token: Token, needed: Amount, available: Amount },
    #[error("amount must be positive, got {0}")]
    NonPositive(Amount),
    #[error("{account} cannot hold {token}")]
    InvalidAccount { account: Account, token: Token },
    #[error("{0} is not eligible for an Alpha reward")]
    Ineligible(AgentId),
    #[error("genesis credits are closed")]
    Sealed,
    #[error("slashes must be credited to the slash pool")]
    SlashDestination,
    #[error("ledger invariant violated: {0}")]
    Invariant(String),
}

/// Fraction in parts per million; keeps fee and commission arithmetic exact.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ppm(pub u32);

impl Ppm {
    pub const ONE: Ppm = Ppm(1_000_000);

    pub fn from_fraction(f: f64) -> Ppm {
        assert!((0.0..=1.0).contains(&f), "fraction out of [0, 1]");
        Ppm((f * 1e6).round() as u32)
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn of_floor(self, amount: Amount) -> Amount {
        amount.mul_div_floor(self.0 as i64, 1_000_000)
    }
}

/// Performance-linked commission owed to a proposer on realised positive value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommissionContract {
    pub proposer: AgentId,
    pub strategy: StrategyId,
    pub rate: Ppm,
    pub active: bool,
}

impl CommissionContract {
    pub fn new(proposer: AgentId, strategy: StrategyId, rate: Ppm) -> Self {
        Self { proposer, strategy, rate, active: false }
    }

    pub fn activate(&mut self) {
        self.active = true;
    }

    pub fn cancel(&mut self) {
        self.active = false;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommissionPaid {
    pub to_proposer: Amount,
    pub to_subsidy: Amount,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DualLedger {
    balances: BTreeMap<(Account, Token), Amount>,
    supra_genesis: Amount,
    alpha_minted: Amount,
    alpha_burned: Amount,
    fee_gross: Amount,
    fee_collected: Amount,
    /// Sub-micro fee remainder, in millionths of a micro-unit.
    fee_carry: i64,
    sealed: bool,
    #[serde(skip)]
    journal: Vec<LedgerEntry>,
}

impl DualLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn balance(&self, account: Account, token: Token) -> Amount {
        self.balances.get(&(account, token)).copied().unwrap_or(Amount::ZERO)
    }

    pub fn free(&self, agent: AgentId, token: Token) -> Amount {
        self.balance(Account::free(agent), token)
    }

    pub fn sub(&self, agent: AgentId, sub: SubAccount, token: Token) -> Amount {
        self.balance(Account::Agent(agent, sub), token)
    }

    pub fn protocol(&self, account: ProtocolAccount, token: Token) -> Amount {
        self.balance(Account::Protocol(account), token)
    }

    /// Total Alpha an agent controls; used as its reputation score.
    pub fn reputation(&self, agent: AgentId) -> Amount {
        [SubAccount::Free, SubAccount::Staked, SubAccount::Locked]
            .into_iter()
            .map(|s| self.sub(agent, s, Token::Alpha))
            .sum()
    }

    pub fn alpha_minted_total(&self) -> Amount {
        self.alpha_minted
    }

    pub fn alpha_burned_total(&self) -> Amount {
        self.alpha_burned
    }

    pub fn total(&self, token: Token) -> Amount {
        self.balances.iter().filter(|((_, t), _)| *t == token).map(|(_, v)| *v).sum()
    }

    pub fn supra_genesis_total(&self) -> Amount {
        self.supra_genesis
    }

    pub fn fee_totals(&self) -> (Amount, Amount) {
        (self.fee_gross, self.fee_collected)
    }

    /// Non-zero balances in deterministic order.
    pub fn balances(&self) -> impl Iterator<Item = (Account, Token, Amount)> + '_ {
        self.balances.iter().filter(|(_, v)| v.0 != 0).map(|((a, t), v)| (*a, *t, *v))
    }

    /// Drains the entries recorded since the last call.
    pub fn take_journal(&mut self) -> Vec<LedgerEntry> {
        std::mem::take(&mut self.journal)
    }

    /// Initial allocation. SUPRA credits define the conserved supply; Alpha credits count as
    /// minted.
    pub fn genesis_credit(&mut self, account: Account, token: Token, amount: Amount) -> Result<(), LedgerError> {
        if self.sealed {
            return Err(LedgerError::Sealed);
        }
        if !amount.is_positive() {
            return Err(LedgerError::NonPositive(amount));
        }
        if !account.valid_for(token) {
            return Err(LedgerError::InvalidAccount { account, token });
        }
        match (token, account) {
            (Token::Supra, _) => {
                self.apply(LedgerEntry::Genesis { account, amount });
            }
            (Token::Alpha, Account::Agent(agent, SubAccount::Free)) => {
                self.apply(LedgerEntry::Mint { to: agent, amount, reason: MintReason::Genesis });
            }
            (Token::Alpha, _) => return Err(LedgerError::InvalidAccount { account, token }),
        }
        Ok(())
    }

    pub fn seal(&mut self) {
        self.sealed = true;
    }

    /// Applies a journal entry without validation. Used by [`Self::replay`] and internally once
    /// an operation has been checked.
    fn apply(&mut self, entry: LedgerEntry) {
        match &entry {
            LedgerEntry::Genesis { account, amount } => {
                *self.slot(*account, Token::Supra) += *amount;
                self.supra_genesis += *amount;
            }
            LedgerEntry::Move { token, from, to, amount, kind } => {
                *self.slot(*from, *token) -= *amount;
                *self.slot(*to, *token) += *amount;
                if *kind == MoveKind::Fee {
                    self.fee_collected += *amount;
                }
            }
            LedgerEntry::Mint { to, amount, .. } => {
                *self.slot(Account::free(*to), Token::Alpha) += *amount;
                self.alpha_minted += *amount;
            }
            LedgerEntry::Burn { from, amount, .. } => {
                *self.slot(Account::free(*from), Token::Alpha) -= *amount;
                self.alpha_burned += *amount;
            }
        }
        self.journal.push(entry);
    }

    fn slot(&mut self, account: Account, token: Token) -> &mut Amount {
        self.balances.entry((account, token)).or_insert(Amount::ZERO)
    }

    /// Applies a set of moves atomically: either every move happens or none does.
    pub fn transfer_batch(&mut self, token: Token, kind: MoveKind, moves: &[(Account, Account, Amount)]) -> Result<(), LedgerError> {
        let mut net: BTreeMap<Account, Amount> = BTreeMap::new();
        for (from, to, amount) in moves {
            if amount.is_negative() {
                return Err(LedgerError::NonPositive(*amount));
            }
            for acc in [from, to] {
                if !acc.valid_for(token) {
                    return Err(LedgerError::InvalidAccount { account: *acc, token });
                }
            }
            if kind == MoveKind::Slash && *to != Account::Protocol(ProtocolAccount::SlashPool) {
                return Err(LedgerError::SlashDestination);
            }
            *net.entry(*from).or_insert(Amount::ZERO) -= *amount;
            *net.entry(*to).or_insert(Amount::ZERO) += *amount;
        }
        for (account, delta) in &net {
            let available = self.balance(*account, token);
            if (available + *delta).is_negative() {
                return Err(LedgerError::Insufficient { account: *account, token, needed: -*delta, available });
            }
        }
        for (from, to, amount) in moves {
            if amount.is_positive() {
                self.apply(LedgerEntry::Move { token, kind, from: *from, to: *to, amount: *amount });
            }
        }
        Ok(())
    }

    pub fn transfer(&mut self, token: Token, kind: MoveKind, from: Account, to: Account, amount: Amount) -> Result<(), LedgerError> {
        if !amount.is_positive() {
            return Err(LedgerError::NonPositive(amount));
        }
        self.transfer_batch(token, kind, &[(from, to, amount)])
    }

    /// Free → staked.
    pub fn stake(&mut self, agent: AgentId, token: Token, amount: Amount) -> Result<(), LedgerError> {
        self.transfer(token, MoveKind::Stake, Account::free(agent), Account::Agent(agent, SubAccount::Staked), amount)
    }

    /// Staked → free.
    pub fn release(&mut self, agent: AgentId, token: Token, amount: Amount) -> Result<(), LedgerError> {
        self.transfer(token, MoveKind::Release, Account::Agent(agent, SubAccount::Staked), Account::free(agent), amount)
    }

    /// Free SUPRA → escrowed (market stakes, intention deposits).
    pub fn escrow(&mut self, agent: AgentId, amount: Amount) -> Result<(), LedgerError> {
        self.transfer(Token::Supra, MoveKind::Escrow, Account::free(agent), Account::Agent(agent, SubAccount::Escrowed), amount)
    }

    /// Escrowed SUPRA → free.
    pub fn unescrow(&mut self, agent: AgentId, amount: Amount) -> Result<(), LedgerError> {
        self.transfer(Token::Supra, MoveKind::Release, Account::Agent(agent, SubAccount::Escrowed), Account::free(agent), amount)
    }

    /// Free Alpha → locked (governance lock).
    pub fn lock_alpha(&mut self, agent: AgentId, amount: Amount) -> Result<(), LedgerError> {
        self.transfer(Token::Alpha, MoveKind::Lock, Account::free(agent), Account::Agent(agent, SubAccount::Locked), amount)
    }

    pub fn unlock_alpha(&mut self, agent: AgentId, amount: Amount) -> Result<(), LedgerError> {
        self.transfer(Token::Alpha, MoveKind::Release, Account::Agent(agent, SubAccount::Locked), Account::free(agent), amount)
    }

    /// Moves `amount` out of an agent's staked or escrowed balance into the slash pool.
    pub fn slash(&mut self, agent: AgentId, token: Token, from: SubAccount, amount: Amount) -> Result<(), LedgerError> {
        if from == SubAccount::Free {
            return Err(LedgerError::InvalidAccount { account: Account::free(agent), token });
        }
        self.transfer(token, MoveKind::Slash, Account::Agent(agent, from), Account::Protocol(ProtocolAccount::SlashPool), amount)
    }

    /// Mints Alpha to a recipient that satisfied the settlement eligibility function.
    pub fn mint_alpha(&mut self, recipient: AgentId, amount: Amount, reason: MintReason, eligible: bool) -> Result<(), LedgerError> {
        if !eligible || reason == MintReason::Genesis {
            return Err(LedgerError::Ineligible(recipient));
        }
        if !amount.is_positive() {
            return Err(LedgerError::NonPositive(amount));
        }
        self.apply(LedgerEntry::Mint { to: recipient, amount, reason });
        Ok(())
    }

    /// Non-refundable Alpha burn paid when an intention is created.
    pub fn burn_alpha_for_intention(&mut self, owner: AgentId, amount: Amount) -> Result<(), LedgerError> {
        self.burn(owner, amount, BurnReason::IntentionCreation)
    }

    fn burn(&mut self, owner: AgentId, amount: Amount, reason: BurnReason) -> Result<(), LedgerError> {
        if !amount.is_positive() {
            return Err(LedgerError::NonPositive(amount));
        }
        let available = self.free(owner, Token::Alpha);
        if available < amount {
            return Err(LedgerError::Insufficient { account: Account::free(owner), token: Token::Alpha, needed: amount, available });
        }
        self.apply(LedgerEntry::Burn { from: owner, amount, reason });
        Ok(())
    }

    /// Burns `rate` of every agent's free Alpha. Returns the total burned.
    pub fn decay_alpha(&mut self, rate: Ppm) -> Amount {
        let holders: Vec<(AgentId, Amount)> = self
            .balances
            .iter()
            .filter_map(|((acc, tok), v)| match (acc, tok) {
                (Account::Agent(a, SubAccount::Free), Token::Alpha) if v.is_positive() => Some((*a, *v)),
                _ => None,
            })
            .collect();
        let mut total = Amount::ZERO;
        for (agent, free) in holders {
            let amount = rate.of_floor(free);
            if amount.is_positive() {
                self.burn(agent, amount, BurnReason::Decay).expect("decay within free balance");
                total += amount;
            }
        }
        total
    }

    /// Takes the validation fee on a market trade of `gross` from the trader's free SUPRA.
    /// Fees are rounded so that the running fee total is always `floor(rate * running gross)`.
    /// Returns the fee; the caller stakes `gross - fee`.
    pub fn charge_validation_fee(&mut self, trader: AgentId, gross: Amount, rate: Ppm) -> Result<Amount, LedgerError> {
        if !gross.is_positive() {
            return Err(LedgerError::NonPositive(gross));
        }
        let exact = gross.0 as i128 * rate.0 as i128 + self.fee_carry as i128;
        let fee = Amount((exact / 1_000_000) as i64);
        if fee.is_positive() {
            self.transfer(Token::Supra, MoveKind::Fee, Account::free(trader), Account::Protocol(ProtocolAccount::FeePool), fee)?;
        }
        self.fee_carry = (exact % 1_000_000) as i64;
        self.fee_gross += gross;
        Ok(fee)
    }

    /// Pays `rate * value` from the payer's free SUPRA to the proposer, diverting a share to the
    /// subsidy pool. Inactive contracts and non-positive values pay nothing.
    pub fn pay_commission(
        &mut self,
        contract: &CommissionContract,
        payer: AgentId,
        value: Amount,
        diverted: Ppm,
    ) -> Result<CommissionPaid, LedgerError> {
        if !contract.active || !value.is_positive() {
            return Ok(CommissionPaid::default());
        }
        let commission = contract.rate.of_floor(value);
        let to_subsidy = diverted.of_floor(commission);
        let to_proposer = commission - to_subsidy;
        let mut moves = Vec::new();
        if to_proposer.is_positive() {
            moves.push((Account::free(payer), Account::free(contract.proposer), to_proposer));
        }
        if to_subsidy.is_positive() {
            moves.push((Account::free(payer), Account::Protocol(ProtocolAccount::SubsidyPool), to_subsidy));
        }
        self.transfer_batch(Token::Supra, MoveKind::Commission, &moves)?;
        Ok(CommissionPaid { to_proposer, to_subsidy })
    }

    /// Conservation and sign checks.
    pub fn check_invariants(&self) -> Result<(), LedgerError> {
        if let Some(((acc, tok), v)) = self.balances.iter().find(|(_, v)| v.is_negative()) {
            return Err(LedgerError::Invariant(format!("negative balance {v} {tok} in {acc}")));
        }
        let supra = self.total(Token::Supra);
        if supra != self.supra_genesis {
            return Err(LedgerError::Invariant(format!("SUPRA supply {supra} differs from genesis {}", self.supra_genesis)));
        }
        let alpha = self.total(Token::Alpha);
        if alpha != self.alpha_minted - self.alpha_burned {
            return Err(LedgerError::Invariant(format!(
                "circulating Alpha {alpha} differs from minted {} minus burned {}",
                self.alpha_minted, self.alpha_burned
            )));
        }
        Ok(())
    }

    /// Rebuilds a ledger by folding journal entries.
    pub fn replay<'a>(entries: impl IntoIterator<Item = &'a LedgerEntry>) -> DualLedger {
        let mut ledger = DualLedger::new();
        for e in entries {
            ledger.apply(e.clone());
        }
        ledger.journal.clear();
        ledger
    }

    /// Applies one replayed entry.
    pub fn apply_replayed(&mut self, entry: &LedgerEntry) {
        self.apply(entry.clone());
        self.journal.clear();
    }

    /// Snapshot records: `account_id,sub_balance,token,amount_micros`, one per line.
    pub fn snapshot_lines(&self) -> Vec<String> {
        self.balances().map(|(acc, tok, amt)| format!("{acc},{tok},{amt}")).collect()
    }

    /// Balances compare equal regardless of zero entries or pending journal.
    pub fn same_state(&self, other: &DualLedger) -> bool {
        self.balances().eq(other.balances())
            && self.alpha_minted == other.alpha_minted
            && self.alpha_burned == other.alpha_burned
            && self.supra_genesis == other.supra_genesis
    }
}
