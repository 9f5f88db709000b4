use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{MarketError, MarketStatus, Payouts, Side};
use crate::model::{AgentId, InstanceId};
use crate::num::{apportion, Amount, Scalar};

/// Binary staking pool where the losing side's stakes are shared pro rata among winners.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParimutuelPool {
    pub claim: InstanceId,
    stakes: BTreeMap<(AgentId, Side), Amount>,
    total_agree: Amount,
    total_disagree: Amount,
    status: MarketStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParimutuelSettlement {
    pub outcome: Side,
    /// Gross amount returned to each participant (own stake included).
    pub payouts: Payouts,
    /// Set when nobody backed the winning side and every stake was returned.
    pub refunded: bool,
    pub total_staked: Amount,
}

impl ParimutuelPool {
    pub fn new(claim: InstanceId) -> Self {
        Self {
            claim,
            stakes: BTreeMap::new(),
            total_agree: Amount::ZERO,
            total_disagree: Amount::ZERO,
            status: MarketStatus::Open,
        }
    }

    pub fn status(&self) -> MarketStatus {
        self.status
    }

    pub fn total(&self, side: Side) -> Amount {
        match side {
            Side::Agree => self.total_agree,
            Side::Disagree => self.total_disagree,
        }
    }

    pub fn total_staked(&self) -> Amount {
        self.total_agree + self.total_disagree
    }

    pub fn stake_of(&self, voter: AgentId, side: Side) -> Amount {
        self.stakes.get(&(voter, side)).copied().unwrap_or(Amount::ZERO)
    }

    pub fn stakes(&self) -> impl Iterator<Item = (AgentId, Side, Amount)> + '_ {
        self.stakes.iter().map(|((a, s), v)| (*a, *s, *v))
    }

    pub fn is_empty(&self) -> bool {
        self.total_staked() == Amount::ZERO
    }

    pub fn stake(&mut self, voter: AgentId, side: Side, amount: Amount) -> Result<(), MarketError> {
        if self.status != MarketStatus::Open {
            return Err(MarketError::Resolved);
        }
        if !amount.is_positive() {
            return Err(MarketError::NonPositiveAmount);
        }
        let total = match side {
            Side::Agree => &mut self.total_agree,
            Side::Disagree => &mut self.total_disagree,
        };
        *total = total.checked_add(amount).ok_or(MarketError::Overflow)?;
        *self.stakes.entry((voter, side)).or_insert(Amount::ZERO) += amount;
        Ok(())
    }

    /// Share of all stake sitting on Agree.
    pub fn implied_probability<S: Scalar>(&self) -> Result<S, MarketError> {
        let total = self.total_staked();
        if total == Amount::ZERO {
            return Err(MarketError::EmptyPool);
        }
        let yes = S::from_i64(self.total_agree.0).unwrap();
        Ok(yes / S::from_i64(total.0).unwrap())
    }

    /// Pays each winner its own stake plus its pro-rata share of the losing pool. Payouts are
    /// apportioned by largest remainder so they sum to the pool total exactly. With nobody on
    /// the winning side, every stake is refunded.
    pub fn settle(&mut self, outcome: Side) -> Result<ParimutuelSettlement, MarketError> {
        if self.status != MarketStatus::Open {
            return Err(MarketError::Resolved);
        }
        let total = self.total_staked();
        let mut payouts = Payouts::new();
        let refunded = self.total(outcome) == Amount::ZERO;
        if refunded {
            for ((voter, _), amount) in &self.stakes {
                *payouts.entry(*voter).or_insert(Amount::ZERO) += *amount;
            }
        } else {
            let winners: Vec<(AgentId, Amount)> = self
                .stakes
                .iter()
                .filter(|((_, side), _)| *side == outcome)
                .map(|((voter, _), amount)| (*voter, *amount))
                .collect();
            let weights: Vec<i64> = winners.iter().map(|(_, a)| a.0).collect();
            for ((voter, _), paid) in winners.iter().zip(apportion(total, &weights)) {
                payouts.insert(*voter, paid);
            }
        }
        self.status = MarketStatus::Resolved(outcome);
        Ok(ParimutuelSettlement { outcome, payouts, refunded, total_staked: total })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(entries: &[(u32, Side, i64)]) -> ParimutuelPool {
        let mut p = ParimutuelPool::new(InstanceId(0));
        for (a, s, amt) in entries {
            p.stake(AgentId(*a), *s, Amount::tokens(*amt)).unwrap();
        }
        p
    }

    #[test]
    fn stake_accumulates() {
        let mut p = ParimutuelPool::new(InstanceId(1));
        p.stake(AgentId(1), Side::Agree, Amount::tokens(10)).unwrap();
        assert_eq!((p.total(Side::Agree), p.total(Side::Disagree)), (Amount::tokens(10), Amount::ZERO));
        p.stake(AgentId(2), Side::Disagree, Amount::tokens(4)).unwrap();
        assert_eq!(p.total(Side::Disagree), Amount::tokens(4));
        assert_eq!(p.stake(AgentId(2), Side::Disagree, Amount::ZERO), Err(MarketError::NonPositiveAmount));
        p.settle(Side::Agree).unwrap();
        assert_eq!(p.stake(AgentId(3), Side::Agree, Amount::tokens(1)), Err(MarketError::Resolved));
        assert_eq!(p.settle(Side::Agree).unwrap_err(), MarketError::Resolved);
    }

    #[test]
    fn implied_probability() {
        let p = pool(&[(1, Side::Agree, 60), (2, Side::Disagree, 40)]);
        assert!((p.implied_probability::<f64>().unwrap() - 0.6).abs() < 1e-15);
        let even = pool(&[(1, Side::Agree, 10), (2, Side::Disagree, 10)]);
        assert_eq!(even.implied_probability::<f64>().unwrap(), 0.5);
        assert_eq!(ParimutuelPool::new(InstanceId(0)).implied_probability::<f64>(), Err(MarketError::EmptyPool));
    }

    #[test]
    fn winner_payout_includes_stake_and_share() {
        // winner holds 10 of a 60 Agree pool against 40 Disagree: 10 + 10 * 40/60
        let mut p = pool(&[(1, Side::Agree, 10), (2, Side::Agree, 50), (3, Side::Disagree, 40)]);
        let s = p.settle(Side::Agree).unwrap();
        let expected = 10.0 + 10.0 * 40.0 / 60.0;
        assert!((s.payouts[&AgentId(1)].to_real::<f64>() - expected).abs() <= 1e-6);
        assert_eq!(s.payouts.values().copied().sum::<Amount>(), Amount::tokens(100));
        assert!(!s.payouts.contains_key(&AgentId(3)));
    }

    #[test]
    fn zero_losing_pool_returns_stakes() {
        let mut p = pool(&[(1, Side::Agree, 10), (2, Side::Agree, 7)]);
        let s = p.settle(Side::Agree).unwrap();
        assert_eq!(s.payouts[&AgentId(1)], Amount::tokens(10));
        assert_eq!(s.payouts[&AgentId(2)], Amount::tokens(7));
    }

    #[test]
    fn equal_winners_split_losing_pool() {
        let mut p = pool(&[(1, Side::Agree, 30), (2, Side::Agree, 30), (3, Side::Disagree, 40)]);
        let s = p.settle(Side::Agree).unwrap();
        assert_eq!(s.payouts[&AgentId(1)], Amount::tokens(50));
        assert_eq!(s.payouts[&AgentId(2)], Amount::tokens(50));
    }

    #[test]
    fn empty_winning_side_refunds() {
        let mut p = pool(&[(1, Side::Agree, 10), (2, Side::Agree, 5)]);
        let s = p.settle(Side::Disagree).unwrap();
        assert!(s.refunded);
        assert_eq!(s.payouts[&AgentId(1)], Amount::tokens(10));
        assert_eq!(p.status(), MarketStatus::Resolved(Side::Disagree));
    }
}
