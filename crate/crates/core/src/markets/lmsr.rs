use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{MarketError, MarketStatus, Side};
use crate::model::{AgentId, InstanceId};
use crate::num::Scalar;

/// `ln(1 + e^z)` without overflow.
fn softplus<S: Scalar>(z: S) -> S {
    if z > S::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`: `ln(e^y - 1)`.
fn softplus_inv<S: Scalar>(y: S) -> S {
    y + (-(-y).exp_m1()).ln()
}

/// `1 / (1 + e^-z)`, clamped to the open unit interval.
fn sigmoid<S: Scalar>(z: S) -> S {
    let p = if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    };
    p.max(S::min_positive_value()).min(S::one() - S::epsilon())
}

/// Logarithmic market scoring rule maker for one binary claim. Buys only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmsrMarket<S> {
    pub claim: InstanceId,
    q_yes: S,
    q_no: S,
    liquidity: S,
    collected: S,
    holdings: BTreeMap<(AgentId, Side), S>,
    status: MarketStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmsrSettlement<S> {
    pub outcome: Side,
    /// One unit per winning share held.
    pub payouts: BTreeMap<AgentId, S>,
    /// Total paid out minus total collected.
    pub maker_loss: S,
}

impl<S: Scalar> LmsrMarket<S> {
    pub fn new(claim: InstanceId, liquidity: S) -> Result<Self, MarketError> {
        if !(liquidity > S::zero()) {
            return Err(MarketError::NonPositiveLiquidity);
        }
        Ok(Self {
            claim,
            q_yes: S::zero(),
            q_no: S::zero(),
            liquidity,
            collected: S::zero(),
            holdings: BTreeMap::new(),
            status: MarketStatus::Open,
        })
    }

    pub fn liquidity(&self) -> S {
        self.liquidity
    }

    pub fn shares(&self, side: Side) -> S {
        match side {
            Side::Agree => self.q_yes,
            Side::Disagree => self.q_no,
        }
    }

    pub fn collected(&self) -> S {
        self.collected
    }

    pub fn status(&self) -> MarketStatus {
        self.status
    }

    pub fn holding(&self, voter: AgentId, side: Side) -> S {
        self.holdings.get(&(voter, side)).copied().unwrap_or_else(S::zero)
    }

    pub fn has_trades(&self) -> bool {
        !self.holdings.is_empty()
    }

    /// Worst-case maker loss, `liquidity * ln 2`.
    pub fn loss_bound(&self) -> S {
        self.liquidity * S::LN_2()
    }

    /// Cost function value `l * ln(e^{q_yes/l} + e^{q_no/l})`.
    pub fn cost_function(&self) -> S {
        let (a, b) = (self.q_yes / self.liquidity, self.q_no / self.liquidity);
        let m = a.max(b);
        self.liquidity * (m + softplus(a.min(b) - m))
    }

    /// Price of buying `delta_q` shares of `side`, as the difference of the cost function.
    pub fn cost(&self, side: Side, delta_q: S) -> Result<S, MarketError> {
        if self.status != MarketStatus::Open {
            return Err(MarketError::Resolved);
        }
        if !(delta_q > S::zero()) {
            return Err(MarketError::NonPositiveAmount);
        }
        let d = (self.shares(side) - self.shares(side.opposite())) / self.liquidity;
        let x = delta_q / self.liquidity;
        Ok(self.liquidity * (softplus(d + x) - softplus(d)))
    }

    /// Number of `side` shares a budget buys; inverse of [`Self::cost`].
    pub fn shares_for_budget(&self, side: Side, budget: S) -> Result<S, MarketError> {
        if self.status != MarketStatus::Open {
            return Err(MarketError::Resolved);
        }
        if !(budget > S::zero()) {
            return Err(MarketError::NonPositiveAmount);
        }
        let d = (self.shares(side) - self.shares(side.opposite())) / self.liquidity;
        let target = softplus(d) + budget / self.liquidity;
        Ok(self.liquidity * (softplus_inv(target) - d))
    }

    /// Instantaneous price of Agree shares.
    pub fn price(&self) -> S {
        self.price_of(Side::Agree)
    }

    pub fn price_of(&self, side: Side) -> S {
        sigmoid((self.shares(side) - self.shares(side.opposite())) / self.liquidity)
    }

    /// Executes a purchase when its cost does not exceed `available`. Returns the cost.
    pub fn buy(&mut self, voter: AgentId, side: Side, delta_q: S, available: S) -> Result<S, MarketError> {
        let cost = self.cost(side, delta_q)?;
        if cost > available {
            return Err(MarketError::InsufficientBalance {
                voter,
                cost: cost.to_f64().unwrap_or(f64::NAN),
                available: available.to_f64().unwrap_or(f64::NAN),
            });
        }
        match side {
            Side::Agree => self.q_yes = self.q_yes + delta_q,
            Side::Disagree => self.q_no = self.q_no + delta_q,
        }
        let h = self.holdings.entry((voter, side)).or_insert_with(S::zero);
        *h = *h + delta_q;
        self.collected = self.collected + cost;
        Ok(cost)
    }

    pub fn settle(&mut self, outcome: Side) -> Result<LmsrSettlement<S>, MarketError> {
        if self.status != MarketStatus::Open {
            return Err(MarketError::Resolved);
        }
        let mut payouts = BTreeMap::new();
        let mut paid = S::zero();
        for ((voter, side), shares) in &self.holdings {
            if *side == outcome {
                let e = payouts.entry(*voter).or_insert_with(S::zero);
                *e = *e + *shares;
                paid = paid + *shares;
            }
        }
        self.status = MarketStatus::Resolved(outcome);
        Ok(LmsrSettlement { outcome, payouts, maker_loss: paid - self.collected })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn market(l: f64) -> LmsrMarket<f64> {
        LmsrMarket::new(InstanceId(0), l).unwrap()
    }

    /// Direct evaluation of the cost difference, unstable for large q but exact enough here.
    fn naive_cost(qy: f64, qn: f64, l: f64, dq: f64) -> f64 {
        l * ((((qy + dq) / l).exp() + (qn / l).exp()).ln()) - l * (((qy / l).exp() + (qn / l).exp()).ln())
    }

    #[test]
    fn fresh_market_purchase() {
        let mut m = market(100.0);
        let expected = 100.0 * ((0.5_f64.exp() + 1.0) / 2.0).ln();
        assert!((expected - 28.093).abs() < 0.0005);
        let cost = m.buy(AgentId(1), Side::Agree, 50.0, f64::INFINITY).unwrap();
        assert!((cost - expected).abs() < 1e-12);
        assert!(m.price() > 0.5);
        assert_eq!(m.collected(), cost);
    }

    #[test]
    fn cost_matches_naive_formula() {
        let mut m = market(37.0);
        m.buy(AgentId(1), Side::Agree, 12.5, f64::INFINITY).unwrap();
        m.buy(AgentId(2), Side::Disagree, 40.0, f64::INFINITY).unwrap();
        for dq in [0.001, 1.0, 33.3, 250.0] {
            let a = m.cost(Side::Agree, dq).unwrap();
            let b = naive_cost(12.5, 40.0, 37.0, dq);
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-9), "{a} vs {b}");
            let c = m.cost(Side::Disagree, dq).unwrap();
            assert!((c - naive_cost(40.0, 12.5, 37.0, dq)).abs() <= 1e-9 * c.max(1e-9));
        }
    }

    #[test]
    fn price_symmetry_and_inversion() {
        let m = market(100.0);
        assert_eq!(m.price(), 0.5);
        let mut m = market(100.0);
        m.buy(AgentId(1), Side::Agree, 100.0 * 3.0_f64.ln(), f64::INFINITY).unwrap();
        assert!((m.price() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn stable_for_large_quantities() {
        let mut m = market(1.0);
        m.buy(AgentId(1), Side::Agree, 10_000.0, f64::INFINITY).unwrap();
        let c = m.cost(Side::Agree, 1.0).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
        let c = m.cost(Side::Disagree, 1.0).unwrap();
        assert!(c.is_finite() && (0.0..1e-100).contains(&c));
        let p = m.price();
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn budget_inverse() {
        let mut m = market(50.0);
        m.buy(AgentId(1), Side::Disagree, 20.0, f64::INFINITY).unwrap();
        let dq = m.shares_for_budget(Side::Agree, 7.0).unwrap();
        assert!((m.cost(Side::Agree, dq).unwrap() - 7.0).abs() < 1e-9);
    }

    #[test]
    fn insufficient_balance_leaves_market_unchanged() {
        let mut m = market(10.0);
        let before = m.clone();
        let err = m.buy(AgentId(1), Side::Agree, 5.0, 1.0).unwrap_err();
        assert!(matches!(err, MarketError::InsufficientBalance { .. }));
        assert_eq!(m, before);
        assert_eq!(m.cost(Side::Agree, 0.0), Err(MarketError::NonPositiveAmount));
    }

    #[test]
    fn settle_pays_one_per_winning_share() {
        let mut m = market(100.0);
        let s = m.clone().settle(Side::Agree).unwrap();
        assert!(s.payouts.is_empty());
        assert_eq!(s.maker_loss, 0.0);

        let cost = m.buy(AgentId(1), Side::Agree, 30.0, f64::INFINITY).unwrap();
        let s = m.settle(Side::Agree).unwrap();
        assert_eq!(s.payouts[&AgentId(1)], 30.0);
        assert!((s.maker_loss - (30.0 - cost)).abs() < 1e-12);
        assert!(s.maker_loss >= 0.0);
        assert_eq!(m.settle(Side::Agree).unwrap_err(), MarketError::Resolved);
        assert!(m.cost(Side::Agree, 1.0).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let mut m = LmsrMarket::<f32>::new(InstanceId(0), 100.0).unwrap();
        let c = m.buy(AgentId(0), Side::Agree, 50.0, f32::INFINITY).unwrap();
        assert!((c - 28.093).abs() < 1e-2);
        assert!(m.price() > 0.5 && m.price() < 1.0);
    }
}
