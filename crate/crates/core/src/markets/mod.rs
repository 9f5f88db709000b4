//! Binary prediction markets: a parimutuel staking pool and an LMSR market maker.

mod lmsr;
mod parimutuel;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::AgentId;
use crate::num::Amount;

pub use lmsr::{LmsrMarket, LmsrSettlement};
pub use parimutuel::{ParimutuelPool, ParimutuelSettlement};

/// Position on a binary claim.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    Agree,
    Disagree,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Agree => Side::Disagree,
            Side::Disagree => Side::Agree,
        }
    }
}

impl std::ops::Not for Side {
    type Output = Side;
    fn not(self) -> Side {
        self.opposite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarketStatus {
    Open,
    Resolved(Side),
}

#[derive(Debug, Error, PartialEq)]
pub enum MarketError {
    #[error("market is already resolved")]
    Resolved,
    #[error("stake or share quantity must be positive")]
    NonPositiveAmount,
    #[error("no stake on either side; implied probability undefined")]
    EmptyPool,
    #[error("trade costs {cost} but only {available} is available to {voter}")]
    InsufficientBalance { voter: AgentId, cost: f64, available: f64 },
    #[error("liquidity parameter must be positive")]
    NonPositiveLiquidity,
    #[error("stake total overflow")]
    Overflow,
}

/// Per-agent token stake in a market, used when reporting settlement amounts.
pub type Payouts = std::collections::BTreeMap<AgentId, Amount>;
