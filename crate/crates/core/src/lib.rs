//! Protocol engine for decentralized strategy validation.
//!
//! Strategies are validated by binary prediction markets, escalated through a deep-searcher and
//! arbitration waterfall when the community cannot decide, audited by a Poisson lottery, and
//! funded by a utility-maximizing allocator. Value moves on a dual-token ledger held in
//! fixed-point micro-units.
//!
//! The numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below fix `f64`.

// negated comparisons reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocation;
pub mod audit;
pub mod markets;
pub mod model;
pub mod num;
pub mod tokens;
pub mod waterfall;

pub use markets::{LmsrMarket, MarketError, ParimutuelPool, Side};
pub use model::{Agent, AgentId, InstanceId, IntentionId, Role, StrategyId};
pub use num::{Amount, Scalar, MICRO};
pub use tokens::{Account, DualLedger, LedgerEntry, LedgerError, Token};

pub type Lmsr = markets::LmsrMarket<f64>;
pub type Confidence = allocation::ConfidenceScore<f64>;
pub type Models = allocation::AllocationModels<f64>;
pub type Item = allocation::AllocationItem<f64>;
pub type Solution = allocation::AllocationSolution<f64>;
pub type Returns = allocation::ReturnModel<f64>;
pub type Utility = allocation::UtilityModel<f64>;
pub type CostModel = allocation::VerificationCostModel<f64>;
