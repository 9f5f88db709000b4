//! The event log: a header line, then one JSON record per line with a fixed field order per
//! kind. Token amounts are signed micro-unit integers.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use stratval_core::audit::AuditOutcome;
use stratval_core::markets::Side;
use stratval_core::tokens::{Account, LedgerEntry, Token};
use stratval_core::waterfall::{CriteriaVerdict, InstanceState, Resolver};
use stratval_core::{AgentId, Amount, InstanceId, IntentionId, Role, StrategyId};
use thiserror::Error;

use crate::scenario::Scenario;

pub const SCHEMA: &str = "stratval-events";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub schema: String,
    pub version: u32,
    pub seed: u64,
    pub scenario: Scenario,
}

impl Header {
    pub fn new(seed: u64, scenario: Scenario) -> Self {
        Self { schema: SCHEMA.into(), version: SCHEMA_VERSION, seed, scenario }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub epoch: u64,
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetireReason {
    FraudDetected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    AgentJoined {
        agent: AgentId,
        role: Role,
    },
    IntentionRegistered {
        intention: IntentionId,
        owner: AgentId,
        deposit: Amount,
        alpha_burn: Amount,
        readjust_every: u64,
    },
    StrategyProposed {
        strategy: StrategyId,
        proposer: AgentId,
        collateral: Amount,
        complexity: f64,
        metrics: Vec<f64>,
        linked: Vec<IntentionId>,
    },
    /// Simulation oracle record for metrics; agent policies never read the log.
    GroundTruth {
        strategy: StrategyId,
        true_quality: f64,
        fraudulent: bool,
        audit_horizon: u64,
    },
    InstanceOpened {
        instance: InstanceId,
        strategy: StrategyId,
        intention: IntentionId,
        proposer: AgentId,
        initial_agree: Amount,
        liquidity: Option<f64>,
    },
    Transition {
        instance: InstanceId,
        from: InstanceState,
        to: InstanceState,
    },
    Vote {
        instance: InstanceId,
        voter: AgentId,
        side: Side,
        gross: Amount,
        fee: Amount,
        staked: Amount,
        shares: Amount,
        confidence: f64,
    },
    Verdict {
        instance: InstanceId,
        verdict: CriteriaVerdict,
        confidence: f64,
        agree_fraction: f64,
    },
    SearcherResolved {
        instance: InstanceId,
        searcher: AgentId,
        stake: Amount,
        outcome: Side,
    },
    Challenge {
        instance: InstanceId,
        arbitrator: AgentId,
        searcher: AgentId,
        stake: Amount,
        upheld: bool,
        outcome: Side,
        slashed_agent: AgentId,
        slashed: Amount,
    },
    Settlement {
        instance: InstanceId,
        outcome: Side,
        resolver: Resolver,
        total_staked: Amount,
        payouts: Vec<(AgentId, Amount)>,
        refunded: bool,
        maker_loss: Option<f64>,
        loss_bound: Option<f64>,
        bond_used: Amount,
        subsidy_used: Amount,
        minted: Amount,
    },
    CommissionActivated {
        strategy: StrategyId,
        proposer: AgentId,
    },
    CommissionCancelled {
        strategy: StrategyId,
    },
    Allocation {
        intention: IntentionId,
        budget: Amount,
        amounts: Vec<(StrategyId, Amount)>,
        prior: Vec<Amount>,
        objective: f64,
    },
    Return {
        intention: IntentionId,
        strategy: StrategyId,
        allocated: Amount,
        r: f64,
        value: f64,
        utility: f64,
        cost: f64,
        commission: Amount,
        diverted: Amount,
    },
    Audit {
        strategy: StrategyId,
        outcome: AuditOutcome,
        gas: Amount,
        reward: Amount,
        auditors: Vec<(AgentId, Amount)>,
    },
    AuditReversal {
        instance: InstanceId,
        strategy: StrategyId,
    },
    StrategyRetired {
        strategy: StrategyId,
        reason: RetireReason,
    },
    LotteryTopUp {
        amount: Amount,
    },
    AlphaDecay {
        amount: Amount,
    },
    Ledger {
        entry: LedgerEntry,
    },
    Final {
        balances: Vec<(Account, Token, Amount)>,
        alpha_minted: Amount,
        alpha_burned: Amount,
        instances: Vec<(InstanceId, InstanceState)>,
    },
    Abort {
        reason: String,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::AgentJoined { .. } => "agent_joined",
            Event::IntentionRegistered { .. } => "intention_registered",
            Event::StrategyProposed { .. } => "strategy_proposed",
            Event::GroundTruth { .. } => "ground_truth",
            Event::InstanceOpened { .. } => "instance_opened",
            Event::Transition { .. } => "transition",
            Event::Vote { .. } => "vote",
            Event::Verdict { .. } => "verdict",
            Event::SearcherResolved { .. } => "searcher_resolved",
            Event::Challenge { .. } => "challenge",
            Event::Settlement { .. } => "settlement",
            Event::CommissionActivated { .. } => "commission_activated",
            Event::CommissionCancelled { .. } => "commission_cancelled",
            Event::Allocation { .. } => "allocation",
            Event::Return { .. } => "return",
            Event::Audit { .. } => "audit",
            Event::AuditReversal { .. } => "audit_reversal",
            Event::StrategyRetired { .. } => "strategy_retired",
            Event::LotteryTopUp { .. } => "lottery_top_up",
            Event::AlphaDecay { .. } => "alpha_decay",
            Event::Ledger { .. } => "ledger",
            Event::Final { .. } => "final",
            Event::Abort { .. } => "abort",
        }
    }
}

/// A complete log held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct EventLog {
    pub header: Header,
    pub records: Vec<Record>,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("empty log")]
    Empty,
    #[error("unsupported schema {schema} version {version}")]
    Schema { schema: String, version: u32 },
}

impl EventLog {
    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read_from(input: impl BufRead) -> Result<Self, LogError> {
        let mut lines = input.lines();
        let first = lines.next().ok_or(LogError::Empty)??;
        let header: Header =
            serde_json::from_str(&first).map_err(|e| LogError::Malformed { line: 1, message: e.to_string() })?;
        if header.schema != SCHEMA || header.version != SCHEMA_VERSION {
            return Err(LogError::Schema { schema: header.schema, version: header.version });
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: Record = serde_json::from_str(&line).map_err(|e| LogError::Malformed { line: i + 2, message: e.to_string() })?;
            records.push(r);
        }
        Ok(Self { header, records })
    }

    pub fn read_path(path: &std::path::Path) -> Result<Self, LogError> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}
