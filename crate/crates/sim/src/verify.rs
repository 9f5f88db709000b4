//! Offline log verification: replays the ledger journal and checks every recorded domain
//! event against it.

use std::collections::BTreeMap;
use std::fmt;

use stratval_core::tokens::{LedgerEntry, MoveKind, ProtocolAccount, SubAccount};
use stratval_core::waterfall::InstanceState;
use stratval_core::{Account, AgentId, Amount, DualLedger, InstanceId, IntentionId, Token};

use crate::events::{Event, EventLog, Record};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub seq: Option<u64>,
    pub check: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.seq {
            Some(seq) => write!(f, "seq {seq}: {}: {}", self.check, self.message),
            None => write!(f, "{}: {}", self.check, self.message),
        }
    }
}

#[derive(Clone, Debug)]
struct InstanceTrack {
    state: InstanceState,
    parimutuel: bool,
    staked: BTreeMap<AgentId, Amount>,
    searcher_stake: Option<(AgentId, Amount)>,
    settled: bool,
}

/// A domain event together with the ledger entries recorded right after it.
struct Group<'a> {
    record: &'a Record,
    entries: Vec<&'a LedgerEntry>,
}

#[derive(Default)]
struct Checker {
    ledger: DualLedger,
    instances: BTreeMap<InstanceId, InstanceTrack>,
    deposits: BTreeMap<IntentionId, Amount>,
    violations: Vec<Violation>,
    last_seq: Option<u64>,
    last_epoch: u64,
    finished: bool,
}

impl Checker {
    fn flag(&mut self, seq: u64, check: &'static str, message: impl Into<String>) {
        self.violations.push(Violation { seq: Some(seq), check, message: message.into() });
    }

    fn order(&mut self, r: &Record) {
        if self.last_seq.is_some_and(|s| r.seq <= s) {
            self.flag(r.seq, "log order", format!("sequence number {} does not increase", r.seq));
        }
        if r.epoch < self.last_epoch {
            self.flag(r.seq, "log order", format!("epoch {} precedes epoch {}", r.epoch, self.last_epoch));
        }
        if self.finished {
            self.flag(r.seq, "log order", "record after the final summary");
        }
        self.last_seq = Some(r.seq);
        self.last_epoch = self.last_epoch.max(r.epoch);
    }

    fn apply_entry(&mut self, seq: u64, entry: &LedgerEntry) {
        if let LedgerEntry::Move { kind: MoveKind::Slash, to, .. } = entry {
            if *to != Account::Protocol(ProtocolAccount::SlashPool) {
                self.flag(seq, "slash destination", format!("slash credited to {to}"));
            }
        }
        self.ledger.apply_replayed(entry);
    }

    fn group(&mut self, g: &Group<'_>) {
        let seq = g.record.seq;
        match &g.record.event {
            Event::IntentionRegistered { intention, deposit, .. } => {
                self.deposits.insert(*intention, *deposit);
            }
            Event::InstanceOpened { instance, proposer, initial_agree, liquidity, .. } => {
                if self.instances.contains_key(instance) {
                    self.flag(seq, "state transition", format!("instance {instance} opened twice"));
                }
                let mut staked = BTreeMap::new();
                if initial_agree.is_positive() {
                    staked.insert(*proposer, *initial_agree);
                }
                self.instances.insert(
                    *instance,
                    InstanceTrack {
                        state: InstanceState::Initiated,
                        parimutuel: liquidity.is_none(),
                        staked,
                        searcher_stake: None,
                        settled: false,
                    },
                );
            }
            Event::Transition { instance, from, to } => {
                let Some(t) = self.instances.get_mut(instance) else {
                    self.flag(seq, "state transition", format!("unknown instance {instance}"));
                    return;
                };
                let current = std::mem::replace(&mut t.state, *to);
                if current != *from || !from.can_transition(*to) {
                    let msg = format!("instance {instance} moved {from:?} -> {to:?} while in {current:?}");
                    self.flag(seq, "state transition", msg);
                }
            }
            Event::Vote { instance, voter, staked, .. } => match self.instances.get_mut(instance) {
                Some(t) if t.state == InstanceState::MarketOpen => {
                    *t.staked.entry(*voter).or_insert(Amount::ZERO) += *staked;
                }
                _ => self.flag(seq, "state transition", format!("vote on instance {instance} outside an open market")),
            },
            Event::SearcherResolved { instance, searcher, stake, .. } => {
                if let Some(t) = self.instances.get_mut(instance) {
                    t.searcher_stake = Some((*searcher, *stake));
                }
            }
            Event::Challenge { instance, arbitrator, searcher, stake, upheld, slashed_agent, slashed, .. } => {
                let expected = if *upheld {
                    let held = self.instances.get(instance).and_then(|t| t.searcher_stake);
                    if held.is_none_or(|(s, a)| s != *searcher || a != *slashed) {
                        self.flag(seq, "slash credit", format!("upheld challenge on {instance} must slash the searcher's full stake"));
                    }
                    *searcher
                } else {
                    if *slashed != *stake {
                        self.flag(seq, "slash credit", format!("failed challenge on {instance} must forfeit the arbitrator's stake"));
                    }
                    *arbitrator
                };
                if *slashed_agent != expected {
                    self.flag(seq, "slash credit", format!("challenge on {instance} slashed {slashed_agent}, expected {expected}"));
                }
                let slashes: Vec<_> = g
                    .entries
                    .iter()
                    .filter_map(|e| match e {
                        LedgerEntry::Move { token, kind: MoveKind::Slash, from, to, amount } => Some((*token, *from, *to, *amount)),
                        _ => None,
                    })
                    .collect();
                let wanted = (
                    Token::Alpha,
                    Account::Agent(expected, SubAccount::Staked),
                    Account::Protocol(ProtocolAccount::SlashPool),
                    *slashed,
                );
                if slashes.len() != 1 || slashes[0] != wanted {
                    self.flag(
                        seq,
                        "slash credit",
                        format!("challenge on {instance} needs exactly one slash of {slashed} from {expected}, found {}", slashes.len()),
                    );
                }
            }
            Event::Settlement { instance, total_staked, payouts, maker_loss, loss_bound, .. } => {
                let Some(t) = self.instances.get_mut(instance) else {
                    self.flag(seq, "state transition", format!("settlement of unknown instance {instance}"));
                    return;
                };
                if t.settled {
                    self.flag(seq, "instance settled twice", format!("instance {instance}"));
                    return;
                }
                t.settled = true;
                let t = t.clone();
                if t.parimutuel {
                    self.check_parimutuel(seq, *instance, &t, *total_staked, payouts, &g.entries);
                } else if let (Some(loss), Some(bound)) = (maker_loss, loss_bound) {
                    if *loss > bound + 1e-6 {
                        self.flag(seq, "market maker loss", format!("instance {instance} lost {loss} above bound {bound}"));
                    }
                }
            }
            Event::Allocation { intention, budget, amounts, .. } => {
                let total: Amount = amounts.iter().map(|(_, a)| *a).sum();
                if total != *budget {
                    self.flag(seq, "allocation budget", format!("intention {intention} allocated {total} of budget {budget}"));
                }
                if amounts.iter().any(|(_, a)| a.is_negative()) {
                    self.flag(seq, "allocation budget", format!("intention {intention} has a negative allocation"));
                }
                match self.deposits.get(intention) {
                    Some(d) if *budget <= *d => {}
                    _ => self.flag(seq, "allocation budget", format!("intention {intention} budget {budget} exceeds its deposit")),
                }
            }
            Event::Audit { strategy, outcome, gas, reward, auditors } => {
                use stratval_core::audit::AuditOutcome;
                let paid: Amount = g
                    .entries
                    .iter()
                    .filter_map(|e| match e {
                        LedgerEntry::Move { kind: MoveKind::Audit, from: Account::Protocol(ProtocolAccount::LotteryPool), amount, .. } => {
                            Some(*amount)
                        }
                        _ => None,
                    })
                    .sum();
                let shares: Amount = auditors.iter().map(|(_, a)| *a).sum();
                let executed = matches!(outcome, AuditOutcome::Clean | AuditOutcome::FraudDetected);
                let expected = if executed { *gas + *reward } else { Amount::ZERO };
                if paid != expected || (executed && shares != *reward) {
                    self.flag(seq, "audit accounting", format!("audit of {strategy} paid {paid} from the lottery, expected {expected}"));
                }
            }
            Event::Final { balances, alpha_minted, alpha_burned, instances } => {
                self.finished = true;
                let replayed: Vec<_> = self.ledger.balances().collect();
                if *balances != replayed {
                    self.flag(seq, "final state", "final balances differ from the replayed ledger");
                }
                if *alpha_minted != self.ledger.alpha_minted_total() || *alpha_burned != self.ledger.alpha_burned_total() {
                    self.flag(seq, "final state", "Alpha mint or burn totals differ from the replayed ledger");
                }
                let tracked: Vec<_> = self.instances.iter().map(|(id, t)| (*id, t.state)).collect();
                if *instances != tracked {
                    self.flag(seq, "final state", "instance states differ from the recorded transitions");
                }
            }
            Event::Abort { reason } => self.flag(seq, "abort", reason.clone()),
            _ => {}
        }
        if let Err(e) = self.ledger.check_invariants() {
            self.flag(seq, "ledger", e.to_string());
        }
    }

    fn check_parimutuel(
        &mut self,
        seq: u64,
        instance: InstanceId,
        t: &InstanceTrack,
        total_staked: Amount,
        payouts: &[(AgentId, Amount)],
        entries: &[&LedgerEntry],
    ) {
        let paid: Amount = payouts.iter().map(|(_, a)| *a).sum();
        let staked: Amount = t.staked.values().copied().sum();
        if paid != total_staked || staked != total_staked {
            self.flag(
                seq,
                "parimutuel conservation",
                format!("instance {instance} pays {paid}, records {total_staked} staked, votes sum to {staked}"),
            );
        }
        let mut into: BTreeMap<AgentId, Amount> = BTreeMap::new();
        let mut out_of: BTreeMap<AgentId, Amount> = BTreeMap::new();
        for e in entries {
            if let LedgerEntry::Move { token: Token::Supra, kind: MoveKind::Payout, from, to, amount } = e {
                if let Account::Agent(a, SubAccount::Free) = to {
                    *into.entry(*a).or_insert(Amount::ZERO) += *amount;
                }
                if let Account::Agent(a, SubAccount::Escrowed) = from {
                    *out_of.entry(*a).or_insert(Amount::ZERO) += *amount;
                }
            }
        }
        let promised: BTreeMap<AgentId, Amount> =
            payouts.iter().filter(|(_, a)| a.is_positive()).fold(BTreeMap::new(), |mut m, (a, v)| {
                *m.entry(*a).or_insert(Amount::ZERO) += *v;
                m
            });
        let escrowed: BTreeMap<AgentId, Amount> = t.staked.iter().filter(|(_, a)| a.is_positive()).map(|(a, v)| (*a, *v)).collect();
        if into != promised || out_of != escrowed {
            self.flag(seq, "payout moves", format!("instance {instance} ledger payouts do not match the settlement"));
        }
    }

    fn run<'a>(&mut self, records: impl Iterator<Item = &'a Record>) {
        let mut current: Option<Group<'a>> = None;
        for r in records {
            self.order(r);
            if let Event::Ledger { entry } = &r.event {
                self.apply_entry(r.seq, entry);
                if let Some(g) = current.as_mut() {
                    g.entries.push(entry);
                }
                continue;
            }
            if let Some(g) = current.take() {
                self.group(&g);
            }
            current = Some(Group { record: r, entries: Vec::new() });
        }
        if let Some(g) = current.take() {
            self.group(&g);
        }
    }
}

/// Every violation found in `log`; empty when the log is consistent.
pub fn verify(log: &EventLog) -> Vec<Violation> {
    let mut c = Checker::default();
    c.run(log.records.iter());
    if !c.finished && !log.records.iter().any(|r| matches!(r.event, Event::Abort { .. })) {
        c.violations.push(Violation { seq: None, check: "final state", message: "log ends without a final summary".into() });
    }
    c.violations
}
