//! The epoch loop: runs the phase cycle over the horizon and records every state change.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand_chacha::ChaCha8Rng;
use stratval_core::allocation::{meta_allocation, realized_value, AllocationItem, AllocationModels, MetaInput, MetaParams};
use stratval_core::audit::{sample_audit_events, AuditOutcome, AuditSchedule};
use stratval_core::markets::Side;
use stratval_core::model::{Comparison, EpochClock, Goal, IntentionSpec, Phase, Predicate, StrategyProposal};
use stratval_core::tokens::{CommissionContract, MoveKind, Ppm, ProtocolAccount};
use stratval_core::waterfall::{
    open_validation, register_intention, reopen_intention, CriteriaVerdict, InstanceState, Mechanism, RegisteredIntention,
    SettlementReport, ValidationInstance, WaterfallParams,
};
use stratval_core::{Account, Agent, AgentId, Amount, DualLedger, InstanceId, IntentionId, Role, StrategyId, Token};

use crate::events::{Event, EventLog, Header, Record, RetireReason};
use crate::policy::{
    AdversarialProposer, Arbitrator, ArbitratorPolicy, DeepSearcher, HonestProposer, HonestVerifier, LazyVerifier,
    ProposerPolicy, ResolutionObservation, SearcherPolicy, VerifierPolicy, VoteObservation,
};
use crate::rng::{stream, Stream};
use crate::scenario::Scenario;

/// Result of one seeded run. `aborted` carries the diagnostic when an invariant broke.
pub struct RunOutput {
    pub log: EventLog,
    pub snapshots: Vec<(u64, Vec<String>)>,
    pub aborted: Option<String>,
}

struct Member<P: ?Sized> {
    id: AgentId,
    rng: ChaCha8Rng,
    policy: Box<P>,
}

struct StrategyState {
    proposal: StrategyProposal,
    audit_epochs: VecDeque<u64>,
    audit_rng: ChaCha8Rng,
    returns_rng: ChaCha8Rng,
    commission: CommissionContract,
    instances: Vec<InstanceId>,
    retired: bool,
}

struct IntentionState {
    registered: RegisteredIntention,
    instances: Vec<InstanceId>,
    allocation: BTreeMap<StrategyId, Amount>,
}

struct Engine {
    scenario: Scenario,
    seed: u64,
    params: WaterfallParams,
    models: AllocationModels<f64>,
    meta: MetaParams<f64>,
    check_every_step: bool,

    epoch: u64,
    seq: u64,
    records: Vec<Record>,
    ledger: DualLedger,
    audit: AuditSchedule,

    owners: Vec<AgentId>,
    proposers: Vec<Member<dyn ProposerPolicy>>,
    verifiers: Vec<Member<dyn VerifierPolicy>>,
    searchers: Vec<Member<dyn SearcherPolicy>>,
    arbitrators: Vec<Member<dyn ArbitratorPolicy>>,

    intentions: BTreeMap<IntentionId, IntentionState>,
    strategies: BTreeMap<StrategyId, StrategyState>,
    instances: BTreeMap<InstanceId, ValidationInstance>,
    closing_confidence: BTreeMap<InstanceId, (f64, f64)>,
    voted: BTreeSet<(InstanceId, AgentId)>,
    considered: BTreeSet<(InstanceId, AgentId)>,
    participation: BTreeMap<AgentId, u32>,
    searcher_cursor: usize,
    snapshots: Vec<(u64, Vec<String>)>,
}

#[derive(Debug)]
struct Abort(String);

type Step = Result<(), Abort>;

fn abort<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> Abort + '_ {
    move |e| Abort(format!("{context}: {e}"))
}

/// Runs `scenario` under `seed`. With `check_every_step`, ledger invariants are checked after
/// every recorded operation instead of once per epoch.
pub fn run(scenario: &Scenario, seed: u64, check_every_step: bool) -> RunOutput {
    let mut engine = Engine::new(scenario.clone(), seed, check_every_step);
    let result = engine.run_all();
    let aborted = match result {
        Ok(()) => {
            engine.emit_final();
            None
        }
        Err(Abort(reason)) => {
            engine.emit(Event::Abort { reason: reason.clone() });
            Some(reason)
        }
    };
    RunOutput {
        log: EventLog { header: Header::new(seed, scenario.clone()), records: engine.records },
        snapshots: engine.snapshots,
        aborted,
    }
}

impl Engine {
    fn new(scenario: Scenario, seed: u64, check_every_step: bool) -> Self {
        let a = &scenario.audit;
        let mut audit = AuditSchedule::new(
            a.rate,
            Amount::from_real(a.gas_fee),
            Ppm::from_fraction(a.reward_coeff),
            Amount::from_real(a.min_reputation),
            a.detection_accuracy,
            a.fraud_threshold,
        )
        .expect("validated audit parameters");
        audit.auditors_per_audit = a.auditors_per_audit;
        Self {
            params: scenario.waterfall_params(),
            models: scenario.allocation_models(),
            meta: scenario.meta_params(),
            seed,
            check_every_step,
            epoch: 0,
            seq: 0,
            records: Vec::new(),
            ledger: DualLedger::new(),
            audit,
            owners: Vec::new(),
            proposers: Vec::new(),
            verifiers: Vec::new(),
            searchers: Vec::new(),
            arbitrators: Vec::new(),
            intentions: BTreeMap::new(),
            strategies: BTreeMap::new(),
            instances: BTreeMap::new(),
            closing_confidence: BTreeMap::new(),
            voted: BTreeSet::new(),
            considered: BTreeSet::new(),
            participation: BTreeMap::new(),
            searcher_cursor: 0,
            snapshots: Vec::new(),
            scenario,
        }
    }

    fn emit(&mut self, event: Event) {
        self.records.push(Record { epoch: self.epoch, seq: self.seq, event });
        self.seq += 1;
    }

    /// Records the ledger entries produced by the last operation.
    fn flush(&mut self) -> Step {
        for entry in self.ledger.take_journal() {
            self.emit(Event::Ledger { entry });
        }
        if self.check_every_step {
            self.ledger.check_invariants().map_err(abort("ledger invariant"))?;
        }
        Ok(())
    }

    fn emit_transitions(&mut self, id: InstanceId, from: usize) {
        let history = self.instances[&id].history.clone();
        for i in from.max(1)..history.len() {
            self.emit(Event::Transition { instance: id, from: history[i - 1].0, to: history[i].0 });
        }
    }

    fn policy_rng(&self, agent: AgentId) -> ChaCha8Rng {
        stream(self.seed, Stream::Policy, agent.0 as u64)
    }

    fn genesis(&mut self) -> Step {
        let s = self.scenario.clone();
        let pop = &s.population;
        let mut next = 0u32;
        let mut take = || {
            let id = AgentId(next);
            next += 1;
            id
        };
        let returns = self.models.returns;
        let complexity = (s.proposers.complexity_min, s.proposers.complexity_max);
        for _ in 0..pop.capital_owners {
            let id = take();
            self.owners.push(id);
        }
        for _ in 0..pop.honest_proposers {
            let id = take();
            let policy: Box<dyn ProposerPolicy> = Box::new(HonestProposer {
                quality_range: (s.proposers.honest_quality_min, s.proposers.honest_quality_max),
                complexity_range: complexity,
                metric_noise: s.proposers.metric_noise,
                returns,
                dims: s.metric_dims,
            });
            self.proposers.push(Member { id, rng: self.policy_rng(id), policy });
        }
        for _ in 0..pop.adversarial_proposers {
            let id = take();
            let policy: Box<dyn ProposerPolicy> = Box::new(AdversarialProposer {
                fraud_threshold: s.audit.fraud_threshold,
                inflation: s.proposers.adversarial_inflation,
                complexity_range: complexity,
                metric_noise: s.proposers.metric_noise,
                returns,
                dims: s.metric_dims,
            });
            self.proposers.push(Member { id, rng: self.policy_rng(id), policy });
        }
        let honest = |v: &crate::scenario::VerifierConfig| HonestVerifier {
            noise: v.noise,
            stake: Amount::from_real(v.stake),
            vote_probability: v.vote_probability,
        };
        for _ in 0..pop.verifiers {
            let id = take();
            let policy: Box<dyn VerifierPolicy> = Box::new(honest(&s.verifiers));
            self.verifiers.push(Member { id, rng: self.policy_rng(id), policy });
        }
        for _ in 0..pop.lazy_verifiers {
            let id = take();
            let policy: Box<dyn VerifierPolicy> =
                Box::new(LazyVerifier { abstain: s.verifiers.lazy_abstain, inner: honest(&s.verifiers) });
            self.verifiers.push(Member { id, rng: self.policy_rng(id), policy });
        }
        for _ in 0..pop.deep_searchers {
            let id = take();
            let policy: Box<dyn SearcherPolicy> = Box::new(DeepSearcher { accuracy: s.deep_searchers.accuracy });
            self.searchers.push(Member { id, rng: self.policy_rng(id), policy });
        }
        for _ in 0..pop.arbitrators {
            let id = take();
            let policy: Box<dyn ArbitratorPolicy> =
                Box::new(Arbitrator { accuracy: s.arbitrators.accuracy, propensity: s.arbitrators.propensity });
            self.arbitrators.push(Member { id, rng: self.policy_rng(id), policy });
        }

        let g = &s.genesis;
        let mut roster: Vec<(AgentId, Role)> = self.owners.iter().map(|id| (*id, Role::CapitalOwner)).collect();
        roster.extend(self.proposers.iter().map(|m| (m.id, Role::Proposer)));
        roster.extend(self.verifiers.iter().map(|m| (m.id, Role::Verifier)));
        roster.extend(self.searchers.iter().map(|m| (m.id, Role::DeepSearcher)));
        roster.extend(self.arbitrators.iter().map(|m| (m.id, Role::Arbitrator)));
        for (id, role) in roster {
            self.emit(Event::AgentJoined { agent: id, role });
            let supra = if role == Role::CapitalOwner { g.capital_owner_supra } else { g.supra_per_agent };
            self.credit(Account::free(id), Token::Supra, supra)?;
            self.credit(Account::free(id), Token::Alpha, g.alpha_per_agent)?;
            self.flush()?;
        }
        self.credit(Account::Protocol(ProtocolAccount::LotteryPool), Token::Supra, g.lottery_pool)?;
        self.credit(Account::Protocol(ProtocolAccount::SubsidyPool), Token::Supra, g.subsidy_pool)?;
        self.ledger.seal();
        self.flush()
    }

    fn credit(&mut self, account: Account, token: Token, tokens: f64) -> Step {
        let amount = Amount::from_real(tokens);
        if amount.is_positive() {
            self.ledger.genesis_credit(account, token, amount).map_err(abort("genesis"))?;
        }
        Ok(())
    }

    fn run_all(&mut self) -> Step {
        self.genesis()?;
        let intervals = self.scenario.interval_lengths();
        for epoch in 0..self.scenario.epochs {
            self.epoch = epoch;
            let clock = EpochClock::at(intervals, epoch);
            let cycle = epoch / intervals.cycle_len();
            match clock.phase {
                Phase::Proposal if clock.is_first_epoch_of_phase() => {
                    if cycle == 0 {
                        self.register_intentions()?;
                    }
                    let active = self.scenario.proposers.active_cycles;
                    if active == 0 || cycle < active {
                        self.propose()?;
                    }
                }
                Phase::Assessment => {
                    self.collect_votes()?;
                    if clock.is_last_epoch_of_phase() {
                        self.close_markets()?;
                    }
                }
                Phase::Rebalancing if clock.is_first_epoch_of_phase() => self.rebalance()?,
                Phase::Withdrawal if clock.is_first_epoch_of_phase() => self.withdraw()?,
                _ => {}
            }
            self.escalate()?;
            self.arbitrate_and_settle()?;
            self.run_audits()?;
            self.end_of_epoch()?;
        }
        Ok(())
    }

    fn register_intentions(&mut self) -> Step {
        let cfg = self.scenario.intentions.clone();
        let criteria = self.scenario.criteria();
        for owner in self.owners.clone() {
            for _ in 0..cfg.per_owner {
                let id = IntentionId(self.intentions.len() as u32);
                let spec = IntentionSpec {
                    id,
                    owner,
                    predicates: vec![Predicate::new(0, Comparison::Gt, cfg.min_expected_return)],
                    metric_index: 0,
                    goal: Goal::Maximize,
                    readjust_every: cfg.readjust_every,
                    criteria,
                    deposit: Amount::from_real(cfg.deposit),
                    alpha_burn: Amount::from_real(cfg.alpha_burn),
                };
                let Ok(registered) = register_intention(&mut self.ledger, spec.clone(), self.epoch) else {
                    continue;
                };
                self.emit(Event::IntentionRegistered {
                    intention: id,
                    owner,
                    deposit: spec.deposit,
                    alpha_burn: spec.alpha_burn,
                    readjust_every: spec.readjust_every,
                });
                self.flush()?;
                self.intentions.insert(id, IntentionState { registered, instances: Vec::new(), allocation: BTreeMap::new() });
            }
        }
        Ok(())
    }

    fn propose(&mut self) -> Step {
        let horizon = self.scenario.epochs - self.epoch;
        let collateral = Amount::from_real(self.scenario.proposers.collateral);
        let commission_rate = Ppm::from_fraction(self.scenario.tokens.commission_rate);
        for p in 0..self.proposers.len() {
            for _ in 0..self.scenario.proposers.strategies_per_cycle {
                let member = &mut self.proposers[p];
                let proposer = member.id;
                let draft = member.policy.draft(&mut member.rng);
                let id = StrategyId(self.strategies.len() as u32);
                let mut proposal = StrategyProposal::new(
                    id,
                    proposer,
                    collateral,
                    draft.complexity,
                    draft.metrics,
                    draft.quality.clamp(0.0, 1.0),
                    self.params.min_collateral,
                )
                .map_err(abort("proposal"))?;
                let view = proposal.view();
                let linked: Vec<IntentionId> = self
                    .intentions
                    .iter()
                    .filter(|(_, st)| stratval_core::model::passes_predicates(&st.registered.spec().predicates, &view.metrics_profile))
                    .map(|(id, _)| *id)
                    .collect();
                proposal.linked_intentions = linked.iter().copied().collect();
                let mut audit_rng = stream(self.seed, Stream::Audit, id.0 as u64);
                let audit_epochs: VecDeque<u64> = sample_audit_events(&mut audit_rng, self.audit.rate, horizon)
                    .map_err(abort("audit sampling"))?
                    .into_iter()
                    .map(|k| self.epoch + k)
                    .collect();
                let fraudulent = self.audit.is_fraudulent(&proposal);
                self.emit(Event::StrategyProposed {
                    strategy: id,
                    proposer,
                    collateral,
                    complexity: view.complexity,
                    metrics: view.metrics_profile.clone(),
                    linked: linked.clone(),
                });
                self.emit(Event::GroundTruth { strategy: id, true_quality: proposal.true_quality(), fraudulent, audit_horizon: horizon });
                let mut state = StrategyState {
                    audit_epochs,
                    audit_rng,
                    returns_rng: stream(self.seed, Stream::Returns, id.0 as u64),
                    commission: CommissionContract::new(proposer, id, commission_rate),
                    instances: Vec::new(),
                    retired: false,
                    proposal,
                };
                for intention in linked {
                    if self.ledger.free(proposer, Token::Supra) < collateral {
                        break;
                    }
                    let inst_id = InstanceId(self.instances.len() as u32);
                    let registered = &self.intentions[&intention].registered;
                    let inst = open_validation(inst_id, &state.proposal, registered, collateral, &self.params, &mut self.ledger, self.epoch)
                        .map_err(abort("open validation"))?;
                    let liquidity = match self.params.mechanism {
                        Mechanism::Lmsr { liquidity } => Some(liquidity),
                        Mechanism::Parimutuel => None,
                    };
                    self.emit(Event::InstanceOpened {
                        instance: inst_id,
                        strategy: id,
                        intention,
                        proposer,
                        initial_agree: inst.initial_agree,
                        liquidity,
                    });
                    self.instances.insert(inst_id, inst);
                    self.flush()?;
                    self.emit_transitions(inst_id, 0);
                    state.instances.push(inst_id);
                    self.intentions.get_mut(&intention).expect("linked intention").instances.push(inst_id);
                }
                self.strategies.insert(id, state);
            }
        }
        Ok(())
    }

    fn ids_in(&self, state: InstanceState) -> Vec<InstanceId> {
        self.instances.iter().filter(|(_, i)| i.state() == state).map(|(id, _)| *id).collect()
    }

    fn quality_of(&self, instance: InstanceId) -> f64 {
        self.strategies[&self.instances[&instance].strategy].proposal.true_quality()
    }

    fn collect_votes(&mut self) -> Step {
        for id in self.ids_in(InstanceState::MarketOpen) {
            let strategy = self.instances[&id].strategy;
            let view = self.strategies[&strategy].proposal.view();
            let quality = self.quality_of(id);
            for v in 0..self.verifiers.len() {
                let voter = self.verifiers[v].id;
                if self.voted.contains(&(id, voter)) {
                    continue;
                }
                let confidence = self.instances[&id].confidence().value;
                let free = self.ledger.free(voter, Token::Supra);
                let obs = VoteObservation::new(id, &view, confidence, free, quality);
                let member = &mut self.verifiers[v];
                let Some((side, amount)) = member.policy.vote(&obs, &mut member.rng) else { continue };
                let inst = self.instances.get_mut(&id).expect("open instance");
                let Ok(receipt) = inst.cast_vote(voter, side, amount, Phase::Assessment, &self.params, &mut self.ledger) else {
                    continue;
                };
                self.voted.insert((id, voter));
                let confidence = inst.confidence().value;
                self.emit(Event::Vote {
                    instance: id,
                    voter,
                    side,
                    gross: receipt.gross,
                    fee: receipt.fee,
                    staked: receipt.staked,
                    shares: receipt.shares,
                    confidence,
                });
                self.flush()?;
            }
        }
        Ok(())
    }

    fn close_markets(&mut self) -> Step {
        for id in self.ids_in(InstanceState::MarketOpen) {
            let inst = self.instances.get_mut(&id).expect("open instance");
            let before = inst.history.len();
            inst.close_voting(self.epoch).map_err(abort("close voting"))?;
            let criteria = inst.criteria;
            let verdict = inst.check_decision_criteria(&criteria, &self.params);
            let score = inst.confidence();
            inst.apply_verdict(verdict).map_err(abort("apply verdict"))?;
            self.closing_confidence.insert(id, (score.value, score.agree_stake_fraction));
            self.emit_transitions(id, before);
            self.emit(Event::Verdict { instance: id, verdict, confidence: score.value, agree_fraction: score.agree_stake_fraction });
            if let CriteriaVerdict::Resolved(_) = verdict {
                self.settle(id)?;
            }
        }
        Ok(())
    }

    fn settle(&mut self, id: InstanceId) -> Step {
        let inst = self.instances.get_mut(&id).expect("instance");
        let before = inst.history.len();
        let report: SettlementReport = inst.settle_instance(&self.params, &mut self.ledger, self.epoch).map_err(abort("settlement"))?;
        let resolver = inst.resolution().expect("settled instance is resolved").resolver;
        let strategy = inst.strategy;
        let minted = report.mints.iter().map(|(_, a, _)| *a).sum();
        self.emit(Event::Settlement {
            instance: id,
            outcome: report.outcome,
            resolver,
            total_staked: report.total_staked,
            payouts: report.payouts.clone(),
            refunded: report.refunded,
            maker_loss: report.maker_loss,
            loss_bound: report.loss_bound,
            bond_used: report.bond_used,
            subsidy_used: report.subsidy_used,
            minted,
        });
        self.flush()?;
        self.emit_transitions(id, before);
        let st = self.strategies.get_mut(&strategy).expect("strategy");
        if report.allocation_eligible && !st.retired && !st.commission.active {
            st.commission.activate();
            let proposer = st.commission.proposer;
            self.emit(Event::CommissionActivated { strategy, proposer });
        }
        Ok(())
    }

    fn escalate(&mut self) -> Step {
        let stake = Amount::from_real(self.scenario.deep_searchers.stake);
        for id in self.ids_in(InstanceState::PendingResolution) {
            let inst = &self.instances[&id];
            if !inst.is_escalated() || inst.resolution().is_some() || self.searchers.is_empty() {
                continue;
            }
            let n = self.searchers.len();
            let Some(k) = (0..n)
                .map(|k| (self.searcher_cursor + k) % n)
                .find(|k| self.ledger.free(self.searchers[*k].id, Token::Alpha) >= stake)
            else {
                continue;
            };
            self.searcher_cursor = (k + 1) % n;
            let (confidence, _) = self.closing_confidence.get(&id).copied().unwrap_or((0.5, 0.5));
            let obs = ResolutionObservation::new(id, confidence, None, self.quality_of(id));
            let member = &mut self.searchers[k];
            let searcher = member.id;
            let outcome = member.policy.resolve(&obs, &mut member.rng);
            let inst = self.instances.get_mut(&id).expect("instance");
            let before = inst.history.len();
            inst.deep_searcher_resolve(Agent::new(searcher, Role::DeepSearcher), stake, outcome, &self.params, &mut self.ledger, self.epoch)
                .map_err(abort("deep searcher resolution"))?;
            self.emit(Event::SearcherResolved { instance: id, searcher, stake, outcome });
            self.flush()?;
            self.emit_transitions(id, before);
        }
        Ok(())
    }

    fn arbitrate_and_settle(&mut self) -> Step {
        let stake = Amount::from_real(self.scenario.arbitrators.stake);
        let mut due = self.ids_in(InstanceState::ArbitrationWindow);
        due.extend(self.ids_in(InstanceState::Reversed));
        due.sort();
        for id in due {
            let inst = &self.instances[&id];
            let open_window = inst.state() == InstanceState::ArbitrationWindow
                && inst.dispute().is_none()
                && inst.arbitration_deadline().is_some_and(|d| self.epoch <= d);
            if open_window {
                let current = inst.resolution().map(|r| r.outcome);
                let (confidence, _) = self.closing_confidence.get(&id).copied().unwrap_or((0.5, 0.5));
                let quality = self.quality_of(id);
                for a in 0..self.arbitrators.len() {
                    let arbitrator = self.arbitrators[a].id;
                    if !self.considered.insert((id, arbitrator)) {
                        continue;
                    }
                    let obs = ResolutionObservation::new(id, confidence, current, quality);
                    let member = &mut self.arbitrators[a];
                    if !member.policy.challenge(&obs, &mut member.rng) {
                        continue;
                    }
                    if self.ledger.free(arbitrator, Token::Alpha) < stake {
                        continue;
                    }
                    let participation = self.participation.get(&arbitrator).copied().unwrap_or(0);
                    let truth = if quality >= 0.5 { Side::Agree } else { Side::Disagree };
                    let upheld = current != Some(truth);
                    let inst = self.instances.get_mut(&id).expect("instance");
                    let before = inst.history.len();
                    let searcher = inst.searcher_stake().map(|(s, _)| s).expect("searcher stake");
                    let result = inst.arbitrator_challenge(
                        Agent::new(arbitrator, Role::Arbitrator),
                        participation,
                        stake,
                        upheld,
                        &self.params,
                        &mut self.ledger,
                        self.epoch,
                    );
                    let outcome = match result {
                        Ok(o) => o,
                        Err(stratval_core::waterfall::WaterfallError::Unqualified(_)) => continue,
                        Err(e) => return Err(Abort(format!("arbitration: {e}"))),
                    };
                    *self.participation.entry(arbitrator).or_insert(0) += 1;
                    let (slashed_agent, slashed) = match outcome {
                        stratval_core::waterfall::ArbitrationOutcome::Upheld { slashed_searcher, slashed, .. } => (slashed_searcher, slashed),
                        stratval_core::waterfall::ArbitrationOutcome::Failed { forfeited } => (arbitrator, forfeited),
                    };
                    let new_outcome = inst.resolution().expect("resolved").outcome;
                    self.emit(Event::Challenge {
                        instance: id,
                        arbitrator,
                        searcher,
                        stake,
                        upheld,
                        outcome: new_outcome,
                        slashed_agent,
                        slashed,
                    });
                    self.flush()?;
                    self.emit_transitions(id, before);
                    break;
                }
            }
            if self.instances[&id].can_settle(self.epoch) {
                self.settle(id)?;
            }
        }
        Ok(())
    }

    fn eligible_inputs(&self, intention: &IntentionState) -> Vec<MetaInput<f64>> {
        intention
            .instances
            .iter()
            .filter_map(|id| {
                let inst = &self.instances[id];
                let st = &self.strategies[&inst.strategy];
                if !inst.allocation_eligible() || st.retired {
                    return None;
                }
                let (confidence, agree_fraction) = self.closing_confidence.get(id).copied().unwrap_or((0.5, 0.5));
                Some(MetaInput {
                    item: AllocationItem { strategy: inst.strategy, confidence, complexity: st.proposal.complexity },
                    agree_fraction,
                    env: 0.0,
                })
            })
            .collect()
    }

    fn rebalance(&mut self) -> Step {
        let fraction = self.scenario.allocation.budget_fraction;
        for iid in self.intentions.keys().copied().collect::<Vec<_>>() {
            let intention = &self.intentions[&iid];
            let inputs = self.eligible_inputs(intention);
            let eligible: BTreeSet<StrategyId> = inputs.iter().map(|m| m.item.strategy).collect();
            let current: BTreeSet<StrategyId> = intention.allocation.keys().copied().collect();
            let reg = &intention.registered;
            let due = reg.last_validation_epoch.is_none() || reopen_intention(reg, self.epoch, Phase::Rebalancing) || eligible != current;
            if !due {
                continue;
            }
            if inputs.is_empty() {
                if !current.is_empty() {
                    self.intentions.get_mut(&iid).expect("intention").allocation.clear();
                    self.emit(Event::Allocation { intention: iid, budget: Amount::ZERO, amounts: Vec::new(), prior: Vec::new(), objective: 0.0 });
                }
                continue;
            }
            let budget = Amount::from_real(reg.spec().deposit.to_real::<f64>() * fraction);
            let result = meta_allocation(budget, &inputs, &self.meta, &self.models).map_err(abort("allocation"))?;
            let amounts: Vec<(StrategyId, Amount)> =
                inputs.iter().zip(&result.solution.amounts).map(|(m, a)| (m.item.strategy, *a)).collect();
            let st = self.intentions.get_mut(&iid).expect("intention");
            st.allocation = amounts.iter().copied().collect();
            st.registered.last_validation_epoch = Some(self.epoch);
            self.emit(Event::Allocation {
                intention: iid,
                budget,
                amounts,
                prior: result.prior,
                objective: result.solution.objective,
            });
        }
        Ok(())
    }

    fn withdraw(&mut self) -> Step {
        let dims = self.scenario.metric_dims;
        let diverted = Ppm::from_fraction(self.scenario.tokens.commission_diverted);
        let mut totals: BTreeMap<StrategyId, Amount> = BTreeMap::new();
        for st in self.intentions.values() {
            for (s, a) in &st.allocation {
                if a.is_positive() && !self.strategies[s].retired {
                    *totals.entry(*s).or_insert(Amount::ZERO) += *a;
                }
            }
        }
        for (sid, total) in totals {
            let holders: Vec<(IntentionId, Amount, f64)> = self
                .intentions
                .iter()
                .filter_map(|(iid, st)| {
                    let a = *st.allocation.get(&sid)?;
                    let inst = st.instances.iter().find(|i| self.instances[*i].strategy == sid)?;
                    let confidence = self.closing_confidence.get(inst).map(|c| c.0).unwrap_or(0.5);
                    a.is_positive().then_some((*iid, a, confidence))
                })
                .collect();
            let confidence = holders.first().map(|h| h.2).unwrap_or(0.5);
            let st = self.strategies.get_mut(&sid).expect("strategy");
            let item = AllocationItem { strategy: sid, confidence, complexity: st.proposal.complexity };
            let draw = realized_value(st.proposal.true_quality(), &item, total.to_real(), &self.models.returns, dims, &mut st.returns_rng)
                .map_err(abort("realized value"))?;
            let contract = st.commission.clone();
            let complexity = st.proposal.complexity;
            for (iid, allocated, confidence) in holders {
                let a: f64 = allocated.to_real();
                let value = draw.r * a;
                let expected = self.models.returns.posterior_mean(confidence) * a;
                let utility = self.models.utility.utility(value, expected);
                let cost = self.models.cost.cost(a, complexity).map_err(abort("verification cost"))?;
                let owner = self.intentions[&iid].registered.spec().owner;
                let paid = self.ledger.pay_commission(&contract, owner, Amount::from_real(value), diverted).unwrap_or_default();
                self.emit(Event::Return {
                    intention: iid,
                    strategy: sid,
                    allocated,
                    r: draw.r,
                    value,
                    utility,
                    cost,
                    commission: paid.to_proposer + paid.to_subsidy,
                    diverted: paid.to_subsidy,
                });
                self.flush()?;
            }
        }
        Ok(())
    }

    fn run_audits(&mut self) -> Step {
        let candidates: Vec<AgentId> = self.verifiers.iter().map(|m| m.id).collect();
        for sid in self.strategies.keys().copied().collect::<Vec<_>>() {
            loop {
                let st = self.strategies.get_mut(&sid).expect("strategy");
                if st.retired || st.audit_epochs.front() != Some(&self.epoch) {
                    break;
                }
                st.audit_epochs.pop_front();
                let allocated: Amount = self.intentions.values().filter_map(|i| i.allocation.get(&sid)).copied().sum();
                let report = self
                    .audit
                    .run_audit(&mut self.ledger, &st.proposal, allocated, &candidates, self.epoch, &mut st.audit_rng)
                    .map_err(abort("audit"))?;
                self.emit(Event::Audit {
                    strategy: sid,
                    outcome: report.outcome,
                    gas: report.gas,
                    reward: report.reward,
                    auditors: report.rewards.clone(),
                });
                self.flush()?;
                if report.outcome == AuditOutcome::FraudDetected {
                    self.retire(sid)?;
                }
            }
        }
        Ok(())
    }

    fn retire(&mut self, sid: StrategyId) -> Step {
        let st = self.strategies.get_mut(&sid).expect("strategy");
        st.retired = true;
        let was_active = st.commission.active;
        st.commission.cancel();
        let instances = st.instances.clone();
        self.emit(Event::StrategyRetired { strategy: sid, reason: RetireReason::FraudDetected });
        for id in instances {
            let inst = self.instances.get_mut(&id).expect("instance");
            if inst.allocation_eligible() {
                inst.audit_reverse().map_err(abort("audit reversal"))?;
                self.emit(Event::AuditReversal { instance: id, strategy: sid });
            }
        }
        if was_active {
            self.emit(Event::CommissionCancelled { strategy: sid });
        }
        for st in self.intentions.values_mut() {
            st.allocation.remove(&sid);
        }
        Ok(())
    }

    fn end_of_epoch(&mut self) -> Step {
        let topup = Ppm::from_fraction(self.scenario.audit.lottery_topup);
        let amount = topup.of_floor(self.ledger.protocol(ProtocolAccount::FeePool, Token::Supra));
        if amount.is_positive() {
            self.ledger
                .transfer(
                    Token::Supra,
                    MoveKind::Transfer,
                    Account::Protocol(ProtocolAccount::FeePool),
                    Account::Protocol(ProtocolAccount::LotteryPool),
                    amount,
                )
                .map_err(abort("lottery top-up"))?;
            self.emit(Event::LotteryTopUp { amount });
            self.flush()?;
        }
        if self.scenario.tokens.alpha_decay > 0.0 {
            let decayed = self.ledger.decay_alpha(Ppm::from_fraction(self.scenario.tokens.alpha_decay));
            if decayed.is_positive() {
                self.emit(Event::AlphaDecay { amount: decayed });
                self.flush()?;
            }
        }
        self.ledger.check_invariants().map_err(abort("ledger invariant"))?;
        let every = self.scenario.snapshot_every;
        if every > 0 && (self.epoch + 1).is_multiple_of(every) {
            self.snapshots.push((self.epoch, self.ledger.snapshot_lines()));
        }
        Ok(())
    }

    fn emit_final(&mut self) {
        let balances = self.ledger.balances().collect();
        let instances = self.instances.iter().map(|(id, i)| (*id, i.state())).collect();
        self.emit(Event::Final {
            balances,
            alpha_minted: self.ledger.alpha_minted_total(),
            alpha_burned: self.ledger.alpha_burned_total(),
            instances,
        });
    }
}
