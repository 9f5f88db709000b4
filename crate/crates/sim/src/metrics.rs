//! Per-run metrics derived from an event log, plus cross-seed summaries.

use std::collections::{BTreeMap, BTreeSet};

use stratval_core::audit::AuditOutcome;
use stratval_core::tokens::{LedgerEntry, MintReason, MoveKind};
use stratval_core::{Amount, InstanceId, IntentionId, StrategyId, Token};

use crate::events::{Event, EventLog};

pub const CALIBRATION_BINS: usize = 5;

struct Truth {
    quality: f64,
    fraudulent: bool,
    horizon: u64,
}

/// Closing confidence of every market that reached a verdict, paired with whether the
/// strategy truly deserved an Agree outcome.
pub fn calibration_points(log: &EventLog) -> Vec<(f64, bool)> {
    let mut quality: BTreeMap<StrategyId, f64> = BTreeMap::new();
    let mut strategy_of: BTreeMap<InstanceId, StrategyId> = BTreeMap::new();
    let mut points = Vec::new();
    for r in &log.records {
        match &r.event {
            Event::GroundTruth { strategy, true_quality, .. } => {
                quality.insert(*strategy, *true_quality);
            }
            Event::InstanceOpened { instance, strategy, .. } => {
                strategy_of.insert(*instance, *strategy);
            }
            Event::Verdict { instance, confidence, .. } => {
                let q = quality[&strategy_of[instance]];
                points.push((*confidence, q >= 0.5));
            }
            _ => {}
        }
    }
    points
}

/// Bin index for a confidence in [0, 1].
pub fn calibration_bin(confidence: f64) -> usize {
    ((confidence * CALIBRATION_BINS as f64) as usize).min(CALIBRATION_BINS - 1)
}

/// Named metrics for one run, in a fixed order. Metrics with no data (a detection rate without
/// any fraud, an empty calibration bin) are omitted rather than reported as zero.
pub fn compute(log: &EventLog) -> Vec<(String, f64)> {
    let scenario = &log.header.scenario;
    let discount = scenario.discount;
    let mut truths: BTreeMap<StrategyId, Truth> = BTreeMap::new();
    let mut retired: BTreeSet<StrategyId> = BTreeSet::new();
    let mut funded: BTreeSet<StrategyId> = BTreeSet::new();
    let mut deposits: BTreeMap<IntentionId, Amount> = BTreeMap::new();
    let mut budgets: BTreeMap<IntentionId, Amount> = BTreeMap::new();
    let mut welfare = 0.0;
    let mut realized = 0.0;
    let (mut instances, mut community, mut escalated, mut challenges, mut upheld) = (0u64, 0u64, 0u64, 0u64, 0u64);
    let (mut audits, mut starved) = (0u64, 0u64);
    let (mut slashed_alpha, mut slashed_supra, mut rewards_minted) = (Amount::ZERO, Amount::ZERO, Amount::ZERO);
    let (mut alpha_minted, mut alpha_burned) = (Amount::ZERO, Amount::ZERO);
    let mut fees = Amount::ZERO;

    for r in &log.records {
        match &r.event {
            Event::GroundTruth { strategy, true_quality, fraudulent, audit_horizon } => {
                truths.insert(*strategy, Truth { quality: *true_quality, fraudulent: *fraudulent, horizon: *audit_horizon });
            }
            Event::IntentionRegistered { intention, deposit, .. } => {
                deposits.insert(*intention, *deposit);
            }
            Event::InstanceOpened { .. } => instances += 1,
            Event::Verdict { verdict, .. } => match verdict {
                stratval_core::waterfall::CriteriaVerdict::Resolved(_) => community += 1,
                _ => escalated += 1,
            },
            Event::Challenge { upheld: u, .. } => {
                challenges += 1;
                upheld += u64::from(*u);
            }
            Event::Vote { fee, .. } => fees += *fee,
            Event::Allocation { intention, budget, amounts, .. } => {
                funded.extend(amounts.iter().filter(|(_, a)| a.is_positive()).map(|(s, _)| *s));
                budgets.insert(*intention, *budget);
            }
            Event::Return { value, utility, cost, .. } => {
                welfare += discount.powf(r.epoch as f64) * (utility - cost);
                realized += value;
            }
            Event::Audit { outcome, .. } => match outcome {
                AuditOutcome::Clean | AuditOutcome::FraudDetected => audits += 1,
                AuditOutcome::Starved | AuditOutcome::Unstaffed => starved += 1,
            },
            Event::StrategyRetired { strategy, .. } => {
                retired.insert(*strategy);
            }
            Event::Ledger { entry } => match entry {
                LedgerEntry::Move { token, kind: MoveKind::Slash, amount, .. } => match token {
                    Token::Alpha => slashed_alpha += *amount,
                    Token::Supra => slashed_supra += *amount,
                },
                LedgerEntry::Mint { amount, reason, .. } => {
                    alpha_minted += *amount;
                    if *reason != MintReason::Genesis {
                        rewards_minted += *amount;
                    }
                }
                LedgerEntry::Burn { amount, .. } => alpha_burned += *amount,
                _ => {}
            },
            _ => {}
        }
    }

    let mut out: Vec<(String, f64)> = Vec::new();
    let mut put = |name: &str, v: f64| out.push((name.to_string(), v));
    let fraud: Vec<(&StrategyId, &Truth)> = truths.iter().filter(|(_, t)| t.fraudulent).collect();
    let detected = fraud.iter().filter(|(s, _)| retired.contains(s)).count();
    put("strategies", truths.len() as f64);
    put("fraud_strategies", fraud.len() as f64);
    put("fraud_detected", detected as f64);
    if !fraud.is_empty() {
        let n = fraud.len() as f64;
        put("detection_rate", detected as f64 / n);
        put("undetected_fraction", 1.0 - detected as f64 / n);
        let rate = scenario.audit.rate * scenario.audit.detection_accuracy;
        let analytic = fraud.iter().map(|(_, t)| (-rate * t.horizon as f64).exp()).sum::<f64>() / n;
        put("undetected_analytic", analytic);
    }
    put("welfare", welfare);
    put("realized_value", realized);
    let deposited: Amount = deposits.values().copied().sum();
    if deposited.is_positive() {
        let budget: Amount = budgets.values().copied().sum();
        put("capital_utilization", budget.to_real::<f64>() / deposited.to_real::<f64>());
    }
    let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let funded_q = mean(truths.iter().filter(|(s, _)| funded.contains(s)).map(|(_, t)| t.quality).collect());
    let unfunded_q = mean(truths.iter().filter(|(s, _)| !funded.contains(s)).map(|(_, t)| t.quality).collect());
    put("funded_strategies", funded.len() as f64);
    if let Some(q) = funded_q {
        put("funded_mean_quality", q);
    }
    if let Some(q) = unfunded_q {
        put("unfunded_mean_quality", q);
    }
    put("instances", instances as f64);
    put("community_resolved", community as f64);
    put("escalated", escalated as f64);
    put("challenges", challenges as f64);
    put("challenges_upheld", upheld as f64);
    put("audits_executed", audits as f64);
    put("audits_starved", starved as f64);
    put("fees_collected", fees.to_real());
    put("slashed_alpha", slashed_alpha.to_real());
    put("slashed_supra", slashed_supra.to_real());
    put("alpha_rewards_minted", rewards_minted.to_real());
    put("alpha_minted", alpha_minted.to_real());
    put("alpha_burned", alpha_burned.to_real());

    let mut bins = [(0usize, 0usize, 0.0f64); CALIBRATION_BINS];
    for (confidence, truth) in calibration_points(log) {
        let b = &mut bins[calibration_bin(confidence)];
        b.0 += 1;
        b.1 += usize::from(truth);
        b.2 += confidence;
    }
    for (k, (n, agree, conf)) in bins.iter().enumerate() {
        if *n > 0 {
            put(&format!("calibration_bin{k}_count"), *n as f64);
            put(&format!("calibration_bin{k}_confidence"), conf / *n as f64);
            put(&format!("calibration_bin{k}_agree_rate"), *agree as f64 / *n as f64);
        }
    }
    out
}

/// Cross-seed statistics of one metric.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Summaries over per-seed metric lists, one per metric name in first-seen order.
pub fn summarize(per_seed: &[Vec<(String, f64)>]) -> Vec<Summary> {
    let mut order: Vec<String> = Vec::new();
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for run in per_seed {
        for (name, v) in run {
            let entry = values.entry(name.clone()).or_insert_with(|| {
                order.push(name.clone());
                Vec::new()
            });
            entry.push(*v);
        }
    }
    order
        .into_iter()
        .map(|metric| {
            let xs = &values[&metric];
            let n = xs.len();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = if n > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
            let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Summary { metric, n, mean, std: var.sqrt(), min, max }
        })
        .collect()
}
