use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stratval_core::audit::{audit_probability, sample_audit_events, sample_audit_times, AuditOutcome, AuditSchedule};
use stratval_core::model::StrategyProposal;
use stratval_core::tokens::{Ppm, ProtocolAccount};
use stratval_core::{Account, AgentId, Amount, DualLedger, StrategyId, Token};

#[test]
fn first_audit_time_matches_exponential_cdf() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (rate, horizon, n) = (0.3, 20.0, 20_000);
    let firsts: Vec<f64> =
        (0..n).map(|_| sample_audit_times(&mut rng, rate, horizon).unwrap().first().copied().unwrap_or(f64::INFINITY)).collect();
    for dt in [0.5, 1.0, 3.0, 7.0] {
        let empirical = firsts.iter().filter(|t| **t <= dt).count() as f64 / n as f64;
        let p = audit_probability(rate, dt).unwrap();
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((empirical - p).abs() < 4.0 * se, "dt={dt}: {empirical} vs {p}");
    }
}

#[test]
fn epoch_events_are_sorted_and_in_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..500 {
        let ev = sample_audit_events(&mut rng, 0.7, 30).unwrap();
        assert!(ev.windows(2).all(|w| w[0] <= w[1]));
        assert!(ev.iter().all(|e| *e < 30));
    }
    assert!(sample_audit_events(&mut rng, 0.0, 10).is_err());
    assert!(sample_audit_events(&mut rng, 1.0, 0).is_err());
}

#[test]
fn per_epoch_audit_frequency_matches_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (rate, horizon, n) = (0.2, 10u64, 20_000);
    let mut hit_epoch0 = 0usize;
    for _ in 0..n {
        if sample_audit_events(&mut rng, rate, horizon).unwrap().first() == Some(&0) {
            hit_epoch0 += 1;
        }
    }
    let p = audit_probability(rate, 1.0).unwrap();
    let f = hit_epoch0 as f64 / n as f64;
    assert!((f - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt());
}

fn ledger(pool: Amount) -> DualLedger {
    let mut l = DualLedger::new();
    for a in 0..5 {
        l.genesis_credit(Account::free(AgentId(a)), Token::Alpha, Amount::tokens(10 * a as i64 + 1)).unwrap();
    }
    l.genesis_credit(Account::Protocol(ProtocolAccount::LotteryPool), Token::Supra, pool).unwrap();
    l.seal();
    l
}

fn strategy(quality: f64) -> StrategyProposal {
    StrategyProposal::new(StrategyId(0), AgentId(9), Amount::tokens(100), 1.0, vec![0.0], quality, Amount::tokens(100)).unwrap()
}

#[test]
fn detection_rate_matches_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut sched = AuditSchedule::new(0.1, Amount(1), Ppm(0), Amount::ZERO, 0.8, 0.3).unwrap();
    let mut l = ledger(Amount::tokens(1_000_000));
    let n = 5000;
    let candidates: Vec<AgentId> = (0..5).map(AgentId).collect();
    let fraud = strategy(0.1);
    let detected = (0..n)
        .filter(|e| {
            sched.run_audit(&mut l, &fraud, Amount::tokens(10), &candidates, *e, &mut rng).unwrap().outcome
                == AuditOutcome::FraudDetected
        })
        .count();
    let f = detected as f64 / n as f64;
    assert!((f - 0.8).abs() < 4.0 * (0.16f64 / n as f64).sqrt());
    let clean = strategy(0.9);
    for e in 0..200 {
        let r = sched.run_audit(&mut l, &clean, Amount::tokens(10), &candidates, e, &mut rng).unwrap();
        assert_eq!(r.outcome, AuditOutcome::Clean);
    }
    l.check_invariants().unwrap();
}

#[test]
fn audits_respect_pool_and_reputation_floor() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut sched = AuditSchedule::new(0.1, Amount::tokens(1), Ppm::from_fraction(0.01), Amount::tokens(25), 1.0, 0.3).unwrap();
    let mut l = ledger(Amount::tokens(2));
    let all: Vec<AgentId> = (0..5).map(AgentId).collect();
    let r = sched.run_audit(&mut l, &strategy(0.1), Amount::tokens(1000), &all, 0, &mut rng).unwrap();
    assert_eq!(r.outcome, AuditOutcome::Starved);
    assert_eq!(AuditSchedule::lottery_pool(&l), Amount::tokens(2));

    let mut l = ledger(Amount::tokens(100));
    let low: Vec<AgentId> = (0..3).map(AgentId).collect();
    let r = sched.run_audit(&mut l, &strategy(0.1), Amount::tokens(10), &low, 0, &mut rng).unwrap();
    assert_eq!(r.outcome, AuditOutcome::Unstaffed);
    let r = sched.run_audit(&mut l, &strategy(0.1), Amount::tokens(10), &all, 0, &mut rng).unwrap();
    assert_eq!(r.outcome, AuditOutcome::FraudDetected);
    assert!(r.rewards.iter().all(|(a, _)| a.0 >= 3));
    assert_eq!(r.rewards.iter().map(|(_, x)| *x).sum::<Amount>(), r.reward);
    assert_eq!(l.protocol(ProtocolAccount::GasSink, Token::Supra), Amount::tokens(1));
    l.check_invariants().unwrap();
}
