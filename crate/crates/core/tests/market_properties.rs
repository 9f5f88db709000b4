use proptest::prelude::*;
use stratval_core::markets::{LmsrMarket, ParimutuelPool, Side};
use stratval_core::{AgentId, Amount, InstanceId};

fn side(b: bool) -> Side {
    if b {
        Side::Agree
    } else {
        Side::Disagree
    }
}

proptest! {
    #[test]
    fn lmsr_prices_stay_in_unit_interval(
        liquidity in 0.5f64..5000.0,
        trades in prop::collection::vec((any::<bool>(), 0.001f64..5000.0), 0..40),
    ) {
        let mut m = LmsrMarket::new(InstanceId(0), liquidity).unwrap();
        for (i, (b, dq)) in trades.iter().enumerate() {
            m.buy(AgentId(i as u32), side(*b), *dq, f64::INFINITY).unwrap();
            let (p, q) = (m.price_of(Side::Agree), m.price_of(Side::Disagree));
            prop_assert!(p > 0.0 && p < 1.0);
            prop_assert!((p + q - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn lmsr_cost_is_path_independent(
        liquidity in 1.0f64..1000.0,
        trades in prop::collection::vec((any::<bool>(), 0.01f64..500.0), 1..30),
    ) {
        let mut forward = LmsrMarket::new(InstanceId(0), liquidity).unwrap();
        let mut backward = forward.clone();
        let start = forward.cost_function();
        let paid_fwd: f64 = trades.iter().map(|(b, dq)| forward.buy(AgentId(0), side(*b), *dq, f64::INFINITY).unwrap()).sum();
        let paid_bwd: f64 = trades.iter().rev().map(|(b, dq)| backward.buy(AgentId(0), side(*b), *dq, f64::INFINITY).unwrap()).sum();
        let direct = forward.cost_function() - start;
        let tol = 1e-9 * direct.abs().max(1e-9);
        prop_assert!((paid_fwd - direct).abs() <= tol, "{} vs {}", paid_fwd, direct);
        prop_assert!((paid_bwd - direct).abs() <= tol);
    }

    #[test]
    fn lmsr_balanced_book_prices_half(liquidity in 0.1f64..1e4, q in 0.0f64..1e5) {
        let mut m = LmsrMarket::new(InstanceId(0), liquidity).unwrap();
        if q > 0.0 {
            m.buy(AgentId(0), Side::Agree, q, f64::INFINITY).unwrap();
            m.buy(AgentId(1), Side::Disagree, q, f64::INFINITY).unwrap();
        }
        prop_assert_eq!(m.price(), 0.5);
    }

    #[test]
    fn lmsr_loss_is_bounded(
        liquidity in 1.0f64..1000.0,
        trades in prop::collection::vec((any::<bool>(), 0.01f64..2000.0), 0..30),
        outcome in any::<bool>(),
    ) {
        let mut m = LmsrMarket::new(InstanceId(0), liquidity).unwrap();
        for (b, dq) in &trades {
            m.buy(AgentId(0), side(*b), *dq, f64::INFINITY).unwrap();
        }
        let s = m.settle(side(outcome)).unwrap();
        prop_assert!(s.maker_loss <= liquidity * std::f64::consts::LN_2 + 1e-6);
    }

    #[test]
    fn parimutuel_pays_exactly_the_pool(
        stakes in prop::collection::vec((0u32..8, any::<bool>(), 1i64..50_000_000), 1..30),
        outcome in any::<bool>(),
    ) {
        let mut pool = ParimutuelPool::new(InstanceId(0));
        for (a, b, s) in &stakes {
            pool.stake(AgentId(*a), side(*b), Amount(*s)).unwrap();
        }
        let win = side(outcome);
        let (w, l) = (pool.total(win).0 as i128, pool.total(!win).0 as i128);
        let before = pool.clone();
        let settled = pool.settle(win).unwrap();
        let paid: Amount = settled.payouts.values().copied().sum();
        prop_assert_eq!(paid, before.total_staked());
        if w > 0 {
            for (agent, amount) in &settled.payouts {
                let s = before.stake_of(*agent, win).0 as i128;
                // exact rational payout s + s*L/W, compared in micro-units
                let exact_floor = s + s * l / w;
                let got = amount.0 as i128;
                prop_assert!(got == exact_floor || got == exact_floor + 1, "{} vs {}", got, exact_floor);
            }
        } else {
            for (agent, amount) in &settled.payouts {
                let own = before.stake_of(*agent, Side::Agree) + before.stake_of(*agent, Side::Disagree);
                prop_assert_eq!(*amount, own);
            }
        }
    }
}
