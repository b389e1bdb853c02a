use aspp::model::{
    apply_trades, clearing_price, desired_cash_flow, trading_round, update_target_ratio,
    AgentPortfolio, MarketState, PsychoParams, SelectionMode, TradeSignal,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const REL: f64 = 1e-9;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

fn arb_agent() -> impl Strategy<Value = AgentPortfolio> {
    (0.01f64..100.0, 0.01f64..100.0, 0.05f64..20.0)
        .prop_map(|(s, b, k)| AgentPortfolio::new(s, b, k))
}

/// A market plus a non-empty active subset.
fn arb_market() -> impl Strategy<Value = (MarketState, Vec<usize>)> {
    (prop::collection::vec(arb_agent(), 1..40), 0.01f64..100.0).prop_flat_map(|(agents, price)| {
        let n = agents.len();
        let state = MarketState::new(price, agents);
        (Just(state), prop::sample::subsequence((0..n).collect::<Vec<_>>(), 1..=n))
    })
}

/// Bisection on the decreasing aggregate demand.
fn bisect_clearing(agents: &[AgentPortfolio], p0: f64) -> f64 {
    let excess = |p: f64| -> f64 { agents.iter().map(|a| desired_cash_flow(a, p / p0)).sum() };
    let (mut lo, mut hi) = (0.0, p0);
    while excess(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn trade_conserves_cash_and_shares((state, active) in arb_market()) {
        let mut state = state;
        let cash0 = state.total_cash();
        let shares0 = state.total_shares();
        let p = clearing_price(active.iter().map(|&i| &state.agents[i]), state.price).unwrap();
        apply_trades(&mut state, &active, p);
        prop_assert!(close(state.total_cash(), cash0, REL), "{} vs {}", state.total_cash(), cash0);
        prop_assert!(close(state.total_shares(), shares0, REL), "{} vs {}", state.total_shares(), shares0);
    }

    #[test]
    fn desired_flows_balance_at_clearing_price((state, active) in arb_market()) {
        let p = clearing_price(active.iter().map(|&i| &state.agents[i]), state.price).unwrap();
        let ratio = p / state.price;
        let flows: Vec<f64> = active.iter().map(|&i| desired_cash_flow(&state.agents[i], ratio)).collect();
        let sum: f64 = flows.iter().sum();
        let scale: f64 = flows.iter().map(|x| x.abs()).sum::<f64>().max(1.0);
        prop_assert!(sum.abs() <= REL * scale, "sum {sum}, scale {scale}");

        // realized flows agree with the desired ones
        let mut after = state.clone();
        let realized = apply_trades(&mut after, &active, p);
        for (x, y) in flows.iter().zip(&realized) {
            prop_assert!(close(*x, *y, REL));
        }
    }

    #[test]
    fn traders_land_on_their_targets((state, active) in arb_market()) {
        let mut state = state;
        let before = state.clone();
        let p = clearing_price(active.iter().map(|&i| &state.agents[i]), state.price).unwrap();
        apply_trades(&mut state, &active, p);
        let ratio = p / before.price;
        for (i, (a, b)) in state.agents.iter().zip(&before.agents).enumerate() {
            if active.contains(&i) {
                prop_assert!(close(a.stock_value / a.cash, b.target_ratio, REL));
            } else {
                prop_assert_eq!(a.cash, b.cash);
                prop_assert!(close(a.stock_value, b.stock_value * ratio, REL));
            }
        }
    }

    #[test]
    fn equilibrium_is_a_fixed_point(n in 1usize..200, m_frac in 0.0f64..1.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = MarketState::perturbed_equilibrium(n, 0.0, &mut rng);
        let m = 1 + ((n - 1) as f64 * m_frac) as usize;
        let params = PsychoParams::new(1.2, 0.96).unwrap();
        for _ in 0..5 {
            let rep = trading_round(&mut state, &params, &mut rng, &SelectionMode::Fixed(m)).unwrap();
            prop_assert!(close(rep.price, 1.0, REL));
            prop_assert!(rep.signals.iter().all(|s| *s == TradeSignal::Flat));
        }
        for a in &state.agents {
            prop_assert!(close(a.cash, 1.0, REL) && close(a.stock_value, 1.0, REL));
            prop_assert_eq!(a.target_ratio, 1.0);
        }
    }

    #[test]
    fn target_ratio_moves_multiplicatively(k in 0.01f64..100.0, realized in 0.01f64..100.0,
                                           alpha in 1.0001f64..4.0, beta in 0.01f64..=1.0) {
        let params = PsychoParams { alpha, beta };
        let next = update_target_ratio(k, realized, &params);
        let expected = match TradeSignal::classify(k, realized) {
            TradeSignal::Up => alpha * k,
            TradeSignal::Down => beta * k,
            TradeSignal::Flat => k,
        };
        prop_assert_eq!(next, expected);
        if realized > k * (1.0 + 1e-9) {
            prop_assert_eq!(next, alpha * k);
        }
        if realized < k * (1.0 - 1e-9) {
            prop_assert_eq!(next, beta * k);
        }
    }

    #[test]
    fn clearing_price_matches_root_finder(agents in prop::collection::vec(arb_agent(), 1..=3),
                                         p0 in 0.01f64..100.0) {
        let closed = clearing_price(agents.iter(), p0).unwrap();
        let root = bisect_clearing(&agents, p0);
        prop_assert!((closed - root).abs() <= 1e-8 * closed.max(1e-300), "{closed} vs {root}");
    }

    #[test]
    fn simulated_rounds_conserve(n in 2usize..60, seed in any::<u64>(), eps in 0.0f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = MarketState::perturbed_equilibrium(n, eps, &mut rng);
        let params = PsychoParams::new(1.2, 0.96).unwrap();
        let mode = SelectionMode::UniformRandom { min: 1, max: n };
        let cash0 = state.total_cash();
        let shares0 = state.total_shares();
        for _ in 0..50 {
            let rep = trading_round(&mut state, &params, &mut rng, &mode).unwrap();
            let scale: f64 = rep.flows.iter().map(|x| x.abs()).sum::<f64>().max(1.0);
            prop_assert!(rep.flows.iter().sum::<f64>().abs() <= REL * scale);
        }
        prop_assert!(close(state.total_cash(), cash0, REL));
        prop_assert!(close(state.total_shares(), shares0, REL));
    }
}
