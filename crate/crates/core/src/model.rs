//! Single-market dynamics of the price pump.
//!
//! Each trading round a random subset of agents is drawn. The clearing price
//! is the price at which the dollar amounts they want to move into and out of
//! stock cancel. The active agents rebalance to their target stock-to-cash
//! ratios, and then each one revises its target up by `alpha` or down by
//! `beta` depending on whether the market beat its expectation.
//!
//! Inactive agents are only marked to market: their dollar stock value follows
//! the price, their cash and target ratio stay put.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AsppError, Result};

/// Below this the active stock positions are treated as vanished.
pub const DEGENERATE_DENOMINATOR: f64 = 1e-300;

/// Relative band around the target ratio inside which the feedback is `Flat`.
pub const FLAT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentPortfolio {
    /// Dollar value of the stock position at the current price.
    pub stock_value: f64,
    /// Cash ("bond" account, zero interest).
    pub cash: f64,
    /// Target stock-to-cash ratio.
    pub target_ratio: f64,
}

impl AgentPortfolio {
    pub fn new(stock_value: f64, cash: f64, target_ratio: f64) -> Self {
        AgentPortfolio {
            stock_value,
            cash,
            target_ratio,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.stock_value > 0.0 && self.cash > 0.0 && self.target_ratio > 0.0
    }

    pub fn shares(&self, price: f64) -> f64 {
        self.stock_value / price
    }
}

/// Optimism (`alpha > 1`) and pessimism (`0 < beta <= 1`) multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsychoParams {
    pub alpha: f64,
    pub beta: f64,
}

impl PsychoParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let params = PsychoParams { alpha, beta };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 1.0) {
            return Err(AsppError::config(
                "alpha",
                format!("must exceed 1, got {}", self.alpha),
            ));
        }
        if !(self.beta.is_finite() && self.beta > 0.0 && self.beta <= 1.0) {
            return Err(AsppError::config(
                "beta",
                format!("must lie in (0, 1], got {}", self.beta),
            ));
        }
        if self.beta == 1.0 {
            log::warn!("beta = 1: agents never lower their target ratio");
        }
        Ok(())
    }

    /// `alpha * beta`, the per-trade drift factor of a target ratio.
    pub fn drift(&self) -> f64 {
        self.alpha * self.beta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TradeSignal {
    Up,
    Flat,
    Down,
}

impl TradeSignal {
    /// Compares the realized pre-trade ratio with the target.
    pub fn classify(target: f64, realized: f64) -> TradeSignal {
        let rel = realized / target - 1.0;
        if rel.abs() <= FLAT_TOLERANCE {
            TradeSignal::Flat
        } else if rel > 0.0 {
            TradeSignal::Up
        } else {
            TradeSignal::Down
        }
    }
}

/// How the active set is drawn each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionMode {
    /// Exactly `m` agents.
    Fixed(usize),
    /// Size drawn uniformly from `min..=max`, then that many agents.
    UniformRandom { min: usize, max: usize },
}

impl SelectionMode {
    pub fn validate(&self, n_agents: usize) -> Result<()> {
        match *self {
            SelectionMode::Fixed(m) => {
                if m == 0 || m > n_agents {
                    return Err(AsppError::config(
                        "active",
                        format!("need 1 <= m <= N = {n_agents}, got {m}"),
                    ));
                }
            }
            SelectionMode::UniformRandom { min, max } => {
                if min == 0 || min > max || max > n_agents {
                    return Err(AsppError::config(
                        "active_range",
                        format!("need 1 <= min <= max <= N = {n_agents}, got {min},{max}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Expected number of active agents per round.
    pub fn mean_active(&self) -> f64 {
        match *self {
            SelectionMode::Fixed(m) => m as f64,
            SelectionMode::UniformRandom { min, max } => (min + max) as f64 / 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    pub price: f64,
    pub day: usize,
    pub agents: Vec<AgentPortfolio>,
    /// Cash of each agent at day 0.
    pub initial_cash: Vec<f64>,
}

impl MarketState {
    pub fn new(price: f64, agents: Vec<AgentPortfolio>) -> Self {
        let initial_cash = agents.iter().map(|a| a.cash).collect();
        MarketState {
            price,
            day: 0,
            agents,
            initial_cash,
        }
    }

    /// Unit stock and unit cash per agent at price 1, targets `1 + U(-eps, eps)`.
    pub fn perturbed_equilibrium<R: Rng + ?Sized>(n_agents: usize, epsilon: f64, rng: &mut R) -> Self {
        let agents = (0..n_agents)
            .map(|_| {
                let e = if epsilon > 0.0 {
                    rng.random_range(-epsilon..=epsilon)
                } else {
                    0.0
                };
                AgentPortfolio::new(1.0, 1.0, 1.0 + e)
            })
            .collect();
        MarketState::new(1.0, agents)
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn total_cash(&self) -> f64 {
        self.agents.iter().map(|a| a.cash).sum()
    }

    pub fn total_shares(&self) -> f64 {
        self.agents.iter().map(|a| a.shares(self.price)).sum()
    }
}

/// Dollars the agent moves into stock (negative: out of stock) to reach its
/// target ratio after the price moves by `price_ratio`.
pub fn desired_cash_flow(agent: &AgentPortfolio, price_ratio: f64) -> f64 {
    let k = agent.target_ratio;
    (k * agent.cash - price_ratio * agent.stock_value) / (1.0 + k)
}

/// Price at which the desired cash flows of `active` sum to zero.
///
/// `stock_value` of every agent is taken at the old price `p0`.
pub fn clearing_price<'a, I>(active: I, p0: f64) -> Result<f64>
where
    I: IntoIterator<Item = &'a AgentPortfolio>,
{
    let (num, den) = active.into_iter().fold((0.0, 0.0), |(num, den), a| {
        let w = 1.0 / (1.0 + a.target_ratio);
        (num + a.target_ratio * a.cash * w, den + a.stock_value * w)
    });
    if !(den > DEGENERATE_DENOMINATOR) {
        return Err(AsppError::DegenerateMarket { denominator: den });
    }
    Ok(p0 * num / den)
}

/// Moves `state` to `price`: active agents rebalance to their targets, every
/// other agent is marked to market. Returns the cash flow of each active agent
/// in the order of `active`.
pub fn apply_trades(state: &mut MarketState, active: &[usize], price: f64) -> Vec<f64> {
    let ratio = price / state.price;
    for agent in state.agents.iter_mut() {
        agent.stock_value *= ratio;
    }
    let flows = active
        .iter()
        .map(|&i| {
            let a = &mut state.agents[i];
            let k = a.target_ratio;
            // stock_value is already at the new price
            let cash = (a.cash + a.stock_value) / (1.0 + k);
            let flow = a.cash - cash;
            a.cash = cash;
            a.stock_value = k * cash;
            flow
        })
        .collect();
    state.price = price;
    flows
}

pub fn update_target_ratio(k: f64, realized: f64, params: &PsychoParams) -> f64 {
    match TradeSignal::classify(k, realized) {
        TradeSignal::Up => params.alpha * k,
        TradeSignal::Flat => k,
        TradeSignal::Down => params.beta * k,
    }
}

/// Uniform random subset of `0..n_agents` drawn without replacement.
pub fn select_active<R: Rng + ?Sized>(
    rng: &mut R,
    n_agents: usize,
    mode: &SelectionMode,
) -> Result<Vec<usize>> {
    mode.validate(n_agents)?;
    let m = match *mode {
        SelectionMode::Fixed(m) => m,
        SelectionMode::UniformRandom { min, max } => rng.random_range(min..=max),
    };
    Ok(index::sample(rng, n_agents, m).into_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub price: f64,
    pub active: Vec<usize>,
    /// Cash flow into stock per active agent, aligned with `active`.
    pub flows: Vec<f64>,
    pub signals: Vec<TradeSignal>,
    /// Sum of the positive flows.
    pub volume_cash: f64,
    /// `volume_cash` in shares at the new price.
    pub volume_shares: f64,
}

/// One trading period: draw, clear, trade, then revise the traders' targets.
pub fn trading_round<R: Rng + ?Sized>(
    state: &mut MarketState,
    params: &PsychoParams,
    rng: &mut R,
    mode: &SelectionMode,
) -> Result<RoundReport> {
    let active = select_active(rng, state.n_agents(), mode)?;
    let p0 = state.price;
    let price = clearing_price(active.iter().map(|&i| &state.agents[i]), p0)?;
    let ratio = price / p0;

    let realized: Vec<f64> = active
        .iter()
        .map(|&i| {
            let a = &state.agents[i];
            ratio * a.stock_value / a.cash
        })
        .collect();

    let flows = apply_trades(state, &active, price);

    let signals = active
        .iter()
        .zip(&realized)
        .map(|(&i, &real)| {
            let a = &mut state.agents[i];
            let signal = TradeSignal::classify(a.target_ratio, real);
            a.target_ratio = update_target_ratio(a.target_ratio, real, params);
            signal
        })
        .collect();

    let volume_cash: f64 = flows.iter().filter(|&&x| x > 0.0).sum();
    Ok(RoundReport {
        price,
        active,
        flows,
        signals,
        volume_cash,
        volume_shares: volume_cash / price,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_agent_example() -> MarketState {
        MarketState::new(
            1.0,
            vec![
                AgentPortfolio::new(1.0, 1.0, 2.0),
                AgentPortfolio::new(1.0, 1.0, 1.0),
            ],
        )
    }

    #[test]
    fn desired_flow_examples() {
        let a = AgentPortfolio::new(1.0, 1.0, 2.0);
        let x = desired_cash_flow(&a, 1.4);
        assert_relative_eq!(x, 0.2, epsilon = 1e-15);
        assert_relative_eq!((1.4 + x) / (1.0 - x), 2.0, epsilon = 1e-14);

        assert_eq!(desired_cash_flow(&AgentPortfolio::new(1.0, 1.0, 1.0), 1.0), 0.0);
        assert_relative_eq!(
            desired_cash_flow(&AgentPortfolio::new(1.0, 1.0, 0.5), 1.4),
            -0.6,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            desired_cash_flow(&AgentPortfolio::new(1.0, 1.0, 1.0), 1.4),
            -0.2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn clearing_price_examples() {
        let s = two_agent_example();
        let p = clearing_price(&s.agents, 1.0).unwrap();
        assert_relative_eq!(p, 1.4, epsilon = 1e-14);
        let total: f64 = s.agents.iter().map(|a| desired_cash_flow(a, p)).sum();
        assert!(total.abs() < 1e-14);

        let eq = [AgentPortfolio::new(3.0, 1.5, 2.0), AgentPortfolio::new(0.5, 2.0, 0.25)];
        assert_relative_eq!(clearing_price(&eq, 7.0).unwrap(), 7.0, epsilon = 1e-14);

        let lone = AgentPortfolio::new(1.0, 2.0, 3.0);
        let p = clearing_price([&lone], 1.0).unwrap();
        assert_relative_eq!(p, 6.0, epsilon = 1e-14);
        assert!(desired_cash_flow(&lone, p).abs() < 1e-15);
    }

    #[test]
    fn clearing_price_degenerate() {
        let dead = AgentPortfolio::new(0.0, 1.0, 1.0);
        assert!(matches!(
            clearing_price([&dead], 1.0),
            Err(AsppError::DegenerateMarket { .. })
        ));
        assert!(matches!(
            clearing_price(std::iter::empty(), 1.0),
            Err(AsppError::DegenerateMarket { .. })
        ));
    }

    #[test]
    fn apply_trades_two_agents() {
        let mut s = two_agent_example();
        let flows = apply_trades(&mut s, &[0, 1], 1.4);
        assert_relative_eq!(flows[0], 0.2, epsilon = 1e-14);
        assert_relative_eq!(flows[1], -0.2, epsilon = 1e-14);
        assert_relative_eq!(s.agents[0].stock_value, 1.6, epsilon = 1e-14);
        assert_relative_eq!(s.agents[0].cash, 0.8, epsilon = 1e-14);
        assert_relative_eq!(s.agents[1].stock_value, 1.2, epsilon = 1e-14);
        assert_relative_eq!(s.agents[1].cash, 1.2, epsilon = 1e-14);
        assert_eq!(s.price, 1.4);
    }

    #[test]
    fn inactive_agents_are_marked_to_market() {
        let mut s = MarketState::new(
            2.0,
            vec![
                AgentPortfolio::new(1.0, 1.0, 2.0),
                AgentPortfolio::new(1.0, 1.0, 1.0),
                AgentPortfolio::new(4.0, 3.0, 1.5),
            ],
        );
        let p = clearing_price(&s.agents[..2], 2.0).unwrap();
        apply_trades(&mut s, &[0, 1], p);
        assert_relative_eq!(s.agents[2].stock_value, 4.0 * p / 2.0, epsilon = 1e-14);
        assert_eq!(s.agents[2].cash, 3.0);
        assert_eq!(s.agents[2].target_ratio, 1.5);
    }

    #[test]
    fn feedback_branches() {
        let p = PsychoParams::new(1.2, 0.96).unwrap();
        assert_relative_eq!(update_target_ratio(1.0, 1.1, &p), 1.2);
        assert_eq!(update_target_ratio(1.0, 1.0, &p), 1.0);
        assert_relative_eq!(update_target_ratio(2.0, 1.5, &p), 1.92);
        assert_eq!(TradeSignal::classify(1.0, 1.0 + 1e-13), TradeSignal::Flat);
        assert_eq!(TradeSignal::classify(1.0, 1.0 + 1e-10), TradeSignal::Up);
        assert_eq!(TradeSignal::classify(1.0, 1.0 - 1e-10), TradeSignal::Down);
    }

    #[test]
    fn psycho_validation() {
        assert!(PsychoParams::new(0.9, 0.5).is_err());
        assert!(PsychoParams::new(1.0, 0.5).is_err());
        assert!(PsychoParams::new(1.2, 0.0).is_err());
        assert!(PsychoParams::new(1.2, 1.01).is_err());
        assert!(PsychoParams::new(1.2, 1.0).is_ok());
    }

    #[test]
    fn selection_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut all = select_active(&mut rng, 8, &SelectionMode::Fixed(8)).unwrap();
        all.sort_unstable();
        assert_eq!(all, (0..8).collect::<Vec<_>>());

        for _ in 0..100 {
            let mut pick = select_active(&mut rng, 500, &SelectionMode::Fixed(10)).unwrap();
            assert_eq!(pick.len(), 10);
            assert!(pick.iter().all(|&i| i < 500));
            pick.sort_unstable();
            pick.dedup();
            assert_eq!(pick.len(), 10);
        }

        let mode = SelectionMode::UniformRandom { min: 3, max: 6 };
        let mut seen = [false; 7];
        for _ in 0..400 {
            let pick = select_active(&mut rng, 20, &mode).unwrap();
            assert!((3..=6).contains(&pick.len()));
            seen[pick.len()] = true;
        }
        assert!(seen[3] && seen[4] && seen[5] && seen[6]);

        assert!(select_active(&mut rng, 5, &SelectionMode::Fixed(0)).is_err());
        assert!(select_active(&mut rng, 5, &SelectionMode::Fixed(6)).is_err());
        let bad = SelectionMode::UniformRandom { min: 4, max: 2 };
        assert!(select_active(&mut rng, 5, &bad).is_err());
    }

    #[test]
    fn selection_is_seed_deterministic() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| select_active(&mut rng, 500, &SelectionMode::Fixed(10)).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(11), draw(11));
        assert_ne!(draw(11), draw(12));
    }

    #[test]
    fn equilibrium_round_is_a_fixed_point() {
        let mut s = MarketState::new(
            1.0,
            (0..20)
                .map(|i| {
                    let k = 0.5 + i as f64 * 0.1;
                    AgentPortfolio::new(k * 2.0, 2.0, k)
                })
                .collect(),
        );
        let before = s.clone();
        let params = PsychoParams::new(1.2, 0.96).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let rep = trading_round(&mut s, &params, &mut rng, &SelectionMode::Fixed(5)).unwrap();
            assert_relative_eq!(rep.price, 1.0, epsilon = 1e-14);
            assert!(rep.flows.iter().all(|x| x.abs() < 1e-14));
            assert!(rep.signals.iter().all(|&g| g == TradeSignal::Flat));
        }
        for (a, b) in s.agents.iter().zip(&before.agents) {
            assert_relative_eq!(a.stock_value, b.stock_value, max_relative = 1e-12);
            assert_relative_eq!(a.cash, b.cash, max_relative = 1e-12);
            assert_eq!(a.target_ratio, b.target_ratio);
        }
    }

    #[test]
    fn single_active_agent_never_trades() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = MarketState::perturbed_equilibrium(30, 0.2, &mut rng);
        let params = PsychoParams::new(1.3, 0.9).unwrap();
        for _ in 0..200 {
            let rep = trading_round(&mut s, &params, &mut rng, &SelectionMode::Fixed(1)).unwrap();
            assert_eq!(rep.flows.len(), 1);
            assert!(rep.flows[0].abs() <= 1e-15 * s.agents[rep.active[0]].cash.max(1.0));
        }
    }

    #[test]
    fn two_agents_take_opposite_views() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = MarketState::perturbed_equilibrium(2, 0.01, &mut rng);
        let params = PsychoParams::new(3.01, 0.36).unwrap();
        let mut last: Option<Vec<TradeSignal>> = None;
        for n in 0..25 {
            let rep = trading_round(&mut s, &params, &mut rng, &SelectionMode::Fixed(2)).unwrap();
            let mut by_agent = vec![TradeSignal::Flat; 2];
            for (&i, &g) in rep.active.iter().zip(&rep.signals) {
                by_agent[i] = g;
            }
            assert_ne!(by_agent[0], by_agent[1], "round {n}");
            assert!(by_agent.iter().all(|&g| g != TradeSignal::Flat));
            if let Some(prev) = &last {
                assert_ne!(prev[0], by_agent[0], "round {n}: signals should alternate");
            }
            last = Some(by_agent);
        }
    }
}
