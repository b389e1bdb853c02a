//! Asynchronous stochastic price pump: an agent-based market in which
//! randomly drawn groups of adaptive traders clear a price each day, plus the
//! return, volatility and crash-risk estimators built on top of it.

pub mod cli;
pub mod ensemble;
pub mod error;
pub mod model;
pub mod risk;
pub mod stats;

pub use ensemble::{derive_seed, run_ensemble, run_trajectory, EnsembleSummary, ModelConfig, TrajectoryRecord};
pub use error::{AsppError, Result};
pub use model::{AgentPortfolio, MarketState, PsychoParams, SelectionMode, TradeSignal};
