//! Seeded Monte Carlo ensembles of independent markets.
//!
//! Every path owns a ChaCha8 stream seeded from `derive_seed(master, index)`,
//! so a path's output depends only on the config and its index. Paths run on
//! a rayon pool in fixed-size batches and are consumed strictly in index
//! order, which keeps every reduction bitwise identical for any pool width.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AsppError, Result};
use crate::model::{trading_round, MarketState, PsychoParams, SelectionMode};
use crate::risk::{self, ExposureProportions, GammaEstimate, PathRisk, RiskProfile};
use crate::stats::{self, RegressionFit, ReturnStats};

pub const DEFAULT_DAYS_PER_YEAR: u32 = 360;
pub const DEFAULT_TRADES_PER_DAY: u32 = 1;

/// Paths mapped per parallel batch before being handed over in order.
const BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_agents: usize,
    pub selection: SelectionMode,
    pub psycho: PsychoParams,
    pub horizon_years: f64,
    pub trades_per_day: u32,
    pub days_per_year: u32,
    pub init_epsilon: f64,
    pub master_seed: u64,
    pub q_threshold: f64,
    pub r_threshold: f64,
    pub n_paths: usize,
    pub burn_in_years: f64,
    /// Worker threads; `None` uses every core. Never affects results.
    pub workers: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_agents: 500,
            selection: SelectionMode::Fixed(10),
            psycho: PsychoParams {
                alpha: 1.2,
                beta: 0.96,
            },
            horizon_years: 20.0,
            trades_per_day: DEFAULT_TRADES_PER_DAY,
            days_per_year: DEFAULT_DAYS_PER_YEAR,
            init_epsilon: 0.01,
            master_seed: 42,
            q_threshold: 0.1,
            r_threshold: 0.6,
            n_paths: 100,
            burn_in_years: 2.0,
            workers: None,
        }
    }
}

impl ModelConfig {
    /// Checks everything except the horizon length.
    pub fn validate_structure(&self) -> Result<()> {
        if self.n_agents == 0 {
            return Err(AsppError::config("n_agents", "must be at least 1"));
        }
        self.selection.validate(self.n_agents)?;
        self.psycho.validate()?;
        if self.trades_per_day == 0 {
            return Err(AsppError::config("trades_per_day", "must be at least 1"));
        }
        if self.days_per_year == 0 {
            return Err(AsppError::config("days_per_year", "must be at least 1"));
        }
        if !(self.init_epsilon.is_finite() && (0.0..1.0).contains(&self.init_epsilon)) {
            return Err(AsppError::config(
                "init_epsilon",
                format!("must lie in [0, 1), got {}", self.init_epsilon),
            ));
        }
        for (name, v) in [("q_threshold", self.q_threshold), ("r_threshold", self.r_threshold)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(AsppError::config(name, format!("must lie in (0, 1), got {v}")));
            }
        }
        if self.n_paths == 0 {
            return Err(AsppError::config("n_paths", "must be at least 1"));
        }
        if !(self.burn_in_years.is_finite() && self.burn_in_years >= 0.0) {
            return Err(AsppError::config("burn_in_years", "must be non-negative"));
        }
        if self.workers == Some(0) {
            return Err(AsppError::config("workers", "must be at least 1"));
        }
        if !(self.horizon_years.is_finite() && self.horizon_years >= 0.0) {
            return Err(AsppError::config("horizon_years", "must be non-negative"));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        if self.n_days() == 0 {
            return Err(AsppError::config(
                "horizon_years",
                format!("must cover at least one day, got {}", self.horizon_years),
            ));
        }
        Ok(())
    }

    pub fn n_days(&self) -> usize {
        (self.horizon_years * self.days_per_year as f64).round() as usize
    }

    pub fn burn_in_days(&self) -> usize {
        (self.burn_in_years * self.days_per_year as f64).round() as usize
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.days_per_year as f64
    }
}

/// SplitMix64 finalizer; a bijection on `u64`.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of path `path_index`: `mix64(master + (index + 1) * 0x9E3779B97F4A7C15)`.
///
/// The multiplier is odd, so distinct indices give distinct pre-images and the
/// map is injective for a fixed master seed.
pub fn derive_seed(master_seed: u64, path_index: u64) -> u64 {
    mix64(master_seed.wrapping_add(path_index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Per-day observations of one path. Index `j` holds the end of day `j + 1`;
/// day 0 is kept in `initial_price` and `initial_exposure`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub path_index: u64,
    pub seed: u64,
    pub initial_price: f64,
    pub initial_exposure: ExposureProportions,
    pub price: Vec<f64>,
    pub log_gross_return: Vec<f64>,
    /// Cash volume over total cash.
    pub volume_cash_fraction: Vec<f64>,
    pub volume_shares: Vec<f64>,
    pub q_proportion: Vec<f64>,
    pub r_proportion: Vec<f64>,
    /// Day on which the market degenerated; the arrays stop before it.
    pub degenerate_on_day: Option<usize>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.price.len()
    }

    pub fn is_empty(&self) -> bool {
        self.price.is_empty()
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate_on_day.is_some()
    }
}

pub fn run_trajectory(config: &ModelConfig, path_index: u64) -> Result<TrajectoryRecord> {
    config.validate_structure()?;
    let seed = derive_seed(config.master_seed, path_index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = MarketState::perturbed_equilibrium(config.n_agents, config.init_epsilon, &mut rng);
    let total_cash = state.total_cash();
    let days = config.n_days();

    let mut rec = TrajectoryRecord {
        path_index,
        seed,
        initial_price: state.price,
        initial_exposure: risk::exposure_proportions(&state, config.q_threshold, config.r_threshold),
        price: Vec::with_capacity(days),
        log_gross_return: Vec::with_capacity(days),
        volume_cash_fraction: Vec::with_capacity(days),
        volume_shares: Vec::with_capacity(days),
        q_proportion: Vec::with_capacity(days),
        r_proportion: Vec::with_capacity(days),
        degenerate_on_day: None,
    };

    'days: for day in 1..=days {
        let open = state.price;
        let mut vol_cash = 0.0;
        let mut vol_shares = 0.0;
        for _ in 0..config.trades_per_day {
            match trading_round(&mut state, &config.psycho, &mut rng, &config.selection) {
                Ok(report) => {
                    vol_cash += report.volume_cash;
                    vol_shares += report.volume_shares;
                }
                Err(AsppError::DegenerateMarket { .. }) => {
                    log::debug!("path {path_index}: degenerate market on day {day}");
                    rec.degenerate_on_day = Some(day);
                    break 'days;
                }
                Err(e) => return Err(e),
            }
        }
        state.day = day;
        let exposure = risk::exposure_proportions(&state, config.q_threshold, config.r_threshold);
        rec.price.push(state.price);
        rec.log_gross_return.push((state.price / open).ln());
        rec.volume_cash_fraction.push(vol_cash / total_cash);
        rec.volume_shares.push(vol_shares);
        rec.q_proportion.push(exposure.q);
        rec.r_proportion.push(exposure.r);
    }
    Ok(rec)
}

fn build_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w);
    }
    builder
        .build()
        .map_err(|e| AsppError::config("workers", e.to_string()))
}

/// Runs every path of the ensemble, maps each record in parallel, and feeds
/// the mapped values to `consume` in path-index order.
pub fn for_each_path<T, M, C>(config: &ModelConfig, map: M, mut consume: C) -> Result<()>
where
    T: Send,
    M: Fn(TrajectoryRecord) -> T + Sync,
    C: FnMut(T),
{
    config.validate_structure()?;
    let pool = build_pool(config.workers)?;
    let n = config.n_paths as u64;
    let mut start = 0u64;
    while start < n {
        let end = (start + BATCH as u64).min(n);
        let batch: Vec<Result<T>> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|i| run_trajectory(config, i).map(&map))
                .collect()
        });
        for item in batch {
            consume(item?);
        }
        start = end;
    }
    Ok(())
}

/// Estimates extracted from one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub path_index: u64,
    pub seed: u64,
    pub degenerate: bool,
    /// Post-burn-in return statistics.
    pub returns: Option<ReturnStats>,
    /// Cumulative volatility regressed on the `r` hazard over the whole path.
    pub gamma_fit: Option<RegressionFit>,
}

impl PathSummary {
    pub fn from_record(rec: &TrajectoryRecord, config: &ModelConfig) -> Self {
        let degenerate = rec.is_degenerate();
        let (returns, gamma_fit) = if degenerate {
            (None, None)
        } else {
            (
                stats::estimate_return_stats(rec, config.burn_in_days()).ok(),
                risk::path_gamma(rec, config.days_per_year).ok(),
            )
        };
        PathSummary {
            path_index: rec.path_index,
            seed: rec.seed,
            degenerate,
            returns,
            gamma_fit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub config: ModelConfig,
    pub n_paths: usize,
    pub n_degenerate: usize,
    /// Paths contributing return statistics.
    pub n_estimated: usize,
    /// Average of per-path mean daily log returns.
    pub mean_log_return: f64,
    /// Standard error of `mean_log_return` across paths.
    pub mean_log_return_path_se: f64,
    /// Average of per-path sigmas.
    pub sigma: f64,
    /// Standard deviation of all post-burn-in log returns pooled together.
    pub pooled_sigma: f64,
    /// `pooled_sigma / sqrt(total observations)`.
    pub pooled_standard_error: f64,
    pub total_observations: usize,
    pub gamma: Option<f64>,
    pub gamma_mean_r_squared: Option<f64>,
    pub paths: Vec<PathSummary>,
}

impl EnsembleSummary {
    /// Reduces per-path results in the order given.
    pub fn from_paths(config: &ModelConfig, paths: Vec<PathSummary>) -> Self {
        let n_degenerate = paths.iter().filter(|p| p.degenerate).count();
        let rs: Vec<&ReturnStats> = paths.iter().filter_map(|p| p.returns.as_ref()).collect();
        let k = rs.len();
        let nan = f64::NAN;

        let (mean_log_return, mean_log_return_path_se, sigma) = if k > 0 {
            let means: Vec<f64> = rs.iter().map(|r| r.mean_log_return).collect();
            let m = stats::mean(&means);
            let se = if k > 1 {
                stats::sample_std(&means) / (k as f64).sqrt()
            } else {
                nan
            };
            (m, se, rs.iter().map(|r| r.sigma).sum::<f64>() / k as f64)
        } else {
            (nan, nan, nan)
        };

        let total_observations: usize = rs.iter().map(|r| r.n_obs).sum();
        let (pooled_sigma, pooled_standard_error) = if total_observations > 1 {
            let grand = rs
                .iter()
                .map(|r| r.mean_log_return * r.n_obs as f64)
                .sum::<f64>()
                / total_observations as f64;
            let ss: f64 = rs
                .iter()
                .map(|r| {
                    let n = r.n_obs as f64;
                    (n - 1.0) * r.sigma * r.sigma + n * (r.mean_log_return - grand).powi(2)
                })
                .sum();
            let sd = (ss / (total_observations - 1) as f64).sqrt();
            (sd, sd / (total_observations as f64).sqrt())
        } else {
            (nan, nan)
        };

        let fits: Vec<RegressionFit> = paths.iter().filter_map(|p| p.gamma_fit).collect();
        let gamma = GammaEstimate::from_fits(fits);

        EnsembleSummary {
            config: config.clone(),
            n_paths: paths.len(),
            n_degenerate,
            n_estimated: k,
            mean_log_return,
            mean_log_return_path_se,
            sigma,
            pooled_sigma,
            pooled_standard_error,
            total_observations,
            gamma: gamma.as_ref().map(|g| g.gamma),
            gamma_mean_r_squared: gamma.as_ref().map(|g| g.mean_r_squared),
            paths,
        }
    }

    /// Annualized gross return implied by the mean daily log return.
    pub fn annual_gross_return(&self) -> f64 {
        (self.mean_log_return * self.config.days_per_year as f64).exp()
    }
}

/// Runs the ensemble keeping only per-path estimates.
pub fn run_ensemble_summary(config: &ModelConfig) -> Result<EnsembleSummary> {
    let mut paths = Vec::with_capacity(config.n_paths);
    for_each_path(config, |rec| PathSummary::from_record(&rec, config), |p| paths.push(p))?;
    Ok(EnsembleSummary::from_paths(config, paths))
}

/// Runs the ensemble and keeps every trajectory in memory.
pub fn run_ensemble(config: &ModelConfig) -> Result<(Vec<TrajectoryRecord>, EnsembleSummary)> {
    let mut records = Vec::with_capacity(config.n_paths);
    for_each_path(config, |rec| rec, |rec| records.push(rec))?;
    let paths = records
        .iter()
        .map(|r| PathSummary::from_record(r, config))
        .collect();
    Ok((records, EnsembleSummary::from_paths(config, paths)))
}

/// Runs the ensemble and averages the per-day risk series over every
/// non-degenerate path.
pub fn run_risk_profile(config: &ModelConfig) -> Result<(RiskProfile, EnsembleSummary)> {
    config.validate()?;
    let mut profile = RiskProfile::new(config.n_days());
    let mut paths = Vec::with_capacity(config.n_paths);
    let mut failure = None;
    for_each_path(
        config,
        |rec| {
            let summary = PathSummary::from_record(&rec, config);
            let risk = (!rec.is_degenerate()).then(|| PathRisk::from_record(&rec, config.days_per_year));
            (summary, risk)
        },
        |(summary, risk)| {
            if let Some(risk) = risk {
                if let Err(e) = profile.add(&risk) {
                    failure.get_or_insert(e);
                }
            }
            paths.push(summary);
        },
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((profile.finish(), EnsembleSummary::from_paths(config, paths)))
}
