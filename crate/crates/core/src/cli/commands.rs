//! The five commands. Each writes its tables into an output directory and
//! finishes with a checksummed `manifest.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::output::{ensure_dir, write_json, Cell, RunManifest, TableWriter};
use crate::ensemble::{self, EnsembleSummary, ModelConfig, PathSummary, TrajectoryRecord};
use crate::error::{AsppError, Result};
use crate::model::SelectionMode;
use crate::risk::{self, BubblePeak};
use crate::stats::{self, GridPoint, RegressionFit};

pub const TRAJECTORY_COLUMNS: [&str; 7] = [
    "day",
    "price",
    "log_return",
    "volume_cash_fraction",
    "volume_shares",
    "q",
    "r",
];

/// Writes one path as a per-day table, one row per simulated day.
pub fn write_trajectory(path: &Path, rec: &TrajectoryRecord) -> Result<PathBuf> {
    let mut w = TableWriter::create(path, &TRAJECTORY_COLUMNS)?;
    for j in 0..rec.len() {
        w.row(&[
            Cell::U(j as u64 + 1),
            Cell::F(rec.price[j]),
            Cell::F(rec.log_gross_return[j]),
            Cell::F(rec.volume_cash_fraction[j]),
            Cell::F(rec.volume_shares[j]),
            Cell::F(rec.q_proportion[j]),
            Cell::F(rec.r_proportion[j]),
        ])?;
    }
    w.finish()
}

/// One path, path index 0 unless given.
pub fn cmd_simulate(config: &ModelConfig, path_index: u64, out_dir: &Path) -> Result<RunManifest> {
    config.validate()?;
    ensure_dir(out_dir)?;
    let mut manifest = RunManifest::begin("simulate", config);
    manifest.extra = serde_json::json!({ "path_index": path_index });
    let rec = ensemble::run_trajectory(config, path_index)?;
    if let Some(day) = rec.degenerate_on_day {
        log::warn!("path {path_index} degenerated on day {day}; table is truncated");
    }
    let file = write_trajectory(&out_dir.join("trajectory.csv"), &rec)?;
    manifest.add_output(out_dir, &file)?;
    manifest.write(out_dir)
}

const PATH_COLUMNS: [&str; 9] = [
    "path",
    "seed",
    "degenerate",
    "n_obs",
    "mean_log_return",
    "sigma",
    "gamma",
    "gamma_intercept",
    "gamma_r_squared",
];

fn write_path_table(path: &Path, paths: &[PathSummary]) -> Result<PathBuf> {
    let mut w = TableWriter::create(path, &PATH_COLUMNS)?;
    for p in paths {
        let r = p.returns;
        let g = p.gamma_fit;
        w.row(&[
            Cell::U(p.path_index),
            Cell::U(p.seed),
            Cell::U(p.degenerate as u64),
            Cell::U(r.map_or(0, |r| r.n_obs as u64)),
            Cell::F(r.map_or(f64::NAN, |r| r.mean_log_return)),
            Cell::F(r.map_or(f64::NAN, |r| r.sigma)),
            Cell::F(g.map_or(f64::NAN, |g| g.slope)),
            Cell::F(g.map_or(f64::NAN, |g| g.intercept)),
            Cell::F(g.map_or(f64::NAN, |g| g.r_squared)),
        ])?;
    }
    w.finish()
}

/// Ensemble-level estimates without the per-path list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryReport {
    pub n_paths: usize,
    pub n_degenerate: usize,
    pub n_estimated: usize,
    pub burn_in_days: usize,
    pub mean_log_return: f64,
    pub mean_log_return_path_se: f64,
    pub predicted_mean_log_return: f64,
    pub annual_gross_return: f64,
    pub sigma: f64,
    pub pooled_sigma: f64,
    pub pooled_standard_error: f64,
    pub gamma: Option<f64>,
    pub gamma_mean_r_squared: Option<f64>,
}

impl SummaryReport {
    pub fn new(s: &EnsembleSummary) -> Self {
        let c = &s.config;
        SummaryReport {
            n_paths: s.n_paths,
            n_degenerate: s.n_degenerate,
            n_estimated: s.n_estimated,
            burn_in_days: c.burn_in_days(),
            mean_log_return: s.mean_log_return,
            mean_log_return_path_se: s.mean_log_return_path_se,
            predicted_mean_log_return: risk::annual_growth_rate(
                &c.psycho,
                c.selection.mean_active(),
                c.n_agents,
                c.days_per_year,
            ) / c.days_per_year as f64,
            annual_gross_return: s.annual_gross_return(),
            sigma: s.sigma,
            pooled_sigma: s.pooled_sigma,
            pooled_standard_error: s.pooled_standard_error,
            gamma: s.gamma,
            gamma_mean_r_squared: s.gamma_mean_r_squared,
        }
    }
}

/// Full ensemble: per-path estimates, summary, and optionally every path's
/// trajectory table under `trajectories/`.
pub fn cmd_ensemble(config: &ModelConfig, write_trajectories: bool, out_dir: &Path) -> Result<RunManifest> {
    config.validate()?;
    ensure_dir(out_dir)?;
    let mut manifest = RunManifest::begin("ensemble", config);
    manifest.extra = serde_json::json!({ "write_trajectories": write_trajectories });

    let traj_dir = out_dir.join("trajectories");
    if write_trajectories {
        ensure_dir(&traj_dir)?;
    }
    let mut paths = Vec::with_capacity(config.n_paths);
    let mut written = Vec::new();
    let mut failure = None;
    ensemble::for_each_path(
        config,
        |rec| {
            let summary = PathSummary::from_record(&rec, config);
            let file = if write_trajectories {
                let f = traj_dir.join(format!("path_{:06}.csv", rec.path_index));
                Some(write_trajectory(&f, &rec))
            } else {
                None
            };
            (summary, file)
        },
        |(summary, file)| {
            match file {
                Some(Ok(f)) => written.push(f),
                Some(Err(e)) => {
                    failure.get_or_insert(e);
                }
                None => {}
            }
            paths.push(summary);
        },
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    for f in &written {
        manifest.add_output(out_dir, f)?;
    }

    let summary = EnsembleSummary::from_paths(config, paths);
    let table = write_path_table(&out_dir.join("paths.csv"), &summary.paths)?;
    manifest.add_output(out_dir, &table)?;
    let json = write_json(&out_dir.join("summary.json"), &SummaryReport::new(&summary))?;
    manifest.add_output(out_dir, &json)?;
    manifest.write(out_dir)
}

/// Parameter grid for the volatility tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub active_counts: Vec<usize>,
    pub n_paths: usize,
    pub horizon_years: f64,
}

impl TableSpec {
    pub const ALPHAS: [f64; 5] = [1.1, 1.2, 1.3, 1.4, 1.5];
    pub const BETAS: [f64; 8] = [0.8, 0.825, 0.85, 0.875, 0.9, 0.925, 0.95, 0.975];

    /// The 5 x 8 grid with m = 10, 20, 40; one year measured after burn-in.
    pub fn standard(n_paths: usize, burn_in_years: f64) -> Self {
        TableSpec {
            alphas: Self::ALPHAS.to_vec(),
            betas: Self::BETAS.to_vec(),
            active_counts: vec![10, 20, 40],
            n_paths,
            horizon_years: burn_in_years + 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.betas.is_empty() {
            return Err(AsppError::config("grid", "alpha and beta lists must be nonempty"));
        }
        if self.active_counts.is_empty() {
            return Err(AsppError::config("ms", "need at least one active count"));
        }
        if self.n_paths == 0 {
            return Err(AsppError::config("paths", "must be at least 1"));
        }
        Ok(())
    }

    /// Config of one grid cell.
    pub fn cell_config(&self, base: &ModelConfig, m: usize, alpha: f64, beta: f64) -> ModelConfig {
        let mut c = base.clone();
        c.selection = SelectionMode::Fixed(m);
        c.psycho.alpha = alpha;
        c.psycho.beta = beta;
        c.n_paths = self.n_paths;
        c.horizon_years = self.horizon_years;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaCell {
    pub m: usize,
    pub point: GridPoint,
    pub n_estimated: usize,
    pub n_degenerate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaFit {
    pub m: usize,
    pub fit: RegressionFit,
    pub correlation: f64,
}

/// Ensemble sigma and mean log return for every cell of the grid.
pub fn sigma_grid(base: &ModelConfig, spec: &TableSpec) -> Result<Vec<SigmaCell>> {
    spec.validate()?;
    let mut cells = Vec::new();
    for &m in &spec.active_counts {
        for &alpha in &spec.alphas {
            for &beta in &spec.betas {
                let cfg = spec.cell_config(base, m, alpha, beta);
                cfg.validate()?;
                let s = ensemble::run_ensemble_summary(&cfg)?;
                log::info!("m={m} alpha={alpha} beta={beta}: sigma={:.5}", s.sigma);
                cells.push(SigmaCell {
                    m,
                    point: GridPoint {
                        alpha,
                        beta,
                        mean_log_return: s.mean_log_return,
                        sigma: s.sigma,
                    },
                    n_estimated: s.n_estimated,
                    n_degenerate: s.n_degenerate,
                });
            }
        }
    }
    Ok(cells)
}

/// `sigma = c (alpha - beta) + d` and the return/volatility correlation, per m.
pub fn fit_sigma_grid(cells: &[SigmaCell]) -> Result<Vec<SigmaFit>> {
    let mut ms: Vec<usize> = cells.iter().map(|c| c.m).collect();
    ms.dedup();
    ms.iter()
        .map(|&m| {
            let grid: Vec<GridPoint> = cells.iter().filter(|c| c.m == m).map(|c| c.point).collect();
            let fit = stats::fit_volatility_law(&grid)?;
            let correlation = stats::return_volatility_correlation(&grid)?;
            Ok(SigmaFit { m, fit, correlation })
        })
        .collect()
}

pub fn cmd_table_sigma(base: &ModelConfig, spec: &TableSpec, out_dir: &Path) -> Result<RunManifest> {
    spec.validate()?;
    base.validate_structure()?;
    ensure_dir(out_dir)?;
    let mut manifest = RunManifest::begin("table-sigma", base);
    manifest.extra = serde_json::to_value(spec).expect("spec serializes");

    let cells = sigma_grid(base, spec)?;
    let mut w = TableWriter::create(
        &out_dir.join("sigma_grid.csv"),
        &["m", "alpha", "beta", "n_paths", "n_degenerate", "mean_log_return", "sigma"],
    )?;
    for c in &cells {
        w.row(&[
            Cell::U(c.m as u64),
            Cell::F(c.point.alpha),
            Cell::F(c.point.beta),
            Cell::U(c.n_estimated as u64),
            Cell::U(c.n_degenerate as u64),
            Cell::F(c.point.mean_log_return),
            Cell::F(c.point.sigma),
        ])?;
    }
    let grid_file = w.finish()?;
    manifest.add_output(out_dir, &grid_file)?;

    let fits = fit_sigma_grid(&cells)?;
    let mut w = TableWriter::create(
        &out_dir.join("sigma_fit.csv"),
        &["m", "c", "d", "r_squared", "correlation"],
    )?;
    for f in &fits {
        w.row(&[
            Cell::U(f.m as u64),
            Cell::F(f.fit.slope),
            Cell::F(f.fit.intercept),
            Cell::F(f.fit.r_squared),
            Cell::F(f.correlation),
        ])?;
    }
    let fit_file = w.finish()?;
    manifest.add_output(out_dir, &fit_file)?;
    manifest.write(out_dir)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskAnalytics {
    pub summary: SummaryReport,
    /// Annual log growth implied by (alpha, beta, m, N).
    pub r0: f64,
    pub bubble_peak: Option<BubblePeak>,
    pub peak_discounted_price: Option<f64>,
    /// Mode of the crash-time density, years.
    pub crash_time_mode: Option<f64>,
}

const RISK_COLUMNS: [&str; 12] = [
    "day",
    "t_years",
    "q",
    "r",
    "h_q",
    "h_r",
    "s_q",
    "s_r",
    "price",
    "price_s_r",
    "price_s_q",
    "cumulative_volatility",
];

/// Ensemble-mean risk series plus the gamma fit and the closed-form analytics
/// evaluated at the ensemble sigma and gamma.
pub fn cmd_risk_report(config: &ModelConfig, out_dir: &Path) -> Result<RunManifest> {
    config.validate()?;
    ensure_dir(out_dir)?;
    let mut manifest = RunManifest::begin("risk-report", config);
    let (profile, summary) = ensemble::run_risk_profile(config)?;

    let mut w = TableWriter::create(&out_dir.join("risk.csv"), &RISK_COLUMNS)?;
    let dt = config.dt();
    for j in 0..profile.len() {
        w.row(&[
            Cell::U(j as u64),
            Cell::F(j as f64 * dt),
            Cell::F(profile.q[j]),
            Cell::F(profile.r[j]),
            Cell::F(profile.h_q[j]),
            Cell::F(profile.h_r[j]),
            Cell::F(profile.s_q[j]),
            Cell::F(profile.s_r[j]),
            Cell::F(profile.price[j]),
            Cell::F(profile.discounted_r[j]),
            Cell::F(profile.discounted_q[j]),
            Cell::F(profile.cumulative_volatility[j]),
        ])?;
    }
    let file = w.finish()?;
    manifest.add_output(out_dir, &file)?;

    let analytics = risk_analytics(config, &summary);
    let json = write_json(&out_dir.join("risk_summary.json"), &analytics)?;
    manifest.add_output(out_dir, &json)?;
    manifest.write(out_dir)
}

pub fn risk_analytics(config: &ModelConfig, summary: &EnsembleSummary) -> RiskAnalytics {
    let r0 = risk::annual_growth_rate(
        &config.psycho,
        config.selection.mean_active(),
        config.n_agents,
        config.days_per_year,
    );
    let sigma = summary.sigma;
    let usable = |g: f64| g.is_finite() && g > 0.0 && sigma.is_finite() && sigma > 0.0;
    let (bubble_peak, peak_discounted_price, crash_time_mode) = match summary.gamma {
        Some(g) if usable(g) => {
            let peak = risk::bubble_peak_time(r0, sigma, g);
            let value = risk::expected_discounted_price(1.0, r0, sigma, g, peak.numeric);
            (Some(peak), Some(value), Some(g.sqrt() / sigma))
        }
        _ => (None, None, None),
    };
    RiskAnalytics {
        summary: SummaryReport::new(summary),
        r0,
        bubble_peak,
        peak_discounted_price,
        crash_time_mode,
    }
}

/// Per-path slopes of cumulative volatility on the `r` hazard.
pub fn cmd_fit_gamma(config: &ModelConfig, out_dir: &Path) -> Result<RunManifest> {
    config.validate()?;
    ensure_dir(out_dir)?;
    let mut manifest = RunManifest::begin("fit-gamma", config);
    let summary = ensemble::run_ensemble_summary(config)?;

    let mut w = TableWriter::create(
        &out_dir.join("gamma.csv"),
        &["path", "seed", "gamma", "intercept", "r_squared"],
    )?;
    for p in &summary.paths {
        if let Some(g) = p.gamma_fit {
            w.row(&[
                Cell::U(p.path_index),
                Cell::U(p.seed),
                Cell::F(g.slope),
                Cell::F(g.intercept),
                Cell::F(g.r_squared),
            ])?;
        }
    }
    let file = w.finish()?;
    manifest.add_output(out_dir, &file)?;
    let json = write_json(&out_dir.join("gamma_summary.json"), &SummaryReport::new(&summary))?;
    manifest.add_output(out_dir, &json)?;
    manifest.write(out_dir)
}
