//! Return and volatility estimators, plus the small regression toolkit the
//! volatility and hazard laws are fitted with.

use serde::{Deserialize, Serialize};

use crate::error::{AsppError, Result};
use crate::ensemble::TrajectoryRecord;

/// Fewest post-burn-in observations accepted by [`estimate_return_stats`].
pub const MIN_OBSERVATIONS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnStats {
    /// Mean daily log gross return.
    pub mean_log_return: f64,
    /// Sample standard deviation of daily log gross returns.
    pub sigma: f64,
    pub n_obs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// `ln(P[n] / P[n-1])` for each consecutive pair.
pub fn log_returns(prices: &[f64]) -> Result<Vec<f64>> {
    if prices.len() < 2 {
        return Err(AsppError::EmptySeries);
    }
    Ok(prices.windows(2).map(|w| (w[1] / w[0]).ln()).collect())
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

pub fn return_stats(log_returns: &[f64]) -> Result<ReturnStats> {
    if log_returns.len() < MIN_OBSERVATIONS {
        return Err(AsppError::InsufficientData {
            got: log_returns.len(),
            need: MIN_OBSERVATIONS,
        });
    }
    Ok(ReturnStats {
        mean_log_return: mean(log_returns),
        sigma: sample_std(log_returns),
        n_obs: log_returns.len(),
    })
}

/// Mean and standard deviation of the log returns after the first
/// `burn_in_days` days.
pub fn estimate_return_stats(traj: &TrajectoryRecord, burn_in_days: usize) -> Result<ReturnStats> {
    let lr = &traj.log_gross_return;
    if burn_in_days >= lr.len() {
        return Err(AsppError::InsufficientData {
            got: 0,
            need: MIN_OBSERVATIONS,
        });
    }
    return_stats(&lr[burn_in_days..])
}

/// Ordinary least squares `y = slope * x + intercept`.
pub fn linear_regression(x: &[f64], y: &[f64]) -> Result<RegressionFit> {
    if x.len() != y.len() {
        return Err(AsppError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(AsppError::InsufficientData {
            got: x.len(),
            need: 2,
        });
    }
    let mx = mean(x);
    let my = mean(y);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let constant = x.iter().all(|&v| v == x[0]);
    if constant || !(sxx > 0.0) {
        return Err(AsppError::DegenerateRegressor);
    }
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 {
        ((sxy * sxy) / (sxx * syy)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(RegressionFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(AsppError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(AsppError::InsufficientData {
            got: x.len(),
            need: 2,
        });
    }
    let mx = mean(x);
    let my = mean(y);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
        syy += (yi - my) * (yi - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(AsppError::DegenerateRegressor);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// One cell of a volatility table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub alpha: f64,
    pub beta: f64,
    pub mean_log_return: f64,
    pub sigma: f64,
}

/// Regresses sigma on `alpha - beta`: slope `c(m)`, intercept `d`.
pub fn fit_volatility_law(grid: &[GridPoint]) -> Result<RegressionFit> {
    let x: Vec<f64> = grid.iter().map(|g| g.alpha - g.beta).collect();
    let y: Vec<f64> = grid.iter().map(|g| g.sigma).collect();
    let mut distinct = x.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    match distinct.len() {
        0 | 1 => Err(AsppError::DegenerateRegressor),
        2 => Err(AsppError::InsufficientData { got: 2, need: 3 }),
        _ => linear_regression(&x, &y),
    }
}

/// Running sum of squared changes in consecutive log returns, divided by
/// `2 * days_per_year`. Element `j` covers returns `0..=j+1`, so the output is
/// one shorter than the input.
pub fn cumulative_volatility(log_returns: &[f64], days_per_year: u32) -> Vec<f64> {
    let scale = 2.0 * days_per_year as f64;
    let mut acc = 0.0;
    log_returns
        .windows(2)
        .map(|w| {
            let d = w[1] - w[0];
            acc += d * d / scale;
            acc
        })
        .collect()
}

/// Correlation between mean log return and sigma across a parameter grid.
pub fn return_volatility_correlation(grid: &[GridPoint]) -> Result<f64> {
    if grid.len() < 3 {
        return Err(AsppError::InsufficientData {
            got: grid.len(),
            need: 3,
        });
    }
    let mu: Vec<f64> = grid.iter().map(|g| g.mean_log_return).collect();
    let sd: Vec<f64> = grid.iter().map(|g| g.sigma).collect();
    pearson(&mu, &sd)
}
