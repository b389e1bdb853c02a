//! Crash-risk overlay on simulated price paths.
//!
//! Two exposure proportions are tracked per day: `q`, the share of agents
//! whose cash-to-stock ratio fell under a threshold, and `r`, the share whose
//! cash fell under a fraction of their starting cash. Each is turned into a
//! hazard `p / (1 - p)` (per year), integrated into a survival probability,
//! and used to discount the price. Crashes themselves are never simulated.
//!
//! The second half of the module holds the closed forms that follow from a
//! linear link between cumulative squared volatility and the `r` hazard:
//! a shape-2 Weibull crash-time density, the expected discounted price, and
//! the time at which it peaks.

use serde::{Deserialize, Serialize};

use crate::ensemble::TrajectoryRecord;
use crate::error::{AsppError, Result};
use crate::model::{MarketState, PsychoParams};
use crate::stats::{self, RegressionFit};

/// Proportions at or above `1 - SATURATION` give an infinite hazard.
pub const SATURATION: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExposureProportions {
    /// Fraction of agents with cash / stock below the q threshold.
    pub q: f64,
    /// Fraction of agents with cash / initial cash below the r threshold.
    pub r: f64,
}

pub fn exposure_proportions(
    state: &MarketState,
    q_threshold: f64,
    r_threshold: f64,
) -> ExposureProportions {
    let n = state.agents.len();
    if n == 0 {
        return ExposureProportions { q: 0.0, r: 0.0 };
    }
    let mut low_ratio = 0usize;
    let mut low_cash = 0usize;
    for (a, &c0) in state.agents.iter().zip(&state.initial_cash) {
        if a.cash < q_threshold * a.stock_value {
            low_ratio += 1;
        }
        if a.cash < r_threshold * c0 {
            low_cash += 1;
        }
    }
    ExposureProportions {
        q: low_ratio as f64 / n as f64,
        r: low_cash as f64 / n as f64,
    }
}

/// `p / (1 - p)`.
pub fn hazard_rate(p: f64) -> Result<f64> {
    if !(0.0..1.0 - SATURATION).contains(&p) {
        if p >= 1.0 - SATURATION {
            return Err(AsppError::SaturatedHazard { p });
        }
        return Err(AsppError::config("p", format!("proportion must be in [0, 1), got {p}")));
    }
    Ok(p / (1.0 - p))
}

/// Like [`hazard_rate`] but maps saturation to `+inf`, so a survival curve
/// built from it drops to zero.
pub fn hazard_series(proportions: &[f64]) -> Vec<f64> {
    proportions
        .iter()
        .map(|&p| hazard_rate(p).unwrap_or(f64::INFINITY))
        .collect()
}

/// `S(t) = exp(-integral_0^t h)` with the trapezoid rule on a uniform grid.
pub fn survival_curve(hazard: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(hazard.len());
    let mut integral = 0.0;
    for (j, &h) in hazard.iter().enumerate() {
        if j > 0 {
            integral += 0.5 * (hazard[j - 1] + h) * dt;
        }
        out.push((-integral).exp());
    }
    out
}

pub fn discounted_price_series(prices: &[f64], survival: &[f64]) -> Result<Vec<f64>> {
    if prices.len() != survival.len() {
        return Err(AsppError::LengthMismatch {
            left: prices.len(),
            right: survival.len(),
        });
    }
    Ok(prices.iter().zip(survival).map(|(p, s)| p * s).collect())
}

/// Slope of cumulative volatility `V` on the hazard `h_r`.
pub fn estimate_gamma(v: &[f64], h_r: &[f64]) -> Result<RegressionFit> {
    stats::linear_regression(h_r, v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaEstimate {
    /// Mean of the per-path slopes.
    pub gamma: f64,
    pub mean_r_squared: f64,
    pub per_path: Vec<RegressionFit>,
}

impl GammaEstimate {
    pub fn from_fits(per_path: Vec<RegressionFit>) -> Option<Self> {
        if per_path.is_empty() {
            return None;
        }
        let n = per_path.len() as f64;
        Some(GammaEstimate {
            gamma: per_path.iter().map(|f| f.slope).sum::<f64>() / n,
            mean_r_squared: per_path.iter().map(|f| f.r_squared).sum::<f64>() / n,
            per_path,
        })
    }
}

/// Per-day risk series for one path, day 0 included.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRisk {
    pub price: Vec<f64>,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub h_q: Vec<f64>,
    pub h_r: Vec<f64>,
    pub s_q: Vec<f64>,
    pub s_r: Vec<f64>,
    pub discounted_q: Vec<f64>,
    pub discounted_r: Vec<f64>,
    /// Cumulative volatility; zero until two returns exist.
    pub cumulative_volatility: Vec<f64>,
}

impl PathRisk {
    pub fn from_record(rec: &TrajectoryRecord, days_per_year: u32) -> Self {
        let dt = 1.0 / days_per_year as f64;
        let price: Vec<f64> = std::iter::once(rec.initial_price)
            .chain(rec.price.iter().copied())
            .collect();
        let q: Vec<f64> = std::iter::once(rec.initial_exposure.q)
            .chain(rec.q_proportion.iter().copied())
            .collect();
        let r: Vec<f64> = std::iter::once(rec.initial_exposure.r)
            .chain(rec.r_proportion.iter().copied())
            .collect();
        let h_q = hazard_series(&q);
        let h_r = hazard_series(&r);
        let s_q = survival_curve(&h_q, dt);
        let s_r = survival_curve(&h_r, dt);
        let discounted_q = price.iter().zip(&s_q).map(|(p, s)| p * s).collect();
        let discounted_r = price.iter().zip(&s_r).map(|(p, s)| p * s).collect();

        let v = stats::cumulative_volatility(&rec.log_gross_return, days_per_year);
        let lead = price.len() - v.len();
        let cumulative_volatility = std::iter::repeat_n(0.0, lead).chain(v).collect();

        PathRisk {
            price,
            q,
            r,
            h_q,
            h_r,
            s_q,
            s_r,
            discounted_q,
            discounted_r,
            cumulative_volatility,
        }
    }
}

/// Per-day ensemble means of the [`PathRisk`] series.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RiskProfile {
    pub n_paths: usize,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub h_q: Vec<f64>,
    pub h_r: Vec<f64>,
    pub s_q: Vec<f64>,
    pub s_r: Vec<f64>,
    pub price: Vec<f64>,
    pub discounted_r: Vec<f64>,
    pub discounted_q: Vec<f64>,
    pub cumulative_volatility: Vec<f64>,
}

impl RiskProfile {
    /// Empty accumulator for `days` simulated days (`days + 1` points).
    pub fn new(days: usize) -> Self {
        let z = vec![0.0; days + 1];
        RiskProfile {
            n_paths: 0,
            q: z.clone(),
            r: z.clone(),
            h_q: z.clone(),
            h_r: z.clone(),
            s_q: z.clone(),
            s_r: z.clone(),
            price: z.clone(),
            discounted_r: z.clone(),
            discounted_q: z.clone(),
            cumulative_volatility: z,
        }
    }

    pub fn len(&self) -> usize {
        self.price.len()
    }

    pub fn is_empty(&self) -> bool {
        self.price.is_empty()
    }

    fn columns_mut(&mut self) -> [&mut Vec<f64>; 10] {
        [
            &mut self.q,
            &mut self.r,
            &mut self.h_q,
            &mut self.h_r,
            &mut self.s_q,
            &mut self.s_r,
            &mut self.price,
            &mut self.discounted_r,
            &mut self.discounted_q,
            &mut self.cumulative_volatility,
        ]
    }

    /// Adds one full-length path to the running sums.
    pub fn add(&mut self, path: &PathRisk) -> Result<()> {
        if path.price.len() != self.len() {
            return Err(AsppError::LengthMismatch {
                left: self.len(),
                right: path.price.len(),
            });
        }
        let src = [
            &path.q,
            &path.r,
            &path.h_q,
            &path.h_r,
            &path.s_q,
            &path.s_r,
            &path.price,
            &path.discounted_r,
            &path.discounted_q,
            &path.cumulative_volatility,
        ];
        for (dst, src) in self.columns_mut().into_iter().zip(src) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        self.n_paths += 1;
        Ok(())
    }

    /// Turns the sums into means.
    pub fn finish(mut self) -> Self {
        let n = self.n_paths.max(1) as f64;
        for col in self.columns_mut() {
            col.iter_mut().for_each(|v| *v /= n);
        }
        self
    }
}

/// Regresses `V(t_n)` on `h_r(t_n)` over every day where both are defined,
/// stopping at the first saturated `r`.
pub fn path_gamma(rec: &TrajectoryRecord, days_per_year: u32) -> Result<RegressionFit> {
    let v = stats::cumulative_volatility(&rec.log_gross_return, days_per_year);
    // v[j] ends on day j + 2, i.e. r_proportion[j + 1]
    let h: Vec<f64> = rec
        .r_proportion
        .iter()
        .skip(1)
        .map_while(|&p| hazard_rate(p).ok())
        .collect();
    let n = h.len().min(v.len());
    estimate_gamma(&v[..n], &h[..n])
}

/// Shape-2 Weibull density `(s^2 t / g) exp(-s^2 t^2 / (2 g))`.
pub fn crash_time_density(sigma: f64, gamma: f64, t: f64) -> f64 {
    let a = sigma * sigma / gamma;
    a * t * (-0.5 * a * t * t).exp()
}

/// `P0 exp(r0 t - s^2 t^2 / (2 g))`.
pub fn expected_discounted_price(p0: f64, r0: f64, sigma: f64, gamma: f64, t: f64) -> f64 {
    p0 * (r0 * t - sigma * sigma * t * t / (2.0 * gamma)).exp()
}

/// Annual log growth `(days_per_year * m / 2N) ln(alpha beta)`.
pub fn annual_growth_rate(params: &PsychoParams, m: f64, n_agents: usize, days_per_year: u32) -> f64 {
    days_per_year as f64 * m / (2.0 * n_agents as f64) * params.drift().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BubblePeak {
    /// Numerical argmax of the expected discounted price.
    pub numeric: f64,
    /// Stationary point `r0 g / s^2`.
    pub calculus: f64,
    /// `2 r0 g / s^2`, the form quoted alongside the closed-form price.
    pub quoted: f64,
}

impl BubblePeak {
    /// True when the quoted form disagrees with the numerical argmax.
    pub fn quoted_mismatch(&self) -> bool {
        (self.quoted - self.numeric).abs() > 1e-6 * self.numeric.abs().max(1e-12)
    }
}

/// Upper limit of the search, in years.
const PEAK_SEARCH_LIMIT: f64 = 1e9;

pub fn bubble_peak_time(r0: f64, sigma: f64, gamma: f64) -> BubblePeak {
    let calculus = r0 * gamma / (sigma * sigma);
    let log_price = |t: f64| r0 * t - sigma * sigma * t * t / (2.0 * gamma);

    let numeric = if r0 <= 0.0 {
        0.0
    } else {
        let mut hi = 1.0;
        while hi < PEAK_SEARCH_LIMIT && log_price(2.0 * hi) >= log_price(hi) {
            hi *= 2.0;
        }
        golden_section_max(log_price, 0.0, (2.0 * hi).min(PEAK_SEARCH_LIMIT))
    };

    BubblePeak {
        numeric,
        calculus,
        quoted: 2.0 * calculus,
    }
}

fn golden_section_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..200 {
        if hi - lo <= 1e-13 * hi.abs().max(1e-300) {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AgentPortfolio;
    use approx::assert_relative_eq;

    /// Composite Simpson rule, `n` even.
    fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(a + i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn exposure_examples() {
        let mut s = MarketState::new(
            1.0,
            (0..4).map(|_| AgentPortfolio::new(1.0, 1.0, 1.0)).collect(),
        );
        assert_eq!(exposure_proportions(&s, 0.1, 0.6), ExposureProportions { q: 0.0, r: 0.0 });

        for a in s.agents.iter_mut() {
            a.stock_value = 20.0;
            a.cash = 1.0;
        }
        assert_eq!(exposure_proportions(&s, 0.1, 0.6).q, 1.0);

        let agents = vec![
            AgentPortfolio::new(10.0, 0.5, 1.0), // b/s 0.05, b/b0 0.5
            AgentPortfolio::new(2.0, 0.9, 1.0),  // b/s 0.45, b/b0 0.9
            AgentPortfolio::new(30.0, 2.0, 1.0), // b/s 0.067, b/b0 2
            AgentPortfolio::new(1.0, 0.2, 1.0),  // b/s 0.2, b/b0 0.2
            AgentPortfolio::new(5.0, 0.5, 1.0),  // b/s exactly 0.1, b/b0 0.5
        ];
        let mut mixed = MarketState::new(1.0, agents.clone());
        mixed.initial_cash = vec![1.0; 5];
        let brute_q = agents.iter().filter(|a| a.cash / a.stock_value < 0.1).count() as f64 / 5.0;
        let brute_r = agents.iter().filter(|a| a.cash / 1.0 < 0.6).count() as f64 / 5.0;
        let e = exposure_proportions(&mixed, 0.1, 0.6);
        assert_eq!(e.q, brute_q);
        assert_eq!(e.r, brute_r);
        assert_eq!(e.q, 0.4);
        assert_eq!(e.r, 0.6);
    }

    #[test]
    fn hazard_examples() {
        assert_eq!(hazard_rate(0.0).unwrap(), 0.0);
        assert_relative_eq!(hazard_rate(0.5).unwrap(), 1.0);
        assert_relative_eq!(hazard_rate(0.9).unwrap(), 9.0, max_relative = 1e-14);
        assert!(matches!(hazard_rate(1.0), Err(AsppError::SaturatedHazard { .. })));
        assert!(matches!(
            hazard_rate(1.0 - 1e-13),
            Err(AsppError::SaturatedHazard { .. })
        ));
        assert!(hazard_rate(-0.1).is_err());
        let mut prev = -1.0;
        for i in 0..100 {
            let h = hazard_rate(i as f64 / 100.0).unwrap();
            assert!(h > prev);
            prev = h;
        }
        assert_eq!(hazard_series(&[0.0, 1.0])[1], f64::INFINITY);
    }

    #[test]
    fn survival_closed_forms() {
        let dt = 1.0 / 360.0;
        assert!(survival_curve(&[0.0; 100], dt).iter().all(|&s| s == 1.0));

        let h0 = 0.7;
        let s = survival_curve(&vec![h0; 3601], dt);
        for (j, sj) in s.iter().enumerate() {
            assert_relative_eq!(*sj, (-h0 * j as f64 * dt).exp(), max_relative = 1e-12);
        }

        // h linear in t: the trapezoid rule is exact up to rounding
        let (sigma, gamma) = (0.06, 0.36);
        let h: Vec<f64> = (0..7201).map(|j| sigma * sigma * j as f64 * dt / gamma).collect();
        let s = survival_curve(&h, dt);
        for (j, sj) in s.iter().enumerate() {
            let t = j as f64 * dt;
            let exact = (-sigma * sigma * t * t / (2.0 * gamma)).exp();
            assert_relative_eq!(*sj, exact, max_relative = 1e-10);
        }
        assert_eq!(s[0], 1.0);
        assert!(s.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn survival_drops_to_zero_on_saturation() {
        let s = survival_curve(&hazard_series(&[0.0, 0.5, 1.0, 0.2]), 1.0 / 360.0);
        assert_eq!(s[0], 1.0);
        assert!(s[1] < 1.0);
        assert_eq!(s[2], 0.0);
        assert_eq!(s[3], 0.0);
    }

    #[test]
    fn discounted_examples() {
        let p = [1.0, 2.0, 3.0];
        assert_eq!(discounted_price_series(&p, &[1.0; 3]).unwrap(), p.to_vec());
        assert_eq!(
            discounted_price_series(&p, &[0.5; 3]).unwrap(),
            vec![0.5, 1.0, 1.5]
        );
        assert!(matches!(
            discounted_price_series(&p, &[1.0; 2]),
            Err(AsppError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn gamma_on_exact_law() {
        let h: Vec<f64> = (0..100).map(|i| i as f64 * 0.01).collect();
        let v: Vec<f64> = h.iter().map(|x| 0.4 * x).collect();
        let fit = estimate_gamma(&v, &h).unwrap();
        assert_relative_eq!(fit.slope, 0.4, epsilon = 1e-12);
        assert_relative_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
        assert!(matches!(
            estimate_gamma(&v, &[0.3; 100]),
            Err(AsppError::DegenerateRegressor)
        ));

        let est = GammaEstimate::from_fits(vec![
            RegressionFit { slope: 0.2, intercept: 0.0, r_squared: 0.9 },
            RegressionFit { slope: 0.4, intercept: 0.0, r_squared: 0.7 },
        ])
        .unwrap();
        assert_relative_eq!(est.gamma, 0.3);
        assert_relative_eq!(est.mean_r_squared, 0.8);
        assert!(GammaEstimate::from_fits(vec![]).is_none());
    }

    #[test]
    fn weibull_density() {
        let (sigma, gamma) = (0.06, 0.36);
        assert_eq!(crash_time_density(sigma, gamma, 0.0), 0.0);

        let scale = (2.0 * gamma).sqrt() / sigma;
        let total = simpson(|t| crash_time_density(sigma, gamma, t), 0.0, 12.0 * scale, 200_000);
        assert!((total - 1.0).abs() < 1e-6, "integral = {total}");

        // numeric argmax on a fine grid against sqrt(gamma) / sigma
        let mode = gamma.sqrt() / sigma;
        let step = 1e-4;
        let (best, _) = (0..200_000)
            .map(|i| i as f64 * step)
            .map(|t| (t, crash_time_density(sigma, gamma, t)))
            .fold((0.0, f64::MIN), |acc, x| if x.1 > acc.1 { x } else { acc });
        assert!((best - mode).abs() <= step, "grid argmax {best} vs {mode}");

        // equals -dS/dt for S = exp(-s^2 t^2 / (2 g))
        let surv = |t: f64| (-sigma * sigma * t * t / (2.0 * gamma)).exp();
        for t in [0.5, 3.0, 10.0, 25.0] {
            let d = 1e-5;
            let deriv = -(surv(t + d) - surv(t - d)) / (2.0 * d);
            assert_relative_eq!(crash_time_density(sigma, gamma, t), deriv, max_relative = 1e-7);
        }
    }

    #[test]
    fn discounted_closed_form() {
        assert_eq!(expected_discounted_price(2.5, 0.5, 0.06, 0.36, 0.0), 2.5);
        let mut prev = f64::MAX;
        for i in 0..100 {
            let v = expected_discounted_price(1.0, 0.0, 0.06, 0.36, i as f64 * 0.5);
            assert!(v < prev || i == 0);
            prev = v;
        }
        let direct = (0.51f64 * 10.0 - 0.0036 * 100.0 / 0.72).exp();
        assert_relative_eq!(
            expected_discounted_price(1.0, 0.51, 0.06, 0.36, 10.0),
            direct,
            max_relative = 1e-12
        );
    }

    #[test]
    fn growth_rate_examples() {
        let p = PsychoParams::new(1.2, 0.96).unwrap();
        let r0 = annual_growth_rate(&p, 10.0, 500, 360);
        assert_relative_eq!(r0, 3.6 * 1.152f64.ln(), max_relative = 1e-14);
        assert!((r0 - 0.5094).abs() < 5e-5, "r0 = {r0}");
        assert!((r0.exp() - 1.66).abs() < 5e-3);

        let unit = PsychoParams { alpha: 1.25, beta: 0.8 };
        assert!(annual_growth_rate(&unit, 10.0, 500, 360).abs() < 1e-15);

        let daily = (1.2f64 * 0.96).powf(10.0 / 1000.0).ln();
        assert_relative_eq!(r0 / 360.0, daily, max_relative = 1e-12);
    }

    #[test]
    fn bubble_peak() {
        let peak = bubble_peak_time(0.5, 0.06, 0.36);
        assert_relative_eq!(peak.calculus, 50.0, max_relative = 1e-12);
        assert_relative_eq!(peak.numeric, 50.0, max_relative = 1e-6);
        assert_relative_eq!(peak.quoted, 100.0, max_relative = 1e-12);
        assert!(peak.quoted_mismatch());

        let value = expected_discounted_price(1.0, 0.5, 0.06, 0.36, peak.numeric);
        for i in 0..=2000 {
            let t = i as f64 * 0.1;
            assert!(value >= expected_discounted_price(1.0, 0.5, 0.06, 0.36, t));
        }

        let tiny = bubble_peak_time(1e-9, 0.06, 0.36);
        assert!(tiny.numeric < 1e-6);
        assert_eq!(bubble_peak_time(0.0, 0.06, 0.36).numeric, 0.0);
    }
}
