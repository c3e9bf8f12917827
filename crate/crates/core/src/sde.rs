//! Multi-asset Itô market `dS_i / S_i = b_i dt + sum_k sigma_ik dW_k` on a
//! uniform grid.
//!
//! The volatility matrix is constant in time. With constant `sigma` the
//! diffusion fields `S_i sigma_ik` commute, so the Milstein step needs no Lévy
//! areas: with `x_i = sum_k sigma_ik dW_k`,
//!
//! ```text
//! S_{n+1} = S_n (1 + b dt + x + 0.5 (x^2 - tau_ii dt))
//! ```
//!
//! which for diagonal `sigma` is the scalar Milstein update per asset.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{SeedSequence, Stream};

pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Milstein,
    EulerLogExact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VolUnits {
    /// Divided by sqrt(252) to obtain per-day volatility.
    #[default]
    Annualized,
    PerDay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Volatility {
    /// i.i.d. draws from `Unif(lo, hi)`, fixed by the config seed and shared
    /// by every path.
    Uniform { lo: f64, hi: f64 },
    Diagonal(Vec<f64>),
    /// Full `d x d` matrix; only finiteness is required.
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Drift {
    /// `b_i = -tau_ii / 2`.
    LogNeutral,
    /// `b_i = +tau_ii / 2`, i.e. zero drift in `log S_i`.
    ZeroLogGrowth,
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketConfig {
    pub n_assets: usize,
    pub horizon_days: f64,
    pub dt_days: f64,
    pub volatility: Volatility,
    pub vol_units: VolUnits,
    pub drift: Drift,
    /// Defaults to 1 for every asset.
    pub initial_prices: Option<Vec<f64>>,
    pub scheme: Scheme,
    /// Seeds the volatility draw only; path noise is seeded separately.
    pub seed: u64,
}

impl MarketConfig {
    /// 50 assets, vols ~ Unif(15%, 35%) annualized, log-neutral drift,
    /// 1000 daily steps.
    pub fn baseline() -> Self {
        Self {
            n_assets: 50,
            horizon_days: 1000.0,
            dt_days: 1.0,
            volatility: Volatility::Uniform { lo: 0.15, hi: 0.35 },
            vol_units: VolUnits::Annualized,
            drift: Drift::LogNeutral,
            initial_prices: None,
            scheme: Scheme::Milstein,
            seed: 20_240_101,
        }
    }

    pub fn n_steps(&self) -> Result<usize> {
        steps_for(self.horizon_days, self.dt_days)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.n_assets;
        if d < 2 {
            return Err(Error::config(format!("need at least 2 assets, got {d}")));
        }
        self.n_steps()?;
        match &self.volatility {
            Volatility::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && *lo > 0.0 && lo <= hi) {
                    return Err(Error::config(format!(
                        "vol range must satisfy 0 < lo <= hi, got ({lo}, {hi})"
                    )));
                }
            }
            Volatility::Diagonal(v) => {
                check_len("volatility", v.len(), d)?;
                if v.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                    return Err(Error::config("diagonal volatilities must be > 0"));
                }
            }
            Volatility::Matrix(rows) => {
                check_len("volatility rows", rows.len(), d)?;
                for row in rows {
                    check_len("volatility columns", row.len(), d)?;
                    if row.iter().any(|s| !s.is_finite()) {
                        return Err(Error::config("volatility matrix must be finite"));
                    }
                }
            }
        }
        if let Drift::Explicit(b) = &self.drift {
            check_len("drift", b.len(), d)?;
            if b.iter().any(|x| !x.is_finite()) {
                return Err(Error::config("drifts must be finite"));
            }
        }
        if let Some(s0) = &self.initial_prices {
            check_len("initial_prices", s0.len(), d)?;
            if s0.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return Err(Error::config("initial prices must be > 0"));
            }
        }
        Ok(())
    }

    /// Validates the config and fixes the per-day volatility matrix and drifts.
    pub fn resolve(&self) -> Result<MarketModel> {
        self.validate()?;
        let d = self.n_assets;
        let unit = match self.vol_units {
            VolUnits::Annualized => 1.0 / TRADING_DAYS_PER_YEAR.sqrt(),
            VolUnits::PerDay => 1.0,
        };
        let (vol, diagonal) = match &self.volatility {
            Volatility::Uniform { lo, hi } => {
                let mut rng = SeedSequence::new(self.seed).rng(0, Stream::Volatility);
                let dist = Uniform::new_inclusive(*lo, *hi)
                    .map_err(|e| Error::config(format!("vol range: {e}")))?;
                let v: Vec<f64> = (0..d).map(|_| dist.sample(&mut rng) * unit).collect();
                (DMatrix::from_diagonal(&v.clone().into()), Some(v))
            }
            Volatility::Diagonal(v) => {
                let v: Vec<f64> = v.iter().map(|s| s * unit).collect();
                (DMatrix::from_diagonal(&v.clone().into()), Some(v))
            }
            Volatility::Matrix(rows) => (
                DMatrix::from_fn(d, d, |i, k| rows[i][k] * unit),
                None,
            ),
        };
        let cov = instantaneous_cov(&vol)?;
        let drift = match &self.drift {
            Drift::LogNeutral => (0..d).map(|i| -0.5 * cov[(i, i)]).collect(),
            Drift::ZeroLogGrowth => (0..d).map(|i| 0.5 * cov[(i, i)]).collect(),
            Drift::Explicit(b) => b.clone(),
        };
        Ok(MarketModel {
            n_steps: self.n_steps()?,
            dt: self.dt_days,
            vol,
            diagonal,
            cov,
            drift,
            initial_prices: self
                .initial_prices
                .clone()
                .unwrap_or_else(|| vec![1.0; d]),
            scheme: self.scheme,
        })
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::config(format!("{what}: expected length {want}, got {got}")));
    }
    Ok(())
}

pub(crate) fn steps_for(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::config(format!("dt must be > 0, got {dt}")));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::config(format!("horizon must be > 0, got {horizon}")));
    }
    let m = (horizon / dt).round();
    if (m * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::config(format!(
            "horizon {horizon} is not an integer multiple of dt {dt}"
        )));
    }
    Ok(m as usize)
}

/// A validated market with per-day volatility and drift fixed.
#[derive(Debug, Clone)]
pub struct MarketModel {
    n_steps: usize,
    dt: f64,
    vol: DMatrix<f64>,
    diagonal: Option<Vec<f64>>,
    cov: DMatrix<f64>,
    drift: Vec<f64>,
    initial_prices: Vec<f64>,
    scheme: Scheme,
}

impl MarketModel {
    pub fn n_assets(&self) -> usize {
        self.drift.len()
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn drift(&self) -> &[f64] {
        &self.drift
    }

    pub fn vol(&self) -> &DMatrix<f64> {
        &self.vol
    }

    /// Per-asset volatilities when the volatility matrix is diagonal.
    pub fn diagonal_vols(&self) -> Option<&[f64]> {
        self.diagonal.as_deref()
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<MarketPath> {
        let d = self.n_assets();
        let sqrt_dt = self.dt.sqrt();
        let increments: Vec<f64> = (0..self.n_steps * d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * sqrt_dt
            })
            .collect();
        self.simulate_from_increments(increments)
    }

    /// Runs the scheme on caller-supplied Brownian increments laid out
    /// `[step * d + k]`, each with variance `dt`.
    pub fn simulate_from_increments(&self, increments: Vec<f64>) -> Result<MarketPath> {
        let d = self.n_assets();
        let m = self.n_steps;
        if increments.len() != m * d {
            return Err(Error::LengthMismatch {
                expected: m * d,
                found: increments.len(),
            });
        }
        let dt = self.dt;
        let sqrt_d = (d as f64).sqrt();
        let sqrt_dt = dt.sqrt();

        let mut prices = Vec::with_capacity((m + 1) * d);
        prices.extend_from_slice(&self.initial_prices);
        let mut weights = Vec::with_capacity((m + 1) * d);
        weights.extend(market_weights(&self.initial_prices)?);
        let mut agg_shock = Vec::with_capacity(m);
        let mut shock = vec![0.0; d];

        for n in 0..m {
            let dw = &increments[n * d..(n + 1) * d];
            agg_shock.push(dw.iter().sum::<f64>() / sqrt_dt / sqrt_d);
            match &self.diagonal {
                Some(v) => {
                    for i in 0..d {
                        shock[i] = v[i] * dw[i];
                    }
                }
                None => {
                    for i in 0..d {
                        shock[i] = (0..d).map(|k| self.vol[(i, k)] * dw[k]).sum();
                    }
                }
            }
            let base = n * d;
            for i in 0..d {
                let s = prices[base + i];
                let var = self.cov[(i, i)];
                let next = match self.scheme {
                    Scheme::Milstein => milstein_step(s, self.drift[i], var, dt, shock[i]),
                    Scheme::EulerLogExact => exact_log_step(s, self.drift[i], var, dt, shock[i]),
                };
                if !(next.is_finite() && next > 0.0) {
                    return Err(Error::NonFinitePrice { step: n + 1, asset: i });
                }
                prices.push(next);
            }
            let row = market_weights(&prices[base + d..base + 2 * d])?;
            weights.extend(row);
        }

        Ok(MarketPath {
            dt,
            n_assets: d,
            prices,
            weights,
            brownian: increments,
            agg_shock,
            cov: self.cov.clone(),
        })
    }
}

/// One Milstein step; `shock = sum_k sigma_ik dW_k`, `var = tau_ii`.
#[inline]
pub fn milstein_step(s: f64, drift: f64, var: f64, dt: f64, shock: f64) -> f64 {
    s * (1.0 + drift * dt + shock + 0.5 * (shock * shock - var * dt))
}

/// Exact lognormal step for constant coefficients.
#[inline]
pub fn exact_log_step(s: f64, drift: f64, var: f64, dt: f64, shock: f64) -> f64 {
    s * ((drift - 0.5 * var) * dt + shock).exp()
}

/// Simulates one path with noise drawn from `SeedSequence::new(seed)`'s
/// market stream for path 0.
pub fn simulate_market(cfg: &MarketConfig, seed: u64) -> Result<MarketPath> {
    let model = cfg.resolve()?;
    let mut rng = SeedSequence::new(seed).rng(0, Stream::Market);
    model.simulate(&mut rng)
}

/// `mu_i = S_i / sum_j S_j`.
pub fn market_weights(prices: &[f64]) -> Result<Vec<f64>> {
    if let Some(p) = prices.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
        return Err(Error::domain(format!("market weights need positive prices, got {p}")));
    }
    let total: f64 = prices.iter().sum();
    Ok(prices.iter().map(|p| p / total).collect())
}

/// `tau = sigma sigma^T`.
pub fn instantaneous_cov(vol: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if vol.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("volatility matrix has non-finite entries"));
    }
    Ok(vol * vol.transpose())
}

/// Simulated prices, market weights and driving noise on `t_n = n dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketPath {
    dt: f64,
    n_assets: usize,
    prices: Vec<f64>,
    weights: Vec<f64>,
    brownian: Vec<f64>,
    agg_shock: Vec<f64>,
    cov: DMatrix<f64>,
}

impl MarketPath {
    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    /// Number of steps `m`; the grid has `m + 1` points.
    pub fn n_steps(&self) -> usize {
        self.agg_shock.len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.n_steps())
    }

    pub fn prices(&self, step: usize) -> &[f64] {
        &self.prices[step * self.n_assets..(step + 1) * self.n_assets]
    }

    pub fn weights(&self, step: usize) -> &[f64] {
        &self.weights[step * self.n_assets..(step + 1) * self.n_assets]
    }

    /// Brownian increments over `[t_step, t_step+1]`.
    pub fn brownian(&self, step: usize) -> &[f64] {
        &self.brownian[step * self.n_assets..(step + 1) * self.n_assets]
    }

    /// Standardized aggregate shocks `sum_k z_k / sqrt(d)`, one per step.
    pub fn agg_shocks(&self) -> &[f64] {
        &self.agg_shock
    }

    /// Covariance rate at `step`; constant under this simulator.
    pub fn cov(&self, _step: usize) -> &DMatrix<f64> {
        &self.cov
    }

    /// Total capitalization `sum_i S_i` at `step`.
    pub fn total_value(&self, step: usize) -> f64 {
        self.prices(step).iter().sum()
    }
}
