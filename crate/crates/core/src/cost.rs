//! Proportional cost process: an Ornstein-Uhlenbeck spread stepped by its
//! exact Gaussian transition, optionally correlated with the aggregate market
//! shock, floored at `kappa_min`, with volatility multipliers inside shock
//! windows.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{SeedSequence, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    /// `corr(dB, dW_agg) = -rho`: spreads widen when the market falls.
    #[default]
    SpreadUpWhenMarketDown,
    /// `corr(dB, dW_agg) = +rho`.
    Literal,
}

impl SignConvention {
    fn sign(self) -> f64 {
        match self {
            SignConvention::SpreadUpWhenMarketDown => -1.0,
            SignConvention::Literal => 1.0,
        }
    }
}

/// Multiplies `eta` on transitions starting at `t` with `start <= t < end`.
/// Overlapping windows multiply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShockWindow {
    pub start: f64,
    pub end: f64,
    #[serde(rename = "mult")]
    pub multiplier: f64,
}

impl ShockWindow {
    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t < self.end
    }
}

/// All cost quantities are fractions (20 bps = 0.0020); rates are per day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    pub alpha: f64,
    pub kappa_bar: f64,
    pub eta: f64,
    pub kappa0: f64,
    pub rho: f64,
    pub sign_convention: SignConvention,
    pub kappa_min: f64,
    pub shocks: Vec<ShockWindow>,
}

impl CostConfig {
    /// alpha = 3/day, long-run 20 bps, eta = 5 bps, rho = 0.4, started at the
    /// long-run level.
    pub fn baseline() -> Self {
        Self {
            alpha: 3.0,
            kappa_bar: 0.0020,
            eta: 0.0005,
            kappa0: 0.0020,
            rho: 0.4,
            sign_convention: SignConvention::SpreadUpWhenMarketDown,
            kappa_min: 0.0,
            shocks: Vec::new(),
        }
    }

    /// Deterministic constant spread.
    pub fn constant(kappa: f64) -> Self {
        Self {
            eta: 0.0,
            kappa0: kappa,
            kappa_bar: kappa,
            ..Self::baseline()
        }
    }

    /// Checks parameter ranges, and shock windows against `horizon` if given.
    pub fn validate(&self, horizon: Option<f64>) -> Result<()> {
        let finite = [self.alpha, self.kappa_bar, self.eta, self.kappa0, self.rho, self.kappa_min]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::config("cost parameters must be finite"));
        }
        if self.alpha <= 0.0 {
            return Err(Error::config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        // kappa_bar = 0 is allowed so a frictionless market can be expressed
        // as a degenerate cost process.
        if self.kappa_bar < 0.0 || self.eta < 0.0 || self.kappa0 < 0.0 || self.kappa_min < 0.0 {
            return Err(Error::config("kappa_bar, eta, kappa0 and kappa_min must be >= 0"));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::config(format!("rho must lie in [-1, 1], got {}", self.rho)));
        }
        for w in &self.shocks {
            validate_window(w, horizon)?;
        }
        Ok(())
    }

    /// Product of the multipliers of all windows active at `t`.
    pub fn eta_multiplier(&self, t: f64) -> f64 {
        self.shocks
            .iter()
            .filter(|w| w.contains(t))
            .map(|w| w.multiplier)
            .product()
    }

    /// Stationary standard deviation `eta / sqrt(2 alpha)` (no floor, no shocks).
    pub fn stationary_sd(&self) -> f64 {
        self.eta / (2.0 * self.alpha).sqrt()
    }
}

fn validate_window(w: &ShockWindow, horizon: Option<f64>) -> Result<()> {
    if !(w.start.is_finite() && w.end.is_finite() && w.multiplier.is_finite()) {
        return Err(Error::config("shock window must be finite"));
    }
    if w.end <= w.start {
        return Err(Error::config(format!(
            "shock window is inverted or empty: ({}, {})",
            w.start, w.end
        )));
    }
    if w.start < 0.0 || horizon.is_some_and(|t| w.end > t + 1e-9) {
        return Err(Error::config(format!(
            "shock window ({}, {}) lies outside the horizon",
            w.start, w.end
        )));
    }
    if w.multiplier <= 0.0 {
        return Err(Error::config(format!(
            "shock multiplier must be > 0, got {}",
            w.multiplier
        )));
    }
    Ok(())
}

/// Returns `base` with one more shock window; `base` is left untouched.
pub fn shock_scenario(base: &CostConfig, window: (f64, f64), multiplier: f64) -> Result<CostConfig> {
    let w = ShockWindow {
        start: window.0,
        end: window.1,
        multiplier,
    };
    validate_window(&w, None)?;
    let mut out = base.clone();
    out.shocks.push(w);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostPath {
    dt: f64,
    kappa: Vec<f64>,
}

impl CostPath {
    pub fn from_values(dt: f64, kappa: Vec<f64>) -> Result<Self> {
        if kappa.is_empty() {
            return Err(Error::domain("cost path needs at least one point"));
        }
        if kappa.iter().any(|k| !(k.is_finite() && *k >= 0.0)) {
            return Err(Error::domain("cost path values must be finite and >= 0"));
        }
        Ok(Self { dt, kappa })
    }

    /// `kappa_t = value` on `n_steps + 1` grid points.
    pub fn constant(n_steps: usize, dt: f64, value: f64) -> Self {
        Self {
            dt,
            kappa: vec![value; n_steps + 1],
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.kappa.len() - 1
    }

    pub fn kappa(&self, step: usize) -> f64 {
        self.kappa[step]
    }

    pub fn values(&self) -> &[f64] {
        &self.kappa
    }

    /// Uniformly scaled copy, for comparative statics on a fixed noise path.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dt: self.dt,
            kappa: self.kappa.iter().map(|k| k * factor).collect(),
        }
    }
}

/// Simulates the cost path against `agg_shocks` (one standardized aggregate
/// market increment per step) with idiosyncratic noise from `seed`'s cost
/// stream.
pub fn simulate_cost(cfg: &CostConfig, agg_shocks: &[f64], dt: f64, seed: u64) -> Result<CostPath> {
    let mut rng = SeedSequence::new(seed).rng(0, Stream::Cost);
    simulate_cost_with_rng(cfg, agg_shocks, dt, &mut rng)
}

pub fn simulate_cost_with_rng<R: Rng + ?Sized>(
    cfg: &CostConfig,
    agg_shocks: &[f64],
    dt: f64,
    rng: &mut R,
) -> Result<CostPath> {
    let m = agg_shocks.len();
    cfg.validate(Some(m as f64 * dt))?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::config(format!("dt must be > 0, got {dt}")));
    }
    let decay = (-cfg.alpha * dt).exp();
    let noise_sd = ((1.0 - (-2.0 * cfg.alpha * dt).exp()) / (2.0 * cfg.alpha)).sqrt();
    let s = cfg.sign_convention.sign();
    let idio = (1.0 - cfg.rho * cfg.rho).max(0.0).sqrt();

    let mut kappa = Vec::with_capacity(m + 1);
    let mut k = cfg.kappa0.max(cfg.kappa_min);
    kappa.push(k);
    for (n, &agg) in agg_shocks.iter().enumerate() {
        // Draw every step so the idiosyncratic stream stays aligned for any rho.
        let xi: f64 = StandardNormal.sample(rng);
        let zeta = s * cfg.rho * agg + idio * xi;
        let eta = cfg.eta * cfg.eta_multiplier(n as f64 * dt);
        k = cfg.kappa_bar + (k - cfg.kappa_bar) * decay + eta * noise_sd * zeta;
        k = k.max(cfg.kappa_min);
        kappa.push(k);
    }
    Ok(CostPath { dt, kappa })
}
