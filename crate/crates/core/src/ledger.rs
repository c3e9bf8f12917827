//! Cost-adjusted wealth of a portfolio rebalanced on a fixed mesh.
//!
//! Between mesh dates share holdings are frozen (buy-and-hold). At a mesh date
//! `t_n` wealth is cut multiplicatively, `V_{t_n} = V_{t_n-} (1 - kappa_{t_n}
//! turnover_n)`, and holdings are reset to the generator's target weights.
//! No trade occurs at the horizon.

use serde::{Deserialize, Serialize};

use crate::cost::CostPath;
use crate::error::{Error, Result};
use crate::portfolio::GeneratorSpec;
use crate::sde::MarketPath;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TurnoverConvention {
    /// `|pi_target(t_n) - pi_drifted(t_n-)|_1`: what the trade actually moves.
    #[default]
    Drifted,
    /// `|pi_target(t_{n+1}) - pi_target(t_n)|_1`, charged at `t_n` with
    /// `kappa_{t_n}`. Looks one mesh date ahead along the realized path.
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LedgerOptions {
    pub convention: TurnoverConvention,
    /// Charge `kappa_0 |pi_0|_1` for forming the initial position from cash.
    pub charge_initial: bool,
}

/// Trades at `t_n = n * mesh` for `n = 0 .. T / mesh - 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RebalanceSchedule {
    mesh_days: f64,
    dt: f64,
    mesh_steps: usize,
    n_steps: usize,
}

impl RebalanceSchedule {
    pub fn new(mesh_days: f64, dt: f64, horizon: f64) -> Result<Self> {
        if !(mesh_days.is_finite() && mesh_days > 0.0) {
            return Err(Error::config(format!("mesh must be > 0, got {mesh_days}")));
        }
        if mesh_days + 1e-12 < dt {
            return Err(Error::config(format!("mesh {mesh_days} is finer than dt {dt}")));
        }
        let mesh_steps = crate::sde::steps_for(mesh_days, dt)
            .map_err(|_| Error::config(format!("mesh {mesh_days} is not a multiple of dt {dt}")))?;
        let n_steps = crate::sde::steps_for(horizon, dt)?;
        if n_steps % mesh_steps != 0 {
            return Err(Error::config(format!(
                "horizon {horizon} is not divisible by mesh {mesh_days}"
            )));
        }
        Ok(Self {
            mesh_days,
            dt,
            mesh_steps,
            n_steps,
        })
    }

    pub fn for_market(mesh_days: f64, market: &MarketPath) -> Result<Self> {
        Self::new(mesh_days, market.dt(), market.horizon())
    }

    pub fn mesh_days(&self) -> f64 {
        self.mesh_days
    }

    pub fn mesh_steps(&self) -> usize {
        self.mesh_steps
    }

    /// Number of mesh intervals `T / mesh`.
    pub fn n_intervals(&self) -> usize {
        self.n_steps / self.mesh_steps
    }

    pub fn is_trade_step(&self, step: usize) -> bool {
        step.is_multiple_of(self.mesh_steps) && step < self.n_steps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RebalanceRecord {
    pub n: usize,
    pub step: usize,
    pub time: f64,
    pub kappa: f64,
    pub turnover: f64,
    /// `kappa * turnover`, the increment of the cumulative cost.
    pub cost_fraction: f64,
    /// Wealth given up: `V_{t_n-} * cost_fraction`.
    pub cost_paid: f64,
    pub wealth_before: f64,
    pub wealth_after: f64,
    /// Pre-trade weights; all zero at the initial formation from cash.
    pub drifted: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WealthLedger {
    dt: f64,
    options: LedgerOptions,
    mesh_days: f64,
    wealth: Vec<f64>,
    market_wealth: Vec<f64>,
    cum_cost: Vec<f64>,
    kappa: Vec<f64>,
    rebalances: Vec<RebalanceRecord>,
}

impl WealthLedger {
    pub fn n_steps(&self) -> usize {
        self.wealth.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn options(&self) -> LedgerOptions {
        self.options
    }

    pub fn mesh_days(&self) -> f64 {
        self.mesh_days
    }

    /// Strategy wealth after any trade at each step.
    pub fn wealth(&self) -> &[f64] {
        &self.wealth
    }

    pub fn market_wealth(&self) -> &[f64] {
        &self.market_wealth
    }

    pub fn cum_cost(&self) -> &[f64] {
        &self.cum_cost
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    pub fn rebalances(&self) -> &[RebalanceRecord] {
        &self.rebalances
    }

    pub fn log_relative(&self, step: usize) -> f64 {
        (self.wealth[step] / self.market_wealth[step]).ln()
    }

    pub fn log_relative_curve(&self) -> Vec<f64> {
        (0..=self.n_steps()).map(|k| self.log_relative(k)).collect()
    }

    pub fn terminal_log_relative(&self) -> f64 {
        self.log_relative(self.n_steps())
    }

    pub fn total_cost(&self) -> f64 {
        *self.cum_cost.last().expect("ledger is never empty")
    }

    pub fn total_turnover(&self) -> f64 {
        self.rebalances.iter().map(|r| r.turnover).sum()
    }

    /// Test hook: scales terminal strategy wealth to fake a broken ledger.
    #[doc(hidden)]
    pub fn perturb_terminal_wealth(&mut self, factor: f64) {
        if let Some(v) = self.wealth.last_mut() {
            *v *= factor;
        }
    }
}

fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub fn run_strategy(
    market: &MarketPath,
    cost: &CostPath,
    generator: &GeneratorSpec,
    schedule: &RebalanceSchedule,
    options: LedgerOptions,
) -> Result<WealthLedger> {
    let m = market.n_steps();
    let d = market.n_assets();
    if cost.n_steps() != m {
        return Err(Error::GridMismatch(format!(
            "market has {m} steps, cost path has {}",
            cost.n_steps()
        )));
    }
    if (cost.dt() - market.dt()).abs() > 1e-12 || (schedule.dt - market.dt()).abs() > 1e-12 {
        return Err(Error::GridMismatch("dt differs between market, cost and schedule".into()));
    }
    if schedule.n_steps != m {
        return Err(Error::GridMismatch(format!(
            "schedule covers {} steps, market has {m}",
            schedule.n_steps
        )));
    }

    let mesh = schedule.mesh_steps;
    let n_intervals = schedule.n_intervals();
    // Under the target convention every term needs pi at the next mesh date.
    let lookahead: Vec<Vec<f64>> = match options.convention {
        TurnoverConvention::Target => (0..=n_intervals)
            .map(|n| generator.weights(market.weights(n * mesh)))
            .collect::<Result<_>>()?,
        TurnoverConvention::Drifted => Vec::new(),
    };

    let s0_total = market.total_value(0);
    let mut wealth = Vec::with_capacity(m + 1);
    let mut market_wealth = Vec::with_capacity(m + 1);
    let mut cum_cost = Vec::with_capacity(m + 1);
    let mut rebalances = Vec::with_capacity(n_intervals);
    let mut holdings = vec![0.0; d];
    let mut c = 0.0;
    let mut v = 1.0;

    for k in 0..=m {
        let prices = market.prices(k);
        if k > 0 {
            v = holdings.iter().zip(prices).map(|(h, s)| h * s).sum();
        }
        if schedule.is_trade_step(k) {
            let n = k / mesh;
            let drifted: Vec<f64> = if k == 0 {
                vec![0.0; d]
            } else {
                holdings.iter().zip(prices).map(|(h, s)| h * s / v).collect()
            };
            let target = match options.convention {
                TurnoverConvention::Target => lookahead[n].clone(),
                TurnoverConvention::Drifted => generator.weights(market.weights(k))?,
            };
            let mut turnover = match options.convention {
                TurnoverConvention::Drifted if k == 0 => 0.0,
                TurnoverConvention::Drifted => l1_distance(&target, &drifted),
                TurnoverConvention::Target => l1_distance(&lookahead[n + 1], &lookahead[n]),
            };
            if k == 0 && options.charge_initial {
                turnover += target.iter().map(|x| x.abs()).sum::<f64>();
            }
            let kappa = cost.kappa(k);
            let fraction = kappa * turnover;
            if fraction >= 1.0 {
                return Err(Error::CostExceedsWealth { step: k, fraction });
            }
            let before = v;
            v *= 1.0 - fraction;
            c += fraction;
            for i in 0..d {
                holdings[i] = target[i] * v / prices[i];
            }
            rebalances.push(RebalanceRecord {
                n,
                step: k,
                time: market.time(k),
                kappa,
                turnover,
                cost_fraction: fraction,
                cost_paid: before * fraction,
                wealth_before: before,
                wealth_after: v,
                drifted,
                target,
            });
        }
        wealth.push(v);
        market_wealth.push(market.total_value(k) / s0_total);
        cum_cost.push(c);
    }

    Ok(WealthLedger {
        dt: market.dt(),
        options,
        mesh_days: schedule.mesh_days,
        wealth,
        market_wealth,
        cum_cost,
        kappa: cost.values().to_vec(),
        rebalances,
    })
}
