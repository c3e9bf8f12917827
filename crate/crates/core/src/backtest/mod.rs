//! Monthly FGP rebalancing on a price/half-spread panel with per-asset
//! proportional costs, a value-weighted benchmark and performance metrics.

mod panel;

pub use panel::{
    load_panel, synthetic_panel, weekday_calendar, write_panel, DropReport, PanelFilters,
    PricePanel, SyntheticPanelConfig, DATE_FORMAT, PANEL_HEADER,
};

use chrono::{Datelike, NaiveDate};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::portfolio::GeneratorSpec;

pub const DAYS_PER_YEAR: f64 = 365.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub cagr: f64,
    pub max_dd: f64,
}

pub fn performance_metrics(wealth: &[f64], dates: &[NaiveDate]) -> Result<Metrics> {
    if wealth.len() < 2 || wealth.len() != dates.len() {
        return Err(Error::domain("metrics need >= 2 wealth points aligned with dates"));
    }
    if wealth.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::domain("wealth must be positive"));
    }
    let days = (dates[dates.len() - 1] - dates[0]).num_days();
    if days <= 0 {
        return Err(Error::domain("metrics need a positive calendar span"));
    }
    let cagr = (wealth[wealth.len() - 1] / wealth[0]).powf(DAYS_PER_YEAR / days as f64) - 1.0;
    let mut peak = wealth[0];
    let mut max_dd: f64 = 0.0;
    for w in wealth {
        peak = peak.max(*w);
        max_dd = max_dd.max(1.0 - w / peak);
    }
    Ok(Metrics { cagr, max_dd })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubperiodRow {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub strategy: f64,
    pub benchmark: f64,
    pub outperformance: f64,
}

/// Annualized strategy minus benchmark return over each inclusive date range.
pub fn subperiod_decomposition(
    strategy: &[f64],
    benchmark: &[f64],
    dates: &[NaiveDate],
    ranges: &[(NaiveDate, NaiveDate)],
) -> Result<Vec<SubperiodRow>> {
    if strategy.len() != dates.len() || benchmark.len() != dates.len() {
        return Err(Error::domain("curves and dates differ in length"));
    }
    ranges
        .iter()
        .map(|&(start, end)| {
            if dates.is_empty() || start < dates[0] || end > dates[dates.len() - 1] {
                return Err(Error::domain(format!("range {start}..{end} leaves the panel span")));
            }
            let i = dates.partition_point(|d| *d < start);
            let j = dates.partition_point(|d| *d <= end);
            if j < i + 2 {
                return Err(Error::domain(format!("range {start}..{end} holds fewer than 2 dates")));
            }
            let s = performance_metrics(&strategy[i..j], &dates[i..j])?.cagr;
            let b = performance_metrics(&benchmark[i..j], &dates[i..j])?.cagr;
            Ok(SubperiodRow {
                start: dates[i],
                end: dates[j - 1],
                strategy: s,
                benchmark: b,
                outperformance: s - b,
            })
        })
        .collect()
}

/// Indices of the first panel date of each calendar month.
pub fn monthly_rebalance_dates(dates: &[NaiveDate]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut last: Option<(i32, u32)> = None;
    for (t, d) in dates.iter().enumerate() {
        let ym = (d.year(), d.month());
        if last != Some(ym) {
            out.push(t);
            last = Some(ym);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct BacktestOptions {
    /// Charge the trade out of cash on the first rebalance date.
    pub charge_initial: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RebalanceRow {
    pub date: NaiveDate,
    pub turnover: f64,
    pub cost_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BacktestReport {
    pub generator: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub n_rebalances: usize,
    pub gross_cagr: f64,
    pub net_cagr: f64,
    pub benchmark_cagr: f64,
    /// Maximum drawdown of the net curve.
    pub max_dd: f64,
    pub gross_max_dd: f64,
    pub benchmark_max_dd: f64,
    /// Mean turnover over rebalances after the first.
    pub avg_monthly_turnover: f64,
    pub total_cost: f64,
    pub dates: Vec<NaiveDate>,
    pub gross: Vec<f64>,
    pub net: Vec<f64>,
    pub benchmark: Vec<f64>,
    pub rebalances: Vec<RebalanceRow>,
    pub subperiods: Vec<SubperiodRow>,
}

impl BacktestReport {
    pub fn with_subperiods(mut self, ranges: &[(NaiveDate, NaiveDate)]) -> Result<Self> {
        self.subperiods = subperiod_decomposition(&self.net, &self.benchmark, &self.dates, ranges)?;
        Ok(self)
    }
}

struct Book {
    holdings: Vec<f64>,
    value: f64,
    started: bool,
}

impl Book {
    fn new(n: usize) -> Self {
        Self {
            holdings: vec![0.0; n],
            value: 1.0,
            started: false,
        }
    }

    fn mark(&mut self, prices: &[f64]) {
        if self.started {
            self.value = self.holdings.iter().zip(prices).map(|(h, p)| h * p).sum();
        }
    }

    /// Trades to `target` paying `sum_i kappa_i |target_i - drifted_i|`.
    fn rebalance(
        &mut self,
        target: &[f64],
        prices: &[f64],
        kappa: &[f64],
        charge_initial: bool,
        step: usize,
    ) -> Result<(f64, f64)> {
        let mut turnover = 0.0;
        let mut fraction = 0.0;
        if self.started || charge_initial {
            for i in 0..target.len() {
                let drifted = if self.started {
                    self.holdings[i] * prices[i] / self.value
                } else {
                    0.0
                };
                let dw = (target[i] - drifted).abs();
                turnover += dw;
                fraction += kappa[i] * dw;
            }
        }
        if fraction >= 1.0 {
            return Err(Error::CostExceedsWealth { step, fraction });
        }
        self.value *= 1.0 - fraction;
        for i in 0..target.len() {
            self.holdings[i] = target[i] * self.value / prices[i];
        }
        self.started = true;
        Ok((turnover, fraction))
    }
}

/// Monthly first-trading-day rebalancing into `generator` weights of the
/// current members. Departed assets keep their last mid and spread until the
/// next rebalance sells them.
pub fn run_backtest(
    panel: &PricePanel,
    generator: &GeneratorSpec,
    options: BacktestOptions,
) -> Result<BacktestReport> {
    let dates = panel.dates();
    let n = panel.n_assets();
    let rebal = monthly_rebalance_dates(dates);
    if rebal.len() < 2 {
        return Err(Error::domain(format!(
            "backtest needs >= 2 rebalance dates, panel has {}",
            rebal.len()
        )));
    }
    let mut prices = vec![f64::NAN; n];
    let mut kappa = vec![0.0; n];
    let mut net = Book::new(n);
    let mut gross = Book::new(n);
    let zero = vec![0.0; n];
    let mut bench_value = 1.0;
    let mut bench_members: Vec<usize> = Vec::new();
    let mut bench_base = 0.0;
    let mut curves = (Vec::with_capacity(dates.len()), Vec::new(), Vec::new());
    let mut rows = Vec::with_capacity(rebal.len());
    let mut next = 0;

    for t in 0..dates.len() {
        for i in 0..n {
            if let (Some(p), Some(k)) = (panel.mid(t, i), panel.half_spread(t, i)) {
                prices[i] = p;
                kappa[i] = k;
            }
        }
        let members = panel.members(t);
        net.mark(&prices);
        gross.mark(&prices);

        // Benchmark: buy-and-hold of value weights, re-formed on membership change.
        let cap = |set: &[usize]| set.iter().map(|&i| prices[i]).sum::<f64>();
        if members != bench_members {
            if !bench_members.is_empty() {
                bench_value *= cap(&bench_members) / bench_base;
            }
            bench_members = members.clone();
            bench_base = cap(&bench_members);
        }
        let bench_now = if bench_members.is_empty() {
            bench_value
        } else {
            bench_value * cap(&bench_members) / bench_base
        };

        if next < rebal.len() && rebal[next] == t {
            if members.is_empty() {
                return Err(Error::domain(format!("no member assets on rebalance date {}", dates[t])));
            }
            let total: f64 = members.iter().map(|&i| prices[i]).sum();
            let mu: Vec<f64> = members.iter().map(|&i| prices[i] / total).collect();
            let pi = generator.weights(&mu)?;
            let mut target = vec![0.0; n];
            for (&i, w) in members.iter().zip(&pi) {
                target[i] = *w;
            }
            let (turnover, fraction) =
                net.rebalance(&target, &prices, &kappa, options.charge_initial, t)?;
            gross.rebalance(&target, &prices, &zero, options.charge_initial, t)?;
            rows.push(RebalanceRow {
                date: dates[t],
                turnover,
                cost_fraction: fraction,
            });
            next += 1;
        }
        curves.0.push(gross.value);
        curves.1.push(net.value);
        curves.2.push(bench_now);
    }

    let (gross_curve, net_curve, bench_curve) = curves;
    let g = performance_metrics(&gross_curve, dates)?;
    let nm = performance_metrics(&net_curve, dates)?;
    let b = performance_metrics(&bench_curve, dates)?;
    let later = &rows[1..];
    Ok(BacktestReport {
        generator: generator.name().to_string(),
        start: dates[0],
        end: dates[dates.len() - 1],
        n_rebalances: rows.len(),
        gross_cagr: g.cagr,
        net_cagr: nm.cagr,
        benchmark_cagr: b.cagr,
        max_dd: nm.max_dd,
        gross_max_dd: g.max_dd,
        benchmark_max_dd: b.max_dd,
        avg_monthly_turnover: later.iter().map(|r| r.turnover).sum::<f64>() / later.len() as f64,
        total_cost: rows.iter().map(|r| r.cost_fraction).sum(),
        dates: dates.to_vec(),
        gross: gross_curve,
        net: net_curve,
        benchmark: bench_curve,
        rebalances: rows,
        subperiods: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    #[test]
    fn metrics_examples() {
        let d2 = [date(2023, 1, 1), date(2024, 1, 1)];
        let m = performance_metrics(&[1.0, 1.0], &d2).unwrap();
        assert_eq!((m.cagr, m.max_dd), (0.0, 0.0));
        // 365 calendar days against a 365.25-day year.
        let m = performance_metrics(&[1.0, 2.0], &d2).unwrap();
        assert!((m.cagr - (2f64.powf(365.25 / 365.0) - 1.0)).abs() < 1e-15);
        let d3 = [date(2023, 1, 1), date(2023, 1, 2), date(2023, 1, 3)];
        assert_eq!(performance_metrics(&[1.0, 0.5, 0.75], &d3).unwrap().max_dd, 0.5);
        assert!(performance_metrics(&[1.0, 0.0], &d2).is_err());
        assert!(performance_metrics(&[1.0], &d2[..1]).is_err());
    }

    #[test]
    fn one_year_doubling_is_full_cagr() {
        // 2023-07-01 to 2024-07-01 spans 366 days; scale the year to match.
        let d = [date(2023, 7, 1), date(2024, 7, 1)];
        let w = [1.0, 2f64.powf(366.0 / 365.25)];
        assert!((performance_metrics(&w, &d).unwrap().cagr - 1.0).abs() < 1e-12);
    }

    #[test]
    fn subperiods_hand_case() {
        let d = [date(2020, 1, 1), date(2021, 1, 1), date(2022, 1, 1)];
        let s = [1.0, 1.1, 1.21];
        let b = [1.0, 1.0, 1.05];
        let ranges = [(d[0], d[1]), (d[1], d[2])];
        let rows = subperiod_decomposition(&s, &b, &d, &ranges).unwrap();
        let y1 = 365.25 / 366.0;
        let y2 = 365.25 / 365.0;
        assert!((rows[0].outperformance - (1.1f64.powf(y1) - 1.0)).abs() < 1e-14);
        let second = (1.21f64 / 1.1).powf(y2) - 1.05f64.powf(y2);
        assert!((rows[1].outperformance - second).abs() < 1e-14);
        let same = subperiod_decomposition(&s, &s, &d, &ranges).unwrap();
        assert!(same.iter().all(|r| r.outperformance == 0.0));
        assert!(subperiod_decomposition(&s, &b, &d, &[(d[1], d[1])]).is_err());
        assert!(subperiod_decomposition(&s, &b, &d, &[(date(2019, 1, 1), d[1])]).is_err());
    }

    #[test]
    fn monthly_schedule_picks_first_trading_days() {
        let d = [date(2024, 1, 30), date(2024, 1, 31), date(2024, 2, 2), date(2024, 2, 5), date(2024, 3, 1)];
        assert_eq!(monthly_rebalance_dates(&d), vec![0, 2, 4]);
    }

    fn two_asset_month() -> PricePanel {
        let dates = vec![date(2024, 1, 2), date(2024, 2, 1)];
        let assets = vec!["A".to_string(), "B".to_string()];
        let cells = vec![
            vec![Some((1.0, 10.0)), Some((1.0, 10.0))],
            vec![Some((2.0, 10.0)), Some((1.0, 10.0))],
        ];
        PricePanel::new(dates, assets, cells).unwrap()
    }

    #[test]
    fn single_month_two_asset_hand_case() {
        // p = 0.5: pi = (0.5, 0.5) on day one, then A doubles, drifted
        // weights are (2/3, 1/3) and the target is sqrt(mu) normalized.
        let g = GeneratorSpec::diversity(0.5).unwrap();
        let r = run_backtest(&two_asset_month(), &g, BacktestOptions::default()).unwrap();
        assert_eq!(r.n_rebalances, 2);
        assert!((r.rebalances[1].turnover - 0.161_760_458_079_523_430_9).abs() < 1e-15);
        assert!((r.net[1] - 1.499_757_359_312_880_714_9).abs() < 1e-15);
        assert_eq!(r.gross[1], 1.5);
        assert_eq!(r.benchmark[1], 1.5);
        assert!((r.net_cagr - 138.013_089_579_592_314_4).abs() < 1e-10);
        assert!((r.gross_cagr - 138.287_158_584_989_339_4).abs() < 1e-10);
        assert_eq!(r.max_dd, 0.0);
        assert_eq!(r.rebalances[0].turnover, 0.0);
        assert!((r.avg_monthly_turnover - r.rebalances[1].turnover).abs() < 1e-18);
    }

    #[test]
    fn market_weights_on_flat_prices_trade_nothing() {
        let dates = weekday_calendar(date(2024, 1, 1), 70);
        let cells = vec![vec![Some((3.0, 15.0)), Some((1.0, 15.0)), Some((2.0, 15.0))]; 70];
        let assets = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
        let panel = PricePanel::new(dates, assets, cells).unwrap();
        let r = run_backtest(&panel, &GeneratorSpec::diversity(1.0).unwrap(), Default::default()).unwrap();
        assert_eq!(r.net, r.gross);
        assert!(r.rebalances.iter().all(|x| x.turnover < 1e-15));
        assert_eq!((r.net_cagr, r.max_dd), (0.0, 0.0));
        let charged = run_backtest(
            &panel,
            &GeneratorSpec::diversity(1.0).unwrap(),
            BacktestOptions { charge_initial: true },
        )
        .unwrap();
        assert!((charged.total_cost - 0.0015).abs() < 1e-15);
    }

    #[test]
    fn membership_change_reforms_benchmark() {
        let dates = vec![date(2024, 1, 2), date(2024, 1, 3), date(2024, 2, 1), date(2024, 2, 2)];
        let assets = vec!["A".to_string(), "B".to_string()];
        let cells = vec![
            vec![Some((1.0, 10.0)), Some((1.0, 10.0))],
            vec![Some((2.0, 10.0)), None],
            vec![Some((3.0, 10.0)), Some((5.0, 10.0))],
            vec![Some((3.0, 10.0)), Some((10.0, 10.0))],
        ];
        let panel = PricePanel::new(dates, assets, cells).unwrap();
        let r = run_backtest(&panel, &GeneratorSpec::market(), Default::default()).unwrap();
        // Day 2: B leaves at its carried mid 1, value (2 + 1)/2 = 1.5 goes to A.
        assert!((r.benchmark[1] - 1.5).abs() < 1e-15);
        // Day 3: A moves 2 -> 3, then B rejoins; value 2.25 re-formed on (3, 5).
        assert!((r.benchmark[2] - 2.25).abs() < 1e-15);
        assert!((r.benchmark[3] - 2.25 * 13.0 / 8.0).abs() < 1e-14);
    }
}
