//! CSV writers. Every file carries a header row; column names are stable.

use std::path::Path;

use serde::Serialize;

use crate::audit::DriftCheck;
use crate::backtest::BacktestReport;
use crate::cost::CostPath;
use crate::error::Result;
use crate::ledger::WealthLedger;
use crate::mc::{McSummary, PathRecord, SweepTable};
use crate::sde::MarketPath;

pub fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct MarketRow {
    step: usize,
    time: f64,
    asset: usize,
    price: f64,
    weight: f64,
}

pub fn write_market_path(path: &Path, market: &MarketPath) -> Result<()> {
    let rows = (0..=market.n_steps()).flat_map(|k| {
        (0..market.n_assets()).map(move |i| MarketRow {
            step: k,
            time: market.time(k),
            asset: i,
            price: market.prices(k)[i],
            weight: market.weights(k)[i],
        })
    });
    write_rows(path, rows)
}

#[derive(Serialize)]
struct CostRow {
    step: usize,
    time: f64,
    kappa_bps: f64,
}

pub fn write_cost_path(path: &Path, cost: &CostPath) -> Result<()> {
    write_rows(
        path,
        cost.values().iter().enumerate().map(|(k, v)| CostRow {
            step: k,
            time: k as f64 * cost.dt(),
            kappa_bps: v * 1e4,
        }),
    )
}

#[derive(Serialize)]
struct LedgerRow {
    step: usize,
    time: f64,
    #[serde(rename = "V")]
    v: f64,
    #[serde(rename = "V_mkt")]
    v_mkt: f64,
    log_rel: f64,
    #[serde(rename = "C")]
    c: f64,
    kappa_bps: f64,
}

pub fn write_ledger(path: &Path, ledger: &WealthLedger) -> Result<()> {
    write_rows(
        path,
        (0..=ledger.n_steps()).map(|k| LedgerRow {
            step: k,
            time: k as f64 * ledger.dt(),
            v: ledger.wealth()[k],
            v_mkt: ledger.market_wealth()[k],
            log_rel: ledger.log_relative(k),
            c: ledger.cum_cost()[k],
            kappa_bps: ledger.kappa()[k] * 1e4,
        }),
    )
}

#[derive(Serialize)]
struct RebalanceCsv {
    n: usize,
    t_n: f64,
    turnover: f64,
    cost_paid: f64,
}

pub fn write_rebalances(path: &Path, ledger: &WealthLedger) -> Result<()> {
    write_rows(
        path,
        ledger.rebalances().iter().map(|r| RebalanceCsv {
            n: r.n,
            t_n: r.time,
            turnover: r.turnover,
            cost_paid: r.cost_paid,
        }),
    )
}

#[derive(Serialize)]
struct ReportRow {
    path: usize,
    lhs: f64,
    g_term: f64,
    drift_integral: f64,
    cost_term: f64,
    rhs: f64,
    slack: f64,
    #[serde(rename = "D_T")]
    d_t: f64,
    quadrature_err_estimate: f64,
    tolerance: f64,
    relative_drift_integral: f64,
    relative_residual: f64,
    violated: bool,
}

pub fn write_reports(path: &Path, records: &[PathRecord]) -> Result<()> {
    write_rows(
        path,
        records.iter().map(|r| {
            let m = &r.report;
            ReportRow {
                path: r.path,
                lhs: m.lhs,
                g_term: m.g_term,
                drift_integral: m.drift_integral,
                cost_term: m.cost_term,
                rhs: m.rhs,
                slack: m.slack,
                d_t: m.d_t,
                quadrature_err_estimate: m.quadrature_err_estimate,
                tolerance: m.tolerance,
                relative_drift_integral: m.relative_drift_integral,
                relative_residual: m.relative_residual,
                violated: m.violated(),
            }
        }),
    )
}

#[derive(Serialize)]
struct SummaryRow {
    step: usize,
    time: f64,
    mean_logrel: f64,
    sd_logrel: f64,
    q10: f64,
    q25: f64,
    q75: f64,
    q90: f64,
    mean_cost: f64,
}

pub fn write_summary(path: &Path, s: &McSummary) -> Result<()> {
    write_rows(
        path,
        (0..s.mean_logrel.len()).map(|k| SummaryRow {
            step: k,
            time: k as f64 * s.dt,
            mean_logrel: s.mean_logrel[k],
            sd_logrel: s.sd_logrel[k],
            q10: s.quantiles.q10[k],
            q25: s.quantiles.q25[k],
            q75: s.quantiles.q75[k],
            q90: s.quantiles.q90[k],
            mean_cost: s.mean_cost[k],
        }),
    )
}

#[derive(Serialize)]
struct TerminalRow {
    path: usize,
    terminal_log_rel: f64,
    total_cost: f64,
    total_turnover: f64,
}

pub fn write_terminals(path: &Path, records: &[PathRecord]) -> Result<()> {
    write_rows(
        path,
        records.iter().map(|r| TerminalRow {
            path: r.path,
            terminal_log_rel: r.terminal_log_relative,
            total_cost: r.total_cost,
            total_turnover: r.total_turnover,
        }),
    )
}

pub fn write_sweep(path: &Path, table: &SweepTable) -> Result<()> {
    write_rows(path, table.rows.iter())
}

#[derive(Serialize)]
struct DriftRow {
    path: usize,
    drift_integral: f64,
    excess_growth_term: f64,
    discrepancy: f64,
    relative_discrepancy: f64,
}

pub fn write_drift_checks(path: &Path, checks: &[(usize, DriftCheck)]) -> Result<()> {
    write_rows(
        path,
        checks.iter().map(|(p, c)| DriftRow {
            path: *p,
            drift_integral: c.drift_integral,
            excess_growth_term: c.excess_growth_term,
            discrepancy: c.discrepancy,
            relative_discrepancy: c.relative_discrepancy,
        }),
    )
}

#[derive(Serialize)]
struct CurveRow {
    date: String,
    gross: f64,
    net: f64,
    benchmark: f64,
}

pub fn write_curves(path: &Path, report: &BacktestReport) -> Result<()> {
    write_rows(
        path,
        report.dates.iter().enumerate().map(|(t, d)| CurveRow {
            date: d.format(crate::backtest::DATE_FORMAT).to_string(),
            gross: report.gross[t],
            net: report.net[t],
            benchmark: report.benchmark[t],
        }),
    )
}
