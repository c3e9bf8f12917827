//! Monte-Carlo harness: many independent (market, cost, ledger, audit)
//! pipelines with derived seeds, aggregated in path order.

use rayon::prelude::*;
use serde::Serialize;

use crate::audit::{audit_path, MasterReport};
use crate::cost::{simulate_cost_with_rng, CostConfig, CostPath};
use crate::error::{Error, Result};
use crate::ledger::{run_strategy, LedgerOptions, RebalanceSchedule, WealthLedger};
use crate::portfolio::GeneratorSpec;
use crate::rng::{SeedSequence, Stream};
use crate::sde::{MarketConfig, MarketModel, MarketPath};
use crate::stats;

/// Share of paths that may abort before an experiment is declared failed.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.01;
/// Consecutive positive steps required for a crossing.
pub const CROSSING_PERSISTENCE: usize = 20;

#[derive(Debug, Clone)]
pub struct McConfig {
    pub n_paths: usize,
    pub market: MarketConfig,
    pub cost: CostConfig,
    pub generator: GeneratorSpec,
    pub mesh_days: f64,
    pub ledger: LedgerOptions,
    pub master_seed: u64,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
    /// Halves the terminal wealth of the first `k` ledgers before auditing.
    #[doc(hidden)]
    pub corrupt_first: usize,
}

impl McConfig {
    /// Baseline market and costs, diversity p = 0.7, mesh 5 days, 500 paths.
    pub fn baseline() -> Self {
        Self {
            n_paths: 500,
            market: MarketConfig::baseline(),
            cost: CostConfig::baseline(),
            generator: GeneratorSpec::diversity(0.7).expect("0.7 is a valid exponent"),
            mesh_days: 5.0,
            ledger: LedgerOptions::default(),
            master_seed: 20240101,
            threads: None,
            corrupt_first: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::config("n_paths must be >= 1"));
        }
        if self.threads == Some(0) {
            return Err(Error::config("threads must be >= 1"));
        }
        self.market.validate()?;
        self.cost.validate(Some(self.market.horizon_days))?;
        RebalanceSchedule::new(self.mesh_days, self.market.dt_days, self.market.horizon_days)?;
        Ok(())
    }

    pub fn seeds(&self) -> SeedSequence {
        SeedSequence::new(self.master_seed)
    }
}

/// Simulates path `index` of an experiment. The market uses the market stream
/// and the cost process the cost stream of `(seeds, index)`, so scenarios
/// that change only costs keep the market bitwise identical.
pub fn simulate_path(
    model: &MarketModel,
    cost: &CostConfig,
    seeds: &SeedSequence,
    index: u64,
) -> Result<(MarketPath, CostPath)> {
    let mut market_rng = seeds.rng(index, Stream::Market);
    let market = model.simulate(&mut market_rng)?;
    let mut cost_rng = seeds.rng(index, Stream::Cost);
    let kappa = simulate_cost_with_rng(cost, market.agg_shocks(), market.dt(), &mut cost_rng)?;
    Ok((market, kappa))
}

#[derive(Debug, Clone, Serialize)]
pub struct PathRecord {
    pub path: usize,
    pub terminal_log_relative: f64,
    pub total_cost: f64,
    pub total_turnover: f64,
    pub report: MasterReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SqrtFit {
    /// Least-squares `c` in `y ~ c sqrt(t)`.
    pub c: f64,
    pub r2: f64,
    /// Least-squares `a` in `y ~ a t`.
    pub linear_slope: f64,
    pub linear_r2: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TerminalStats {
    pub mean: f64,
    pub skewness: f64,
    pub frac_positive: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Quantiles {
    pub q10: Vec<f64>,
    pub q25: Vec<f64>,
    pub q75: Vec<f64>,
    pub q90: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct McSummary {
    pub n_paths: usize,
    pub n_excluded: usize,
    pub dt: f64,
    pub mean_logrel: Vec<f64>,
    pub sd_logrel: Vec<f64>,
    pub quantiles: Quantiles,
    pub mean_cost: Vec<f64>,
    pub sqrt_fit: SqrtFit,
    pub terminal: TerminalStats,
    pub crossing_step: Option<usize>,
    /// Per retained path, in path order.
    pub records: Vec<PathRecord>,
}

impl McSummary {
    pub fn crossing_day(&self) -> Option<f64> {
        self.crossing_step.map(|k| k as f64 * self.dt)
    }

    pub fn n_steps(&self) -> usize {
        self.mean_logrel.len() - 1
    }

    pub fn violations(&self) -> usize {
        self.records.iter().filter(|r| r.report.violated()).count()
    }
}

/// Least-squares fits of `c sqrt(t)` and `a t` with `t = k dt`.
pub fn sqrt_fit(series: &[f64], dt: f64) -> Result<SqrtFit> {
    if series.iter().any(|y| !(y.is_finite() && *y >= 0.0)) {
        return Err(Error::domain("sqrt_fit needs a finite non-negative series"));
    }
    if series.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::domain("sqrt_fit needs a non-decreasing series"));
    }
    if series.iter().all(|y| *y == 0.0) {
        return Ok(SqrtFit {
            c: 0.0,
            r2: 0.0,
            linear_slope: 0.0,
            linear_r2: 0.0,
            degenerate: true,
        });
    }
    let t: Vec<f64> = (0..series.len()).map(|k| k as f64 * dt).collect();
    let root: Vec<f64> = t.iter().map(|x| x.sqrt()).collect();
    let c = stats::fit_through_origin(&root, series);
    let a = stats::fit_through_origin(&t, series);
    let fit_c: Vec<f64> = root.iter().map(|x| c * x).collect();
    let fit_a: Vec<f64> = t.iter().map(|x| a * x).collect();
    Ok(SqrtFit {
        c,
        r2: stats::r_squared(series, &fit_c),
        linear_slope: a,
        linear_r2: stats::r_squared(series, &fit_a),
        degenerate: false,
    })
}

pub fn terminal_density_stats(values: &[f64]) -> Result<TerminalStats> {
    if values.len() < 2 {
        return Err(Error::InsufficientSample {
            needed: 2,
            got: values.len(),
        });
    }
    let positive = values.iter().filter(|v| **v > 0.0).count();
    Ok(TerminalStats {
        mean: stats::mean(values),
        skewness: stats::adjusted_skewness(values),
        frac_positive: positive as f64 / values.len() as f64,
    })
}

/// First step where `curve > 0` holds for `persistence` consecutive steps.
pub fn crossing_step(curve: &[f64], persistence: usize) -> Option<usize> {
    let need = persistence.max(1);
    let mut run = 0;
    for (k, v) in curve.iter().enumerate() {
        if *v > 0.0 {
            run += 1;
            if run == need {
                return Some(k + 1 - need);
            }
        } else {
            run = 0;
        }
    }
    None
}

fn with_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(job()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::config(format!("thread pool: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

/// Aborting paths are excluded; more than 1% exclusions fail the experiment.
fn check_exclusions(excluded: usize, total: usize) -> Result<()> {
    if excluded as f64 > MAX_EXCLUDED_FRACTION * total as f64 {
        return Err(Error::TooManyExclusions { excluded, total });
    }
    Ok(())
}

fn is_path_abort(e: &Error) -> bool {
    matches!(e, Error::NonFinitePrice { .. } | Error::CostExceedsWealth { .. } | Error::Domain(_))
}

struct PathOutcome {
    logrel: Vec<f64>,
    cost: Vec<f64>,
    record: PathRecord,
}

fn run_one(
    cfg: &McConfig,
    model: &MarketModel,
    schedule: &RebalanceSchedule,
    seeds: &SeedSequence,
    index: usize,
) -> Result<PathOutcome> {
    let (market, kappa) = simulate_path(model, &cfg.cost, seeds, index as u64)?;
    let mut ledger = run_strategy(&market, &kappa, &cfg.generator, schedule, cfg.ledger)?;
    if index < cfg.corrupt_first {
        ledger.perturb_terminal_wealth(0.5);
    }
    let report = audit_path(&market, &ledger, &cfg.generator)?;
    Ok(PathOutcome {
        logrel: ledger.log_relative_curve(),
        cost: ledger.cum_cost().to_vec(),
        record: PathRecord {
            path: index,
            terminal_log_relative: ledger.terminal_log_relative(),
            total_cost: ledger.total_cost(),
            total_turnover: ledger.total_turnover(),
            report,
        },
    })
}

fn collect_outcomes<T>(results: Vec<Result<T>>) -> Result<(Vec<T>, usize)> {
    let total = results.len();
    let mut kept = Vec::with_capacity(total);
    let mut excluded = 0;
    for r in results {
        match r {
            Ok(v) => kept.push(v),
            Err(e) if is_path_abort(&e) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    check_exclusions(excluded, total)?;
    Ok((kept, excluded))
}

pub fn run_experiment(cfg: &McConfig) -> Result<McSummary> {
    cfg.validate()?;
    let model = cfg.market.resolve()?;
    let schedule = RebalanceSchedule::new(cfg.mesh_days, cfg.market.dt_days, cfg.market.horizon_days)?;
    let seeds = cfg.seeds();
    let results: Vec<Result<PathOutcome>> = with_pool(cfg.threads, || {
        (0..cfg.n_paths)
            .into_par_iter()
            .map(|p| run_one(cfg, &model, &schedule, &seeds, p))
            .collect()
    })?;
    let (outcomes, n_excluded) = collect_outcomes(results)?;
    summarize(outcomes, n_excluded, model.dt())
}

fn summarize(outcomes: Vec<PathOutcome>, n_excluded: usize, dt: f64) -> Result<McSummary> {
    let n = outcomes.len();
    if n == 0 {
        return Err(Error::InsufficientSample { needed: 1, got: 0 });
    }
    let steps = outcomes[0].logrel.len();
    let mut mean_logrel = Vec::with_capacity(steps);
    let mut sd_logrel = Vec::with_capacity(steps);
    let mut mean_cost = Vec::with_capacity(steps);
    let mut q = Quantiles {
        q10: Vec::with_capacity(steps),
        q25: Vec::with_capacity(steps),
        q75: Vec::with_capacity(steps),
        q90: Vec::with_capacity(steps),
    };
    let mut column = vec![0.0; n];
    let mut costs = vec![0.0; n];
    for k in 0..steps {
        for (j, o) in outcomes.iter().enumerate() {
            column[j] = o.logrel[k];
            costs[j] = o.cost[k];
        }
        mean_logrel.push(stats::mean(&column));
        sd_logrel.push(if n > 1 { stats::sample_sd(&column) } else { 0.0 });
        mean_cost.push(stats::mean(&costs));
        column.sort_by(f64::total_cmp);
        q.q10.push(stats::quantile_sorted(&column, 0.10));
        q.q25.push(stats::quantile_sorted(&column, 0.25));
        q.q75.push(stats::quantile_sorted(&column, 0.75));
        q.q90.push(stats::quantile_sorted(&column, 0.90));
    }
    // Running sums of non-negative increments can lose monotonicity only by
    // rounding in the mean; clamp that away before fitting.
    let monotone_cost: Vec<f64> = mean_cost
        .iter()
        .scan(0.0f64, |m, c| {
            *m = m.max(*c);
            Some(*m)
        })
        .collect();
    let records: Vec<PathRecord> = outcomes.into_iter().map(|o| o.record).collect();
    let terminals: Vec<f64> = records.iter().map(|r| r.terminal_log_relative).collect();
    let terminal = if n >= 2 {
        terminal_density_stats(&terminals)?
    } else {
        TerminalStats {
            mean: terminals[0],
            skewness: 0.0,
            frac_positive: if terminals[0] > 0.0 { 1.0 } else { 0.0 },
        }
    };
    Ok(McSummary {
        n_paths: n,
        n_excluded,
        dt,
        crossing_step: crossing_step(&mean_logrel, CROSSING_PERSISTENCE),
        sqrt_fit: sqrt_fit(&monotone_cost, dt)?,
        mean_logrel,
        sd_logrel,
        quantiles: q,
        mean_cost,
        terminal,
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub mesh_days: f64,
    pub edge_bp: f64,
    pub sd_bp: f64,
    pub se_bp: f64,
    pub frac_positive: f64,
    pub mean_cost: f64,
    pub mean_turnover: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    pub n_paths: usize,
    pub n_excluded: usize,
    pub rows: Vec<SweepRow>,
    /// `terminals[mesh][path]`, paths aligned across meshes.
    pub terminals: Vec<Vec<f64>>,
}

/// Terminal edge per mesh. Every mesh sees the same market and cost path
/// for a given path index.
pub fn mesh_sweep(cfg: &McConfig, meshes: &[f64]) -> Result<SweepTable> {
    cfg.validate()?;
    if meshes.is_empty() {
        return Err(Error::config("mesh list is empty"));
    }
    let schedules: Vec<RebalanceSchedule> = meshes
        .iter()
        .map(|m| RebalanceSchedule::new(*m, cfg.market.dt_days, cfg.market.horizon_days))
        .collect::<Result<_>>()?;
    let model = cfg.market.resolve()?;
    let seeds = cfg.seeds();
    let run = |p: usize| -> Result<Vec<(f64, f64, f64)>> {
        let (market, kappa) = simulate_path(&model, &cfg.cost, &seeds, p as u64)?;
        schedules
            .iter()
            .map(|s| {
                let l: WealthLedger = run_strategy(&market, &kappa, &cfg.generator, s, cfg.ledger)?;
                Ok((l.terminal_log_relative(), l.total_cost(), l.total_turnover()))
            })
            .collect()
    };
    let results: Vec<Result<Vec<(f64, f64, f64)>>> =
        with_pool(cfg.threads, || (0..cfg.n_paths).into_par_iter().map(run).collect())?;
    let (kept, n_excluded) = collect_outcomes(results)?;
    let n = kept.len();
    if n < 2 {
        return Err(Error::InsufficientSample { needed: 2, got: n });
    }
    let mut rows = Vec::with_capacity(meshes.len());
    let mut terminals = Vec::with_capacity(meshes.len());
    for (j, mesh) in meshes.iter().enumerate() {
        let term: Vec<f64> = kept.iter().map(|v| v[j].0).collect();
        let cost: Vec<f64> = kept.iter().map(|v| v[j].1).collect();
        let turn: Vec<f64> = kept.iter().map(|v| v[j].2).collect();
        let ts = terminal_density_stats(&term)?;
        let sd = stats::sample_sd(&term);
        rows.push(SweepRow {
            mesh_days: *mesh,
            edge_bp: 1e4 * ts.mean,
            sd_bp: 1e4 * sd,
            se_bp: 1e4 * sd / (n as f64).sqrt(),
            frac_positive: ts.frac_positive,
            mean_cost: stats::mean(&cost),
            mean_turnover: stats::mean(&turn),
        });
        terminals.push(term);
    }
    Ok(SweepTable {
        n_paths: n,
        n_excluded,
        rows,
        terminals,
    })
}
