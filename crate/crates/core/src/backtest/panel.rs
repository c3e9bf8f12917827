use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};

use crate::cost::{simulate_cost_with_rng, CostConfig};
use crate::error::{Error, Result};
use crate::rng::{SeedSequence, Stream};
use crate::sde::MarketConfig;

pub const PANEL_HEADER: [&str; 4] = ["date", "asset", "mid", "half_spread_bps"];
pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// Long-format price and half-spread panel. Cells outside membership hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    dates: Vec<NaiveDate>,
    assets: Vec<String>,
    mid: Vec<Vec<f64>>,
    half_spread_bps: Vec<Vec<f64>>,
}

impl PricePanel {
    /// Builds a panel from `[date][asset]` grids; `None` marks a non-member cell.
    pub fn new(
        dates: Vec<NaiveDate>,
        assets: Vec<String>,
        cells: Vec<Vec<Option<(f64, f64)>>>,
    ) -> Result<Self> {
        if dates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("panel dates must be strictly increasing"));
        }
        if cells.len() != dates.len() || cells.iter().any(|r| r.len() != assets.len()) {
            return Err(Error::domain("panel cells do not match dates x assets"));
        }
        let mut mid = Vec::with_capacity(dates.len());
        let mut spread = Vec::with_capacity(dates.len());
        for row in cells {
            let mut m = Vec::with_capacity(row.len());
            let mut s = Vec::with_capacity(row.len());
            for cell in row {
                match cell {
                    Some((p, bps)) => {
                        if !(p.is_finite() && p > 0.0 && bps.is_finite() && bps >= 0.0) {
                            return Err(Error::domain(format!(
                                "member cells need mid > 0 and spread >= 0, got ({p}, {bps})"
                            )));
                        }
                        m.push(p);
                        s.push(bps);
                    }
                    None => {
                        m.push(f64::NAN);
                        s.push(f64::NAN);
                    }
                }
            }
            mid.push(m);
            spread.push(s);
        }
        let panel = Self {
            dates,
            assets,
            mid,
            half_spread_bps: spread,
        };
        if panel.n_rows() == 0 {
            return Err(Error::EmptyPanel);
        }
        Ok(panel)
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn is_member(&self, t: usize, i: usize) -> bool {
        !self.mid[t][i].is_nan()
    }

    pub fn mid(&self, t: usize, i: usize) -> Option<f64> {
        self.is_member(t, i).then(|| self.mid[t][i])
    }

    pub fn half_spread_bps(&self, t: usize, i: usize) -> Option<f64> {
        self.is_member(t, i).then(|| self.half_spread_bps[t][i])
    }

    /// Half-spread as a fraction of mid.
    pub fn half_spread(&self, t: usize, i: usize) -> Option<f64> {
        self.half_spread_bps(t, i).map(|b| b * 1e-4)
    }

    pub fn members(&self, t: usize) -> Vec<usize> {
        (0..self.n_assets()).filter(|i| self.is_member(t, *i)).collect()
    }

    /// Number of member cells.
    pub fn n_rows(&self) -> usize {
        self.mid.iter().flatten().filter(|m| !m.is_nan()).count()
    }

    /// Copy with every mid multiplied by `factor`.
    pub fn scale_mids(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for row in &mut out.mid {
            for m in row.iter_mut() {
                *m *= factor;
            }
        }
        out
    }

    /// Copy with every half-spread set to `bps`.
    pub fn with_uniform_spread(&self, bps: f64) -> Self {
        let mut out = self.clone();
        for (t, row) in out.half_spread_bps.iter_mut().enumerate() {
            for (i, s) in row.iter_mut().enumerate() {
                if !self.mid[t][i].is_nan() {
                    *s = bps;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelFilters {
    pub max_spread_bps: f64,
    pub drop_zero_spread: bool,
    /// Assets absent on more than this share of dates are dropped.
    pub max_missing_fraction: f64,
}

impl Default for PanelFilters {
    fn default() -> Self {
        Self {
            max_spread_bps: 500.0,
            drop_zero_spread: true,
            max_missing_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DropReport {
    pub rows_read: usize,
    pub zero_spread: usize,
    pub extreme_spread: usize,
    pub dropped_assets: Vec<String>,
    pub rows_of_dropped_assets: usize,
    pub rows_kept: usize,
}

fn malformed(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::MalformedRow {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn load_panel(path: &Path, filters: &PanelFilters) -> Result<(PricePanel, DropReport)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != PANEL_HEADER {
        return Err(malformed(
            path,
            1,
            format!("expected header {}", PANEL_HEADER.join(",")),
        ));
    }
    let mut report = DropReport::default();
    let mut rows: BTreeMap<String, BTreeMap<NaiveDate, (f64, f64)>> = BTreeMap::new();
    let mut all_dates = BTreeSet::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 4 {
            return Err(malformed(path, line, format!("expected 4 fields, got {}", record.len())));
        }
        let date = NaiveDate::parse_from_str(&record[0], DATE_FORMAT)
            .map_err(|e| malformed(path, line, format!("bad date {:?}: {e}", &record[0])))?;
        let asset = record[1].to_string();
        if asset.is_empty() {
            return Err(malformed(path, line, "empty asset id"));
        }
        let mid: f64 = record[2]
            .parse()
            .map_err(|_| malformed(path, line, format!("bad mid {:?}", &record[2])))?;
        let bps: f64 = record[3]
            .parse()
            .map_err(|_| malformed(path, line, format!("bad half_spread_bps {:?}", &record[3])))?;
        if !(mid.is_finite() && mid > 0.0) {
            return Err(malformed(path, line, format!("mid must be > 0, got {mid}")));
        }
        if !(bps.is_finite() && bps >= 0.0) {
            return Err(malformed(path, line, format!("half_spread_bps must be >= 0, got {bps}")));
        }
        report.rows_read += 1;
        all_dates.insert(date);
        if bps == 0.0 && filters.drop_zero_spread {
            report.zero_spread += 1;
            continue;
        }
        if bps > filters.max_spread_bps {
            report.extreme_spread += 1;
            continue;
        }
        if rows.entry(asset.clone()).or_default().insert(date, (mid, bps)).is_some() {
            return Err(malformed(path, line, format!("duplicate row for {asset} on {date}")));
        }
    }

    let kept_dates: BTreeSet<NaiveDate> = rows.values().flat_map(|m| m.keys().copied()).collect();
    let n_dates = kept_dates.len();
    rows.retain(|asset, cells| {
        let missing = (n_dates - cells.len()) as f64;
        if missing > filters.max_missing_fraction * n_dates as f64 + 1e-9 {
            report.dropped_assets.push(asset.clone());
            report.rows_of_dropped_assets += cells.len();
            false
        } else {
            true
        }
    });
    // Dates only carried by dropped assets are no longer trading days.
    let dates: Vec<NaiveDate> = rows
        .values()
        .flat_map(|m| m.keys().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if rows.is_empty() || dates.is_empty() {
        return Err(Error::EmptyPanel);
    }
    let assets: Vec<String> = rows.keys().cloned().collect();
    let cells: Vec<Vec<Option<(f64, f64)>>> = dates
        .iter()
        .map(|d| assets.iter().map(|a| rows[a].get(d).copied()).collect())
        .collect();
    let panel = PricePanel::new(dates, assets, cells)?;
    report.rows_kept = panel.n_rows();
    Ok((panel, report))
}

/// Writes member cells in `(date, asset)` order with round-trip float formatting.
pub fn write_panel(panel: &PricePanel, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(PANEL_HEADER)?;
    for (t, date) in panel.dates.iter().enumerate() {
        let d = date.format(DATE_FORMAT).to_string();
        for (i, asset) in panel.assets.iter().enumerate() {
            if let (Some(mid), Some(bps)) = (panel.mid(t, i), panel.half_spread_bps(t, i)) {
                w.write_record([d.as_str(), asset.as_str(), &mid.to_string(), &bps.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPanelConfig {
    pub market: MarketConfig,
    pub cost: CostConfig,
    pub start: NaiveDate,
    /// Per-asset spread multipliers are drawn from `Unif(lo, hi)`.
    pub spread_multiplier: (f64, f64),
    pub seed: u64,
}

impl SyntheticPanelConfig {
    /// Baseline market and cost parameters over `years` of weekday trading days.
    pub fn baseline(years: usize) -> Self {
        Self {
            market: MarketConfig {
                horizon_days: (252 * years) as f64,
                ..MarketConfig::baseline()
            },
            cost: CostConfig::baseline(),
            start: NaiveDate::from_ymd_opt(1994, 1, 3).expect("valid date"),
            spread_multiplier: (0.5, 1.5),
            seed: 19940103,
        }
    }
}

/// `n` weekdays starting at the first weekday on or after `start`.
pub fn weekday_calendar(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

/// Simulated mids with spreads `kappa_t * m_i`, on a weekday calendar.
pub fn synthetic_panel(cfg: &SyntheticPanelConfig) -> Result<PricePanel> {
    let (lo, hi) = cfg.spread_multiplier;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::config("spread multiplier range must satisfy 0 < lo <= hi"));
    }
    let model = cfg.market.resolve()?;
    let seeds = SeedSequence::new(cfg.seed);
    let market = model.simulate(&mut seeds.rng(0, Stream::Market))?;
    let kappa = simulate_cost_with_rng(
        &cfg.cost,
        market.agg_shocks(),
        market.dt(),
        &mut seeds.rng(0, Stream::Cost),
    )?;
    let mut panel_rng = seeds.rng(0, Stream::Panel);
    let dist = Uniform::new_inclusive(lo, hi).map_err(|e| Error::config(e.to_string()))?;
    let mult: Vec<f64> = (0..model.n_assets()).map(|_| panel_rng.sample(dist)).collect();
    let n = market.n_steps() + 1;
    let dates = weekday_calendar(cfg.start, n);
    let width = model.n_assets().to_string().len();
    let assets: Vec<String> = (0..model.n_assets())
        .map(|i| format!("S{:0width$}", i + 1))
        .collect();
    let cells = (0..n)
        .map(|k| {
            market
                .prices(k)
                .iter()
                .zip(&mult)
                .map(|(p, m)| Some((*p, kappa.kappa(k) * m * 1e4)))
                .collect()
        })
        .collect();
    PricePanel::new(dates, assets, cells)
}
