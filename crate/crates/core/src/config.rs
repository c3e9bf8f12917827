//! Experiment files (TOML or JSON) with sections `[market]`, `[cost]`,
//! `[generator]`, `[schedule]`, `[mc]` and an optional `[backtest]`.
//! Cost quantities are given in basis points.

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::backtest::{BacktestOptions, PanelFilters};
use crate::cost::{CostConfig, ShockWindow, SignConvention};
use crate::error::{Error, Result};
use crate::ledger::{LedgerOptions, TurnoverConvention};
use crate::mc::McConfig;
use crate::portfolio::{GeneratorSpec, WeightRule};
use crate::sde::{Drift, MarketConfig, Scheme, VolUnits, Volatility};

const BPS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKey {
    LogNeutral,
    ZeroLogGrowth,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketSection {
    pub d: usize,
    #[serde(rename = "T_days")]
    pub t_days: f64,
    pub dt_days: f64,
    pub vol_lo: f64,
    pub vol_hi: f64,
    /// Explicit per-asset vols; overrides the uniform range.
    pub vols: Option<Vec<f64>>,
    pub vol_units: VolUnits,
    pub log_neutral: bool,
    /// Overrides `log_neutral` when present.
    pub drift: Option<DriftKey>,
    pub scheme: Scheme,
    pub seed: u64,
}

impl Default for MarketSection {
    fn default() -> Self {
        Self {
            d: 50,
            t_days: 1000.0,
            dt_days: 1.0,
            vol_lo: 0.15,
            vol_hi: 0.35,
            vols: None,
            vol_units: VolUnits::Annualized,
            log_neutral: true,
            drift: None,
            scheme: Scheme::Milstein,
            seed: MarketConfig::baseline().seed,
        }
    }
}

impl MarketSection {
    pub fn to_config(&self) -> Result<MarketConfig> {
        let drift = match self.drift {
            Some(DriftKey::LogNeutral) => Drift::LogNeutral,
            Some(DriftKey::ZeroLogGrowth) => Drift::ZeroLogGrowth,
            Some(DriftKey::Zero) => Drift::Explicit(vec![0.0; self.d]),
            None if self.log_neutral => Drift::LogNeutral,
            None => Drift::Explicit(vec![0.0; self.d]),
        };
        let volatility = match &self.vols {
            Some(v) => Volatility::Diagonal(v.clone()),
            None => Volatility::Uniform {
                lo: self.vol_lo,
                hi: self.vol_hi,
            },
        };
        let cfg = MarketConfig {
            n_assets: self.d,
            horizon_days: self.t_days,
            dt_days: self.dt_days,
            volatility,
            vol_units: self.vol_units,
            drift,
            initial_prices: None,
            scheme: self.scheme,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    pub alpha: f64,
    pub kappa_bar_bps: f64,
    pub eta_bps: f64,
    /// Defaults to `kappa_bar_bps`.
    pub kappa0_bps: Option<f64>,
    pub rho: f64,
    pub sign_convention: SignConvention,
    pub kappa_min_bps: f64,
    pub shocks: Vec<ShockWindow>,
}

impl Default for CostSection {
    fn default() -> Self {
        Self {
            alpha: 3.0,
            kappa_bar_bps: 20.0,
            eta_bps: 5.0,
            kappa0_bps: None,
            rho: 0.4,
            sign_convention: SignConvention::SpreadUpWhenMarketDown,
            kappa_min_bps: 0.0,
            shocks: Vec::new(),
        }
    }
}

impl CostSection {
    pub fn to_config(&self) -> CostConfig {
        CostConfig {
            alpha: self.alpha,
            kappa_bar: self.kappa_bar_bps * BPS,
            eta: self.eta_bps * BPS,
            kappa0: self.kappa0_bps.unwrap_or(self.kappa_bar_bps) * BPS,
            rho: self.rho,
            sign_convention: self.sign_convention,
            kappa_min: self.kappa_min_bps * BPS,
            shocks: self.shocks.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Diversity,
    Entropy,
    Market,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    pub kind: GeneratorKind,
    pub p: f64,
    /// Built-in generator for `kind = "custom"`: `gibbs_entropy` or `constant`.
    pub name: Option<String>,
    pub weight_rule: WeightRule,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        Self {
            kind: GeneratorKind::Diversity,
            p: 0.7,
            name: None,
            weight_rule: WeightRule::Direct,
        }
    }
}

impl GeneratorSection {
    pub fn to_spec(&self) -> Result<GeneratorSpec> {
        match self.kind {
            GeneratorKind::Diversity => GeneratorSpec::diversity_with_rule(self.p, self.weight_rule),
            GeneratorKind::Entropy => Ok(GeneratorSpec::entropy()),
            GeneratorKind::Market => Ok(GeneratorSpec::market()),
            GeneratorKind::Custom => match self.name.as_deref() {
                Some("gibbs_entropy") => Ok(GeneratorSpec::gibbs_entropy()),
                Some("constant") => Ok(GeneratorSpec::market()),
                other => Err(Error::config(format!(
                    "unknown custom generator {other:?}; expected gibbs_entropy or constant"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub mesh_days: f64,
    pub turnover_convention: TurnoverConvention,
    pub charge_initial: bool,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            mesh_days: 5.0,
            turnover_convention: TurnoverConvention::Drifted,
            charge_initial: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSection {
    pub n_paths: usize,
    pub master_seed: u64,
    pub threads: Option<usize>,
}

impl Default for McSection {
    fn default() -> Self {
        Self {
            n_paths: 500,
            master_seed: 20240101,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestSection {
    pub charge_initial: bool,
    pub filters: PanelFilters,
    pub subperiods: Vec<DateRange>,
}

impl BacktestSection {
    pub fn options(&self) -> BacktestOptions {
        BacktestOptions {
            charge_initial: self.charge_initial,
        }
    }

    pub fn ranges(&self) -> Vec<(NaiveDate, NaiveDate)> {
        self.subperiods.iter().map(|r| (r.start, r.end)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentFile {
    pub market: MarketSection,
    pub cost: CostSection,
    pub generator: GeneratorSection,
    pub schedule: ScheduleSection,
    pub mc: McSection,
    pub backtest: BacktestSection,
}

impl ExperimentFile {
    /// Parses JSON for `.json` files and TOML otherwise.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("config: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("config: {e}")))
    }

    /// Canonical JSON form, stable across TOML/JSON inputs.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn ledger_options(&self) -> LedgerOptions {
        LedgerOptions {
            convention: self.schedule.turnover_convention,
            charge_initial: self.schedule.charge_initial,
        }
    }

    pub fn to_mc_config(&self) -> Result<McConfig> {
        let cfg = McConfig {
            n_paths: self.mc.n_paths,
            market: self.market.to_config()?,
            cost: self.cost.to_config(),
            generator: self.generator.to_spec()?,
            mesh_days: self.schedule.mesh_days,
            ledger: self.ledger_options(),
            master_seed: self.mc.master_seed,
            threads: self.mc.threads,
            corrupt_first: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
