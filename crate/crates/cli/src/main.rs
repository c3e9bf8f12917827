use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{SecondsFormat, Utc};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use spt_core::audit::diversity_drift_check;
use spt_core::backtest::{load_panel, run_backtest, synthetic_panel, write_panel, SyntheticPanelConfig};
use spt_core::config::ExperimentFile;
use spt_core::export;
use spt_core::ledger::{run_strategy, RebalanceSchedule};
use spt_core::mc::{mesh_sweep, run_experiment, simulate_path, McConfig};
use spt_core::Error;

const EXIT_VIOLATIONS: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Stochastic portfolio theory experiments under transaction costs.
///
/// Overrides apply in the order config file < environment < flag.
#[derive(Parser)]
#[command(name = "spt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo experiment: summary.csv, terminals.csv, reports.csv.
    Simulate(RunArgs),
    /// Terminal edge per rebalancing mesh: sweep.csv.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated meshes in days.
        #[arg(long, value_delimiter = ',', required = true)]
        mesh: Vec<f64>,
    },
    /// Pathwise master-inequality audit: reports.csv, diagnostics.csv.
    Audit {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, hide = true, default_value_t = 0)]
        inject_violation: usize,
    },
    /// Monthly backtest on a panel CSV: report.json, curves.csv.
    Backtest {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Keep rows with zero half-spread instead of filtering them.
        #[arg(long)]
        keep_zero_spread: bool,
    },
    /// Writes a synthetic panel CSV from the simulator.
    Panel {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        years: usize,
        #[arg(long, env = "SPT_SEED")]
        seed: Option<u64>,
    },
    /// Dumps one simulated path: market.csv, cost.csv, ledger.csv, rebalances.csv.
    Path {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 0)]
        index: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "SPT_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "SPT_PATHS")]
    paths: Option<usize>,
    #[arg(long, env = "SPT_THREADS")]
    threads: Option<usize>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::MalformedRow { .. } | Error::EmptyPanel => {
                Failure::Config(e.to_string())
            }
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

#[derive(Serialize)]
struct OutputFile {
    file: String,
    sha256: String,
    bytes: u64,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config_hash: String,
    master_seed: Option<u64>,
    versions: Versions,
    started_at: String,
    finished_at: String,
    outputs: Vec<OutputFile>,
}

#[derive(Serialize)]
struct Versions {
    spt: &'static str,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Run {
    command: &'static str,
    out: PathBuf,
    config_hash: String,
    master_seed: Option<u64>,
    started_at: String,
    outputs: Vec<String>,
}

impl Run {
    fn start(command: &'static str, out: &Path, file: &ExperimentFile, seed: Option<u64>) -> Result<Self, Failure> {
        fs::create_dir_all(out).map_err(runtime)?;
        Ok(Self {
            command,
            out: out.to_path_buf(),
            config_hash: sha256_hex(file.canonical_json().as_bytes()),
            master_seed: seed,
            started_at: now(),
            outputs: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    fn finish(self) -> Result<(), Failure> {
        let outputs = self
            .outputs
            .iter()
            .map(|name| {
                let bytes = fs::read(self.out.join(name)).map_err(runtime)?;
                Ok(OutputFile {
                    file: name.clone(),
                    sha256: sha256_hex(&bytes),
                    bytes: bytes.len() as u64,
                })
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        let manifest = RunManifest {
            command: self.command.to_string(),
            config_hash: self.config_hash,
            master_seed: self.master_seed,
            versions: Versions {
                spt: env!("CARGO_PKG_VERSION"),
            },
            started_at: self.started_at,
            finished_at: now(),
            outputs,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(runtime)?;
        fs::write(self.out.join("manifest.json"), text).map_err(runtime)
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn read_config(path: Option<&Path>) -> Result<ExperimentFile, Failure> {
    match path {
        None => Ok(ExperimentFile::default()),
        Some(p) => ExperimentFile::from_path(p)
            .map_err(|e| Failure::Config(format!("{}: {e}", p.display()))),
    }
}

fn load(run: &RunArgs) -> Result<(ExperimentFile, McConfig), Failure> {
    let mut file = read_config(run.config.as_deref())?;
    if let Some(s) = run.seed {
        file.mc.master_seed = s;
    }
    if let Some(n) = run.paths {
        file.mc.n_paths = n;
    }
    if let Some(t) = run.threads {
        file.mc.threads = Some(t);
    }
    let cfg = file.to_mc_config()?;
    Ok((file, cfg))
}

fn dedup_meshes(meshes: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(meshes.len());
    for m in meshes {
        if !out.contains(m) {
            out.push(*m);
        }
    }
    if out.len() < meshes.len() {
        eprintln!("warning: duplicate mesh values removed; using {out:?}");
    }
    out
}

fn cmd_simulate(run: &RunArgs) -> Result<u8, Failure> {
    let (file, cfg) = load(run)?;
    let summary = run_experiment(&cfg)?;
    let mut r = Run::start("simulate", &run.out, &file, Some(cfg.master_seed))?;
    export::write_summary(&r.path("summary.csv"), &summary)?;
    export::write_terminals(&r.path("terminals.csv"), &summary.records)?;
    export::write_reports(&r.path("reports.csv"), &summary.records)?;
    r.finish()?;
    let t = summary.terminal;
    println!("paths: {} (excluded {})", summary.n_paths, summary.n_excluded);
    println!(
        "terminal: mean {:.6} skewness {:.4} frac_positive {:.4}",
        t.mean, t.skewness, t.frac_positive
    );
    match summary.crossing_day() {
        Some(d) => println!("crossing day: {d}"),
        None => println!("crossing day: none"),
    }
    let f = summary.sqrt_fit;
    println!("cost fit: c {:.6} r2 {:.4} (linear r2 {:.4})", f.c, f.r2, f.linear_r2);
    Ok(0)
}

fn cmd_sweep(run: &RunArgs, meshes: &[f64]) -> Result<u8, Failure> {
    let (file, cfg) = load(run)?;
    let meshes = dedup_meshes(meshes);
    let table = mesh_sweep(&cfg, &meshes)?;
    let mut r = Run::start("sweep", &run.out, &file, Some(cfg.master_seed))?;
    export::write_sweep(&r.path("sweep.csv"), &table)?;
    r.finish()?;
    println!("mesh_days,edge_bp,se_bp,frac_positive,mean_cost");
    for row in &table.rows {
        println!(
            "{},{:.2},{:.2},{:.4},{:.6}",
            row.mesh_days, row.edge_bp, row.se_bp, row.frac_positive, row.mean_cost
        );
    }
    Ok(0)
}

fn cmd_audit(run: &RunArgs, inject: usize) -> Result<u8, Failure> {
    let (file, mut cfg) = load(run)?;
    cfg.corrupt_first = inject;
    let summary = run_experiment(&cfg)?;
    let mut r = Run::start("audit", &run.out, &file, Some(cfg.master_seed))?;
    export::write_reports(&r.path("reports.csv"), &summary.records)?;
    if let Some(p) = cfg.generator.diversity_exponent().filter(|p| *p < 1.0) {
        let model = cfg.market.resolve()?;
        let (market, _) = simulate_path(&model, &cfg.cost, &cfg.seeds(), 0)?;
        let check = diversity_drift_check(&market, p)?;
        export::write_drift_checks(&r.path("diagnostics.csv"), &[(0, check)])?;
    }
    r.finish()?;
    let n = summary.records.len();
    let violations = summary.violations();
    let within = summary.records.iter().filter(|x| x.report.within_tolerance()).count();
    println!("master inequality violations: {violations}/{n}");
    println!("|slack| <= tol_quad: {within}/{n}");
    Ok(if violations > 0 { EXIT_VIOLATIONS } else { 0 })
}

fn cmd_backtest(panel: &Path, config: Option<&Path>, out: &Path, keep_zero: bool) -> Result<u8, Failure> {
    let file = read_config(config)?;
    let mut filters = file.backtest.filters;
    if keep_zero {
        filters.drop_zero_spread = false;
    }
    let (data, drops) = load_panel(panel, &filters)?;
    let generator = file.generator.to_spec()?;
    let report = run_backtest(&data, &generator, file.backtest.options())?
        .with_subperiods(&file.backtest.ranges())?;
    let mut r = Run::start("backtest", out, &file, None)?;
    #[derive(Serialize)]
    struct ReportFile<'a> {
        #[serde(flatten)]
        report: &'a spt_core::backtest::BacktestReport,
        drops: &'a spt_core::backtest::DropReport,
    }
    let json = serde_json::to_string_pretty(&ReportFile {
        report: &report,
        drops: &drops,
    })
    .map_err(runtime)?;
    fs::write(r.path("report.json"), json).map_err(runtime)?;
    export::write_curves(&r.path("curves.csv"), &report)?;
    r.finish()?;
    println!(
        "gross cagr {:.6} net cagr {:.6} benchmark cagr {:.6} max dd {:.4} turnover {:.4}",
        report.gross_cagr, report.net_cagr, report.benchmark_cagr, report.max_dd, report.avg_monthly_turnover
    );
    Ok(0)
}

fn cmd_panel(config: Option<&Path>, out: &Path, years: usize, seed: Option<u64>) -> Result<u8, Failure> {
    let file = read_config(config)?;
    let mut cfg = SyntheticPanelConfig::baseline(years);
    cfg.market = spt_core::sde::MarketConfig {
        horizon_days: cfg.market.horizon_days,
        ..file.market.to_config()?
    };
    cfg.market.validate()?;
    cfg.cost = file.cost.to_config();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let panel = synthetic_panel(&cfg)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(runtime)?;
    }
    write_panel(&panel, out)?;
    println!(
        "panel: {} dates x {} assets -> {}",
        panel.n_dates(),
        panel.n_assets(),
        out.display()
    );
    Ok(0)
}

fn cmd_path(run: &RunArgs, index: u64) -> Result<u8, Failure> {
    let (file, cfg) = load(run)?;
    let model = cfg.market.resolve()?;
    let (market, kappa) = simulate_path(&model, &cfg.cost, &cfg.seeds(), index)?;
    let schedule = RebalanceSchedule::for_market(cfg.mesh_days, &market)?;
    let ledger = run_strategy(&market, &kappa, &cfg.generator, &schedule, cfg.ledger)?;
    let mut r = Run::start("path", &run.out, &file, Some(cfg.master_seed))?;
    export::write_market_path(&r.path("market.csv"), &market)?;
    export::write_cost_path(&r.path("cost.csv"), &kappa)?;
    export::write_ledger(&r.path("ledger.csv"), &ledger)?;
    export::write_rebalances(&r.path("rebalances.csv"), &ledger)?;
    r.finish()?;
    println!(
        "path {index}: log relative wealth {:.6}, cost {:.6}",
        ledger.terminal_log_relative(),
        ledger.total_cost()
    );
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Simulate(run) => cmd_simulate(run),
        Command::Sweep { run, mesh } => cmd_sweep(run, mesh),
        Command::Audit { run, inject_violation } => cmd_audit(run, *inject_violation),
        Command::Backtest {
            panel,
            config,
            out,
            keep_zero_spread,
        } => cmd_backtest(panel, config.as_deref(), out, *keep_zero_spread),
        Command::Panel {
            config,
            out,
            years,
            seed,
        } => cmd_panel(config.as_deref(), out, *years, *seed),
        Command::Path { run, index } => cmd_path(run, *index),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
