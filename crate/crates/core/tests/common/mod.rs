//! Checks shared by the property tests and the acceptance suite. Each returns
//! `Err` with a description of the first failure.

#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use spt_core::cost::{simulate_cost_with_rng, CostConfig, CostPath};
use spt_core::ledger::{run_strategy, LedgerOptions, RebalanceSchedule};
use spt_core::mc::{run_experiment, McConfig};
use spt_core::portfolio::{GeneratorSpec, WeightRule};
use spt_core::rng::{SeedSequence, Stream};
use spt_core::sde::{MarketConfig, MarketPath, Scheme};
use spt_core::stats;

pub type Check = Result<(), String>;

pub fn generators() -> Vec<(&'static str, GeneratorSpec)> {
    vec![
        ("diversity p=0.3 direct", GeneratorSpec::diversity(0.3).unwrap()),
        ("diversity p=0.7 direct", GeneratorSpec::diversity(0.7).unwrap()),
        (
            "diversity p=0.7 fgp_formula",
            GeneratorSpec::diversity_with_rule(0.7, WeightRule::FgpFormula).unwrap(),
        ),
        ("entropy (product form)", GeneratorSpec::entropy()),
        ("gibbs entropy", GeneratorSpec::gibbs_entropy()),
        ("market", GeneratorSpec::market()),
    ]
}

/// Random interior point: normalized exponentials, dimension in `[2, 60]`.
pub fn random_interior<R: Rng>(rng: &mut R) -> Vec<f64> {
    let d = rng.random_range(2..=60);
    let raw: Vec<f64> = (0..d).map(|_| { let e: f64 = Exp1.sample(rng); e + 1e-6 }).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

pub fn weight_simplex(points: usize, seed: u64) -> Check {
    let mut rng = SeedSequence::new(seed).rng(0, Stream::Panel);
    let gens = generators();
    for k in 0..points {
        let mu = random_interior(&mut rng);
        for (name, g) in &gens {
            let pi = g.weights(&mu).map_err(|e| format!("{name}: {e}"))?;
            let s: f64 = pi.iter().sum();
            if (s - 1.0).abs() > 1e-10 {
                return Err(format!("{name}: sum {s} at point {k} (d = {})", mu.len()));
            }
        }
    }
    Ok(())
}

pub fn small_market(d: usize, days: f64, seed: u64) -> MarketConfig {
    MarketConfig {
        n_assets: d,
        horizon_days: days,
        seed,
        ..MarketConfig::baseline()
    }
}

pub fn simulate(cfg: &MarketConfig, cost: &CostConfig, seed: u64, path: u64) -> (MarketPath, CostPath) {
    let model = cfg.resolve().unwrap();
    let seeds = SeedSequence::new(seed);
    spt_core::mc::simulate_path(&model, cost, &seeds, path).unwrap()
}

/// Scaling kappa up on the same noise never raises terminal wealth.
pub fn cost_monotonicity(paths: u64) -> Check {
    let cfg = small_market(10, 200.0, 3);
    let g = GeneratorSpec::diversity(0.7).unwrap();
    for p in 0..paths {
        let (m, k) = simulate(&cfg, &CostConfig::baseline(), 11, p);
        let sched = RebalanceSchedule::for_market(5.0, &m).unwrap();
        let mut last = f64::INFINITY;
        for f in [0.0, 0.5, 1.0, 2.0, 4.0, 16.0] {
            let v = *run_strategy(&m, &k.scaled(f), &g, &sched, LedgerOptions::default())
                .unwrap()
                .wealth()
                .last()
                .unwrap();
            if v > last {
                return Err(format!("path {p}: V_T rose from {last} to {v} at factor {f}"));
            }
            last = v;
        }
    }
    Ok(())
}

fn rebalance_log_jumps(paths: u64) -> Vec<(f64, f64)> {
    let cfg = small_market(10, 200.0, 5);
    let g = GeneratorSpec::diversity(0.7).unwrap();
    let mut out = Vec::new();
    for p in 0..paths {
        let (m, k) = simulate(&cfg, &CostConfig::baseline(), 13, p);
        let sched = RebalanceSchedule::for_market(5.0, &m).unwrap();
        let led = run_strategy(&m, &k, &g, &sched, LedgerOptions::default()).unwrap();
        for r in led.rebalances() {
            let jump = r.wealth_after.ln() - r.wealth_before.ln();
            out.push((jump, r.kappa * r.turnover));
        }
    }
    out
}

/// `log V_tn - log V_tn- >= -kappa * turnover` at every rebalance, as stated.
pub fn log_loss_bound_literal(paths: u64) -> Check {
    for (jump, charge) in rebalance_log_jumps(paths) {
        if jump < -charge {
            return Err(format!(
                "log jump {jump:e} below -kappa*turnover = {:e}; log(1 - x) < -x for x > 0",
                -charge
            ));
        }
    }
    Ok(())
}

/// `-x / (1 - x) <= log V_tn - log V_tn- <= -x` with `x = kappa * turnover`.
pub fn log_loss_bound_two_sided(paths: u64) -> Check {
    for (jump, x) in rebalance_log_jumps(paths) {
        let slop = 1e-15 * (1.0 + x);
        if jump > -x + slop || jump < -x / (1.0 - x) - slop {
            return Err(format!("log jump {jump:e} outside [-x/(1-x), -x] for x = {x:e}"));
        }
    }
    Ok(())
}

pub fn fan_ordering(cfg: &McConfig) -> Check {
    let s = run_experiment(cfg).map_err(|e| e.to_string())?;
    let q = &s.quantiles;
    for k in 0..q.q10.len() {
        if !(q.q10[k] <= q.q25[k] && q.q25[k] <= q.q75[k] && q.q75[k] <= q.q90[k]) {
            return Err(format!("quantiles out of order at step {k}"));
        }
        if s.sd_logrel[k] < 0.0 {
            return Err(format!("negative sd at step {k}"));
        }
    }
    Ok(())
}

#[derive(Debug)]
pub struct OuMoments {
    pub mean: f64,
    pub mean_se: f64,
    pub sd: f64,
    pub sd_se: f64,
    pub lag1: f64,
    pub lag1_se: f64,
}

/// Cross-sectional moments of `kappa` at a late step over `paths` paths.
pub fn ou_moments(cfg: &CostConfig, paths: u64, steps: usize, seed: u64) -> OuMoments {
    let seeds = SeedSequence::new(seed);
    let mut last = Vec::with_capacity(paths as usize);
    let mut prev = Vec::with_capacity(paths as usize);
    for p in 0..paths {
        let mut mrng = seeds.rng(p, Stream::Market);
        let agg: Vec<f64> = (0..steps).map(|_| StandardNormal.sample(&mut mrng)).collect();
        let k = simulate_cost_with_rng(cfg, &agg, 1.0, &mut seeds.rng(p, Stream::Cost)).unwrap();
        last.push(k.kappa(steps));
        prev.push(k.kappa(steps - 1));
    }
    let n = paths as f64;
    let mean = stats::mean(&last);
    let sd = stats::sample_sd(&last);
    let mp = stats::mean(&prev);
    let cov: f64 = last.iter().zip(&prev).map(|(a, b)| (a - mean) * (b - mp)).sum::<f64>() / (n - 1.0);
    let lag1 = cov / (sd * stats::sample_sd(&prev));
    OuMoments {
        mean,
        mean_se: sd / n.sqrt(),
        sd,
        sd_se: sd / (2.0 * (n - 1.0)).sqrt(),
        lag1,
        lag1_se: (1.0 - lag1 * lag1) / n.sqrt(),
    }
}

pub fn ou_moment_match(paths: u64) -> Check {
    let cfg = CostConfig::baseline();
    let m = ou_moments(&cfg, paths, 60, 101);
    let sd_target = cfg.stationary_sd();
    let lag_target = (-cfg.alpha).exp();
    if (m.mean - cfg.kappa_bar).abs() > 3.0 * m.mean_se {
        return Err(format!("mean {} vs {} (se {})", m.mean, cfg.kappa_bar, m.mean_se));
    }
    if (m.sd - sd_target).abs() > 3.0 * m.sd_se {
        return Err(format!("sd {} vs {sd_target} (se {})", m.sd, m.sd_se));
    }
    if (m.lag1 - lag_target).abs() > 3.0 * m.lag1_se {
        return Err(format!("lag-1 {} vs {lag_target} (se {})", m.lag1, m.lag1_se));
    }
    Ok(())
}

pub fn deterministic_reruns(cfg: &McConfig) -> Check {
    let a = run_experiment(&McConfig { threads: Some(1), ..cfg.clone() }).map_err(|e| e.to_string())?;
    let b = run_experiment(&McConfig { threads: Some(3), ..cfg.clone() }).map_err(|e| e.to_string())?;
    let c = run_experiment(cfg).map_err(|e| e.to_string())?;
    let bits = |s: &spt_core::mc::McSummary| -> Vec<u64> {
        s.mean_logrel
            .iter()
            .chain(&s.sd_logrel)
            .chain(&s.mean_cost)
            .chain(&s.quantiles.q10)
            .chain(&s.quantiles.q90)
            .chain(s.records.iter().map(|r| &r.report.slack))
            .map(|x| x.to_bits())
            .collect()
    };
    if bits(&a) != bits(&b) || bits(&a) != bits(&c) {
        return Err("summaries differ across reruns or thread counts".into());
    }
    let m = small_market(8, 50.0, 1);
    let (p1, k1) = simulate(&m, &CostConfig::baseline(), 5, 2);
    let (p2, k2) = simulate(&m, &CostConfig::baseline(), 5, 2);
    if p1 != p2 || k1 != k2 {
        return Err("market or cost path differs on rerun".into());
    }
    Ok(())
}

/// Small experiment used wherever a full Monte-Carlo summary is needed quickly.
pub fn quick_mc(paths: usize) -> McConfig {
    McConfig {
        n_paths: paths,
        market: small_market(10, 200.0, 20240101),
        ..McConfig::baseline()
    }
}

/// Mean terminal strong error of Milstein at dt = 1 day over dt = 1/2 day,
/// both against the exact lognormal solution on the same Brownian path.
pub fn milstein_error_ratio(paths: u64) -> f64 {
    let fine_cfg = MarketConfig {
        dt_days: 0.5,
        ..small_market(4, 250.0, 2)
    };
    let coarse_cfg = MarketConfig {
        dt_days: 1.0,
        ..fine_cfg.clone()
    };
    let fine = fine_cfg.resolve().unwrap();
    let coarse = coarse_cfg.resolve().unwrap();
    let exact = fine.clone().with_scheme(Scheme::EulerLogExact);
    let d = fine.n_assets();
    let seeds = SeedSequence::new(8);
    let (mut e_fine, mut e_coarse) = (0.0, 0.0);
    for p in 0..paths {
        let f = fine.simulate(&mut seeds.rng(p, Stream::Market)).unwrap();
        let all: Vec<f64> = (0..f.n_steps()).flat_map(|k| f.brownian(k).to_vec()).collect();
        let paired: Vec<f64> = (0..coarse.n_steps())
            .flat_map(|k| (0..d).map(move |i| (k, i)))
            .map(|(k, i)| all[2 * k * d + i] + all[(2 * k + 1) * d + i])
            .collect();
        let c = coarse.simulate_from_increments(paired).unwrap();
        let x = exact.simulate_from_increments(all).unwrap();
        for i in 0..d {
            let truth = x.prices(x.n_steps())[i];
            e_fine += (f.prices(f.n_steps())[i] - truth).abs();
            e_coarse += (c.prices(c.n_steps())[i] - truth).abs();
        }
    }
    e_coarse / e_fine
}
