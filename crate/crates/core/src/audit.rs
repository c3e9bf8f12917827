//! Pathwise audit of the cost-adjusted master inequality
//!
//! ```text
//! log(V_T / V^mkt_T) >= log(G(mu_T) / G(mu_0))
//!                      + 0.5 int_0^T sum_ij (d2_ij G / G)(mu_t) mu_i mu_j tau_ij dt
//!                      - C_T
//! ```
//!
//! plus the diagnostics around it: the diversity drift identity, cost-scaling
//! fits and the mesh threshold.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ledger::WealthLedger;
use crate::portfolio::{excess_growth_pairwise, Diversity, Generator, GeneratorSpec};
use crate::sde::MarketPath;
use crate::stats;

/// Absolute slack allowance on top of the quadrature error estimate.
pub const SLACK_FLOOR: f64 = 1e-8;

/// Composite trapezoid rule on a uniform grid.
pub fn trapezoid(values: &[f64], dt: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    dt * (0.5 * (values[0] + values[values.len() - 1]) + inner)
}

/// Running trapezoid integral, starting at 0.
pub fn cumulative_trapezoid(values: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in values.windows(2) {
        acc += 0.5 * dt * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

/// Trapezoid integral and a step-halving error estimate.
///
/// The estimate is `|I_h - I_2h| / 3`, with `I_2h` using every other grid
/// point (a trailing odd interval is integrated at step `h` in both).
pub fn trapezoid_with_error(values: &[f64], dt: f64) -> (f64, f64) {
    let fine = trapezoid(values, dt);
    let m = values.len().saturating_sub(1);
    if m < 2 {
        return (fine, 0.0);
    }
    let even_end = m - m % 2;
    let coarse_pts: Vec<f64> = values[..=even_end].iter().step_by(2).copied().collect();
    let mut coarse = trapezoid(&coarse_pts, 2.0 * dt);
    if even_end < m {
        coarse += 0.5 * dt * (values[m - 1] + values[m]);
    }
    (fine, (fine - coarse).abs() / 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MasterReport {
    pub lhs: f64,
    pub g_term: f64,
    pub drift_integral: f64,
    pub cost_term: f64,
    pub rhs: f64,
    pub slack: f64,
    /// `int gamma*_pairwise dt`.
    pub d_t: f64,
    pub quadrature_err_estimate: f64,
    /// `quadrature_err_estimate + SLACK_FLOOR`.
    pub tolerance: f64,
    /// `-0.5 int sum_ij (d2_ij G / G) mu_i mu_j tau^mu_ij dt`, the drift of the
    /// classical decomposition written against the covariance of `mu`.
    pub relative_drift_integral: f64,
    /// `lhs - (g_term + relative_drift_integral - cost_term)`.
    pub relative_residual: f64,
}

impl MasterReport {
    pub fn violated(&self) -> bool {
        self.slack < -self.tolerance
    }

    pub fn within_tolerance(&self) -> bool {
        self.slack.abs() <= self.tolerance
    }
}

fn check_grid(market: &MarketPath, ledger: &WealthLedger) -> Result<()> {
    if market.n_steps() != ledger.n_steps() || (market.dt() - ledger.dt()).abs() > 1e-12 {
        return Err(Error::GridMismatch(format!(
            "market has {} steps of {}, ledger {} steps of {}",
            market.n_steps(),
            market.dt(),
            ledger.n_steps(),
            ledger.dt()
        )));
    }
    Ok(())
}

pub fn audit_path(
    market: &MarketPath,
    ledger: &WealthLedger,
    generator: &GeneratorSpec,
) -> Result<MasterReport> {
    check_grid(market, ledger)?;
    let g = generator.generator();
    let m = market.n_steps();
    let mut curvature = Vec::with_capacity(m + 1);
    let mut relative = Vec::with_capacity(m + 1);
    let mut gamma = Vec::with_capacity(m + 1);
    for k in 0..=m {
        let mu = market.weights(k);
        let tau = market.cov(k);
        let c = g.curvature(mu, tau);
        let r = g.relative_curvature(mu, tau);
        if !(c.is_finite() && r.is_finite()) {
            return Err(Error::domain(format!(
                "generator {} has no finite Hessian term at step {k}",
                g.name()
            )));
        }
        curvature.push(c);
        relative.push(r);
        gamma.push(excess_growth_pairwise(mu));
    }
    let dt = market.dt();
    let (curv_int, curv_err) = trapezoid_with_error(&curvature, dt);
    let drift_integral = 0.5 * curv_int;
    let quadrature_err_estimate = 0.5 * curv_err;
    let relative_drift_integral = -0.5 * trapezoid(&relative, dt);

    let g0 = g.value(market.weights(0));
    let g_t = g.value(market.weights(m));
    let g_term = (g_t / g0).ln();
    let lhs = ledger.terminal_log_relative();
    let cost_term = ledger.total_cost();
    let rhs = g_term + drift_integral - cost_term;
    let tolerance = quadrature_err_estimate + SLACK_FLOOR;
    let report = MasterReport {
        lhs,
        g_term,
        drift_integral,
        cost_term,
        rhs,
        slack: lhs - rhs,
        d_t: trapezoid(&gamma, dt),
        quadrature_err_estimate,
        tolerance,
        relative_drift_integral,
        relative_residual: lhs - (g_term + relative_drift_integral - cost_term),
    };
    if [report.lhs, report.g_term, report.drift_integral, report.cost_term]
        .iter()
        .any(|x| !x.is_finite())
    {
        return Err(Error::domain("master report has non-finite terms"));
    }
    Ok(report)
}

/// Running `D_t = int_0^t gamma*_pairwise ds` along the path.
pub fn excess_growth_curve(market: &MarketPath) -> Vec<f64> {
    let gamma: Vec<f64> = (0..=market.n_steps())
        .map(|k| excess_growth_pairwise(market.weights(k)))
        .collect();
    cumulative_trapezoid(&gamma, market.dt())
}

/// Instantaneous rates `(0.5 * curvature of G_p, (1 - p) gamma*_pairwise)`.
pub fn diversity_drift_rates(p: f64, mu: &[f64], tau: &nalgebra::DMatrix<f64>) -> (f64, f64) {
    let half = 0.5 * Diversity { p }.curvature(mu, tau);
    (half, (1.0 - p) * excess_growth_pairwise(mu))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftCheck {
    pub drift_integral: f64,
    pub excess_growth_term: f64,
    pub discrepancy: f64,
    /// `discrepancy / |excess_growth_term|`; NaN when the latter is 0.
    pub relative_discrepancy: f64,
}

/// Compares the `G_p` drift integral with `(1 - p) D_T`. Reported only: the
/// two are not equal for `G_p = sum mu^p`.
pub fn diversity_drift_check(market: &MarketPath, p: f64) -> Result<DriftCheck> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("diversity exponent must lie in (0, 1), got {p}")));
    }
    let (half, excess): (Vec<f64>, Vec<f64>) = (0..=market.n_steps())
        .map(|k| diversity_drift_rates(p, market.weights(k), market.cov(k)))
        .unzip();
    let drift_integral = trapezoid(&half, market.dt());
    let excess_growth_term = trapezoid(&excess, market.dt());
    let discrepancy = drift_integral - excess_growth_term;
    let relative_discrepancy = if excess_growth_term == 0.0 {
        f64::NAN
    } else {
        discrepancy / excess_growth_term.abs()
    };
    Ok(DriftCheck {
        drift_integral,
        excess_growth_term,
        discrepancy,
        relative_discrepancy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostSample {
    pub mesh_days: f64,
    pub horizon_days: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostGroup {
    pub mesh_days: f64,
    pub horizon_days: f64,
    pub n: usize,
    pub mean_cost: f64,
}

/// Least-squares coefficient of a one-parameter law through the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LawFit {
    pub coef: f64,
    pub r2: f64,
}

impl LawFit {
    fn fit(xs: &[f64], ys: &[f64]) -> Self {
        let coef = stats::fit_through_origin(xs, ys);
        let fitted: Vec<f64> = xs.iter().map(|x| coef * x).collect();
        Self {
            coef,
            r2: stats::r_squared(ys, &fitted),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HorizonScaling {
    pub mesh_days: f64,
    /// `E[C_T] = a sqrt(T)`.
    pub sqrt: LawFit,
    /// `E[C_T] = a T`.
    pub linear: LawFit,
    /// Slope of `log E[C_T]` on `log T`; `None` with fewer than two horizons.
    pub exponent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeshScaling {
    pub horizon_days: f64,
    /// Slope of `log E[C_T]` on `log mesh`.
    pub exponent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostBoundFit {
    pub groups: Vec<CostGroup>,
    /// All mean costs are zero; fits are meaningless.
    pub degenerate: bool,
    /// `E[C_T] = a T / sqrt(mesh)` over all groups.
    pub t_over_sqrt_mesh: LawFit,
    /// `E[C_T] = K sqrt(T / mesh)` over all groups; `K` feeds the mesh threshold.
    pub sqrt_t_over_mesh: LawFit,
    pub per_mesh: Vec<HorizonScaling>,
    pub per_horizon: Vec<MeshScaling>,
}

impl CostBoundFit {
    pub fn k_hat(&self) -> f64 {
        self.sqrt_t_over_mesh.coef
    }
}

pub const MIN_LEDGERS_PER_GROUP: usize = 100;

fn log_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 || ys.iter().any(|y| *y <= 0.0) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    Some(stats::linear_regression(&lx, &ly).1)
}

/// Fits the cost-growth laws over groups of ledgers sharing `(mesh, T)`.
pub fn cost_bound_diagnostic(samples: &[CostSample]) -> Result<CostBoundFit> {
    let mut grouped: BTreeMap<(u64, u64), Vec<f64>> = BTreeMap::new();
    for s in samples {
        grouped
            .entry((s.mesh_days.to_bits(), s.horizon_days.to_bits()))
            .or_default()
            .push(s.cost);
    }
    if grouped.is_empty() {
        return Err(Error::InsufficientSample {
            needed: MIN_LEDGERS_PER_GROUP,
            got: 0,
        });
    }
    let mut groups = Vec::with_capacity(grouped.len());
    for ((mesh, horizon), costs) in &grouped {
        if costs.len() < MIN_LEDGERS_PER_GROUP {
            return Err(Error::InsufficientSample {
                needed: MIN_LEDGERS_PER_GROUP,
                got: costs.len(),
            });
        }
        groups.push(CostGroup {
            mesh_days: f64::from_bits(*mesh),
            horizon_days: f64::from_bits(*horizon),
            n: costs.len(),
            mean_cost: stats::mean(costs),
        });
    }
    let degenerate = groups.iter().all(|g| g.mean_cost == 0.0);
    let ys: Vec<f64> = groups.iter().map(|g| g.mean_cost).collect();
    let x_lin: Vec<f64> = groups.iter().map(|g| g.horizon_days / g.mesh_days.sqrt()).collect();
    let x_sqrt: Vec<f64> = groups
        .iter()
        .map(|g| (g.horizon_days / g.mesh_days).sqrt())
        .collect();

    let mut meshes: Vec<f64> = groups.iter().map(|g| g.mesh_days).collect();
    meshes.dedup();
    let mut per_mesh = Vec::new();
    let mut mesh_keys: Vec<u64> = groups.iter().map(|g| g.mesh_days.to_bits()).collect();
    mesh_keys.sort();
    mesh_keys.dedup();
    for key in mesh_keys {
        let sel: Vec<&CostGroup> = groups.iter().filter(|g| g.mesh_days.to_bits() == key).collect();
        let t: Vec<f64> = sel.iter().map(|g| g.horizon_days).collect();
        let y: Vec<f64> = sel.iter().map(|g| g.mean_cost).collect();
        let sqrt_t: Vec<f64> = t.iter().map(|x| x.sqrt()).collect();
        per_mesh.push(HorizonScaling {
            mesh_days: f64::from_bits(key),
            sqrt: LawFit::fit(&sqrt_t, &y),
            linear: LawFit::fit(&t, &y),
            exponent: log_slope(&t, &y),
        });
    }
    let mut horizon_keys: Vec<u64> = groups.iter().map(|g| g.horizon_days.to_bits()).collect();
    horizon_keys.sort();
    horizon_keys.dedup();
    let per_horizon = horizon_keys
        .into_iter()
        .map(|key| {
            let sel: Vec<&CostGroup> =
                groups.iter().filter(|g| g.horizon_days.to_bits() == key).collect();
            let mesh: Vec<f64> = sel.iter().map(|g| g.mesh_days).collect();
            let y: Vec<f64> = sel.iter().map(|g| g.mean_cost).collect();
            MeshScaling {
                horizon_days: f64::from_bits(key),
                exponent: log_slope(&mesh, &y),
            }
        })
        .collect();

    Ok(CostBoundFit {
        t_over_sqrt_mesh: LawFit::fit(&x_lin, &ys),
        sqrt_t_over_mesh: LawFit::fit(&x_sqrt, &ys),
        groups,
        degenerate,
        per_mesh,
        per_horizon,
    })
}

/// `(eps / (2 K))^2`.
pub fn mesh_threshold_estimate(eps: f64, k_hat: f64) -> Result<f64> {
    if !(eps > 0.0 && k_hat > 0.0 && eps.is_finite() && k_hat.is_finite()) {
        return Err(Error::domain(format!(
            "mesh threshold needs eps > 0 and K > 0, got ({eps}, {k_hat})"
        )));
    }
    Ok((eps / (2.0 * k_hat)).powi(2))
}

/// Diversity floor as the 5th percentile of observed `gamma*` values.
pub fn estimate_diversity_floor(gammas: &[f64]) -> Result<f64> {
    if gammas.is_empty() {
        return Err(Error::InsufficientSample { needed: 1, got: 0 });
    }
    let mut sorted = gammas.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(stats::quantile_sorted(&sorted, 0.05))
}

/// Whether `G` is concave at every sampled grid point of `market`.
pub fn generator_concave_on_path(generator: &GeneratorSpec, market: &MarketPath, stride: usize) -> bool {
    (0..=market.n_steps())
        .step_by(stride.max(1))
        .all(|k| generator.is_concave_at(market.weights(k)))
}
