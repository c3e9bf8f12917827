//! Portfolio generators, the functionally generated weight map and the two
//! excess-growth functionals.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weights at or below this are treated as the simplex boundary.
pub const BOUNDARY_EPS: f64 = 1e-12;

/// A positive `C^2` function on the open simplex.
pub trait Generator: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn value(&self, mu: &[f64]) -> f64;

    fn grad(&self, mu: &[f64]) -> Vec<f64>;

    fn hessian(&self, mu: &[f64]) -> DMatrix<f64>;

    /// `sum_ij (d2_ij G / G)(mu) mu_i mu_j tau_ij`.
    fn curvature(&self, mu: &[f64], tau: &DMatrix<f64>) -> f64 {
        let h = self.hessian(mu);
        let g = self.value(mu);
        let d = mu.len();
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                acc += h[(i, j)] * mu[i] * mu[j] * tau[(i, j)];
            }
        }
        acc / g
    }

    /// Same quadratic form against the covariance of the market weights,
    /// `tau^mu_ij = tau_ij - (tau mu)_i - (tau mu)_j + mu' tau mu`.
    fn relative_curvature(&self, mu: &[f64], tau: &DMatrix<f64>) -> f64 {
        let h = self.hessian(mu);
        let g = self.value(mu);
        let d = mu.len();
        let tm = tau_times(tau, mu);
        let mtm: f64 = mu.iter().zip(&tm).map(|(a, b)| a * b).sum();
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                let rel = tau[(i, j)] - tm[i] - tm[j] + mtm;
                acc += h[(i, j)] * mu[i] * mu[j] * rel;
            }
        }
        acc / g
    }
}

fn tau_times(tau: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let d = v.len();
    (0..d).map(|i| (0..d).map(|j| tau[(i, j)] * v[j]).sum()).collect()
}

/// `G_p(mu) = sum_i mu_i^p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diversity {
    pub p: f64,
}

impl Generator for Diversity {
    fn name(&self) -> &'static str {
        "diversity"
    }

    fn value(&self, mu: &[f64]) -> f64 {
        mu.iter().map(|m| m.powf(self.p)).sum()
    }

    fn grad(&self, mu: &[f64]) -> Vec<f64> {
        mu.iter().map(|m| self.p * m.powf(self.p - 1.0)).collect()
    }

    fn hessian(&self, mu: &[f64]) -> DMatrix<f64> {
        let p = self.p;
        let diag: Vec<f64> = mu.iter().map(|m| p * (p - 1.0) * m.powf(p - 2.0)).collect();
        DMatrix::from_diagonal(&diag.into())
    }

    fn curvature(&self, mu: &[f64], tau: &DMatrix<f64>) -> f64 {
        let p = self.p;
        let mut num = 0.0;
        let mut g = 0.0;
        for (i, m) in mu.iter().enumerate() {
            let mp = m.powf(p);
            g += mp;
            num += mp * tau[(i, i)];
        }
        p * (p - 1.0) * num / g
    }

    fn relative_curvature(&self, mu: &[f64], tau: &DMatrix<f64>) -> f64 {
        let p = self.p;
        let tm = tau_times(tau, mu);
        let mtm: f64 = mu.iter().zip(&tm).map(|(a, b)| a * b).sum();
        let mut num = 0.0;
        let mut g = 0.0;
        for (i, m) in mu.iter().enumerate() {
            let mp = m.powf(p);
            g += mp;
            num += mp * (tau[(i, i)] - 2.0 * tm[i] + mtm);
        }
        p * (p - 1.0) * num / g
    }
}

/// `G(mu) = prod_i mu_i^{mu_i}`. Convex on the simplex; the weights it
/// generates can be negative for small `mu_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProductEntropy;

impl ProductEntropy {
    fn log_value(mu: &[f64]) -> f64 {
        mu.iter().map(|m| m * m.ln()).sum()
    }
}

impl Generator for ProductEntropy {
    fn name(&self) -> &'static str {
        "entropy"
    }

    fn value(&self, mu: &[f64]) -> f64 {
        Self::log_value(mu).exp()
    }

    fn grad(&self, mu: &[f64]) -> Vec<f64> {
        let g = self.value(mu);
        mu.iter().map(|m| g * (1.0 + m.ln())).collect()
    }

    fn hessian(&self, mu: &[f64]) -> DMatrix<f64> {
        let g = self.value(mu);
        let d = mu.len();
        DMatrix::from_fn(d, d, |i, j| {
            let cross = (1.0 + mu[i].ln()) * (1.0 + mu[j].ln());
            g * if i == j { cross + 1.0 / mu[i] } else { cross }
        })
    }

    fn curvature(&self, mu: &[f64], tau: &DMatrix<f64>) -> f64 {
        // (mu o l)' tau (mu o l) + sum_i mu_i tau_ii, with l_i = 1 + ln mu_i.
        let v: Vec<f64> = mu.iter().map(|m| m * (1.0 + m.ln())).collect();
        let tv = tau_times(tau, &v);
        let quad: f64 = v.iter().zip(&tv).map(|(a, b)| a * b).sum();
        let diag: f64 = mu.iter().enumerate().map(|(i, m)| m * tau[(i, i)]).sum();
        quad + diag
    }
}

/// Shannon entropy `H(mu) = -sum_i mu_i ln mu_i`; strictly concave.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GibbsEntropy;

impl Generator for GibbsEntropy {
    fn name(&self) -> &'static str {
        "gibbs_entropy"
    }

    fn value(&self, mu: &[f64]) -> f64 {
        -mu.iter().map(|m| m * m.ln()).sum::<f64>()
    }

    fn grad(&self, mu: &[f64]) -> Vec<f64> {
        mu.iter().map(|m| -(1.0 + m.ln())).collect()
    }

    fn hessian(&self, mu: &[f64]) -> DMatrix<f64> {
        let diag: Vec<f64> = mu.iter().map(|m| -1.0 / m).collect();
        DMatrix::from_diagonal(&diag.into())
    }

    fn curvature(&self, mu: &[f64], tau: &DMatrix<f64>) -> f64 {
        let num: f64 = mu.iter().enumerate().map(|(i, m)| m * tau[(i, i)]).sum();
        -num / self.value(mu)
    }
}

/// `G = 1`; generates the market portfolio.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Constant;

impl Generator for Constant {
    fn name(&self) -> &'static str {
        "constant"
    }

    fn value(&self, _mu: &[f64]) -> f64 {
        1.0
    }

    fn grad(&self, mu: &[f64]) -> Vec<f64> {
        vec![0.0; mu.len()]
    }

    fn hessian(&self, mu: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(mu.len(), mu.len())
    }

    fn curvature(&self, _mu: &[f64], _tau: &DMatrix<f64>) -> f64 {
        0.0
    }

    fn relative_curvature(&self, _mu: &[f64], _tau: &DMatrix<f64>) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    /// `pi_i proportional to mu_i^p` (diversity generators only).
    #[default]
    Direct,
    /// `pi_i = mu_i [d_i log G + 1 - sum_j mu_j d_j log G]`.
    FgpFormula,
}

/// A generator together with the rule that turns it into weights.
#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    generator: Arc<dyn Generator>,
    rule: WeightRule,
    exponent: Option<f64>,
}

impl GeneratorSpec {
    /// Diversity generator with the direct power rule.
    pub fn diversity(p: f64) -> Result<Self> {
        Self::diversity_with_rule(p, WeightRule::Direct)
    }

    pub fn diversity_with_rule(p: f64, rule: WeightRule) -> Result<Self> {
        if !(p.is_finite() && p > 0.0 && p <= 1.0) {
            return Err(Error::config(format!("diversity exponent must lie in (0, 1], got {p}")));
        }
        Ok(Self {
            generator: Arc::new(Diversity { p }),
            rule,
            exponent: Some(p),
        })
    }

    /// `prod mu_i^{mu_i}` through the functional-generation formula.
    pub fn entropy() -> Self {
        Self::custom(Arc::new(ProductEntropy))
    }

    pub fn gibbs_entropy() -> Self {
        Self::custom(Arc::new(GibbsEntropy))
    }

    /// The market portfolio (`G = 1`).
    pub fn market() -> Self {
        Self::custom(Arc::new(Constant))
    }

    pub fn custom(generator: Arc<dyn Generator>) -> Self {
        Self {
            generator,
            rule: WeightRule::FgpFormula,
            exponent: None,
        }
    }

    pub fn generator(&self) -> &dyn Generator {
        self.generator.as_ref()
    }

    pub fn name(&self) -> &'static str {
        self.generator.name()
    }

    pub fn rule(&self) -> WeightRule {
        self.rule
    }

    pub fn diversity_exponent(&self) -> Option<f64> {
        self.exponent
    }

    pub fn value(&self, mu: &[f64]) -> f64 {
        self.generator.value(mu)
    }

    pub fn weights(&self, mu: &[f64]) -> Result<Vec<f64>> {
        match (self.rule, self.exponent) {
            (WeightRule::Direct, Some(p)) => diversity_weights(p, mu),
            _ => fgp_weights(self.generator.as_ref(), mu),
        }
    }

    /// Whether the Hessian at `mu` is negative semidefinite (up to rounding).
    pub fn is_concave_at(&self, mu: &[f64]) -> bool {
        let h = self.generator.hessian(mu);
        let scale = h.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if scale == 0.0 {
            return true;
        }
        let eig = h.symmetric_eigen();
        eig.eigenvalues.iter().all(|l| *l <= 1e-12 * scale)
    }
}

pub(crate) fn check_interior(mu: &[f64]) -> Result<()> {
    if mu.is_empty() {
        return Err(Error::domain("empty weight vector"));
    }
    if let Some(m) = mu.iter().find(|m| !(m.is_finite() && **m > BOUNDARY_EPS)) {
        return Err(Error::domain(format!(
            "market weight {m} is on or outside the simplex boundary (eps = {BOUNDARY_EPS})"
        )));
    }
    let total: f64 = mu.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!("market weights sum to {total}, not 1")));
    }
    Ok(())
}

/// The functionally generated weights of `g` at `mu`, evaluated literally.
pub fn fgp_weights(g: &dyn Generator, mu: &[f64]) -> Result<Vec<f64>> {
    check_interior(mu)?;
    let value = g.value(mu);
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::domain(format!("generator {} is {value} at mu", g.name())));
    }
    let dlog: Vec<f64> = g.grad(mu).into_iter().map(|x| x / value).collect();
    let mean: f64 = mu.iter().zip(&dlog).map(|(m, l)| m * l).sum();
    Ok(mu.iter().zip(&dlog).map(|(m, l)| m * (l + 1.0 - mean)).collect())
}

/// `pi_i = mu_i^p / sum_j mu_j^p`.
pub fn diversity_weights(p: f64, mu: &[f64]) -> Result<Vec<f64>> {
    if !(p.is_finite() && p > 0.0) {
        return Err(Error::domain(format!("diversity exponent must be > 0, got {p}")));
    }
    check_interior(mu)?;
    let powered: Vec<f64> = mu.iter().map(|m| m.powf(p)).collect();
    let total: f64 = powered.iter().sum();
    Ok(powered.into_iter().map(|x| x / total).collect())
}

pub fn entropy_weights(mu: &[f64]) -> Result<Vec<f64>> {
    fgp_weights(&ProductEntropy, mu)
}

/// `0.5 sum_{i<j} (mu_i - mu_j)^2`, via `sum_{i<j} (a_i - a_j)^2 = d sum_i (a_i - mean)^2`.
pub fn excess_growth_pairwise(mu: &[f64]) -> f64 {
    let d = mu.len() as f64;
    if mu.is_empty() {
        return 0.0;
    }
    let mean = mu.iter().sum::<f64>() / d;
    0.5 * d * mu.iter().map(|m| (m - mean).powi(2)).sum::<f64>()
}

/// `0.5 (sum_i pi_i tau_ii - pi' tau pi)`.
pub fn excess_growth_classical(pi: &[f64], tau: &DMatrix<f64>) -> Result<f64> {
    let d = pi.len();
    if tau.nrows() != d || tau.ncols() != d {
        return Err(Error::LengthMismatch {
            expected: d,
            found: tau.nrows(),
        });
    }
    let diag: f64 = (0..d).map(|i| pi[i] * tau[(i, i)]).sum();
    let quad: f64 = tau_times(tau, pi).iter().zip(pi).map(|(a, b)| a * b).sum();
    Ok(0.5 * (diag - quad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn constant_generator_gives_market() {
        let mu = [0.5, 0.3, 0.2];
        close(&GeneratorSpec::market().weights(&mu).unwrap(), &mu, 0.0);
    }

    #[test]
    fn symmetric_generators_keep_uniform_weights() {
        let mu = [0.25; 4];
        for spec in [
            GeneratorSpec::diversity(0.7).unwrap(),
            GeneratorSpec::diversity_with_rule(0.7, WeightRule::FgpFormula).unwrap(),
            GeneratorSpec::entropy(),
            GeneratorSpec::gibbs_entropy(),
        ] {
            close(&spec.weights(&mu).unwrap(), &mu, 1e-15);
        }
    }

    #[test]
    fn diversity_fgp_formula_matches_hand_evaluation() {
        // p = 0.7, mu = (0.7, 0.2, 0.1); reference values from 30-digit
        // arithmetic of the bracket with d_i log G = p mu_i^{p-1} / G.
        let mu = [0.7, 0.2, 0.1];
        let expected = [0.628_617_872_729_806_9, 0.234_168_710_075_637_4, 0.137_213_417_194_555_7];
        let got = fgp_weights(&Diversity { p: 0.7 }, &mu).unwrap();
        close(&got, &expected, 1e-14);
    }

    #[test]
    fn diversity_direct_matches_power_normalization() {
        let mu = [0.7, 0.2, 0.1];
        let expected = [0.598_025_532_471_152_7, 0.248_812_442_965_196_3, 0.153_162_024_563_651_0];
        close(&diversity_weights(0.7, &mu).unwrap(), &expected, 1e-14);
        close(&diversity_weights(1.0, &mu).unwrap(), &mu, 1e-15);
        assert!(diversity_weights(0.0, &mu).is_err());
        assert!(diversity_weights(-0.5, &mu).is_err());
    }

    #[test]
    fn entropy_two_asset_hand_evaluation() {
        // d_i log G = 1 + ln mu_i; pi_i = mu_i (1 + ln mu_i + H), H = -sum mu ln mu.
        let mu = [0.8, 0.2];
        let expected = [1.021_807_097_779_182_5, -0.021_807_097_779_182_5];
        close(&entropy_weights(&mu).unwrap(), &expected, 1e-14);
    }

    #[test]
    fn boundary_weights_are_rejected() {
        let eps = BOUNDARY_EPS;
        let err = entropy_weights(&[1.0 - eps, eps]).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
        assert!(diversity_weights(0.5, &[1.0, 0.0]).is_err());
        assert!(fgp_weights(&GibbsEntropy, &[0.5, 0.6]).is_err());
    }

    #[test]
    fn pairwise_excess_growth_examples() {
        assert_eq!(excess_growth_pairwise(&[0.5, 0.5]), 0.0);
        assert!((excess_growth_pairwise(&[0.7, 0.3]) - 0.08).abs() < 1e-15);
        for d in [2usize, 3, 7, 50] {
            let mu = vec![1.0 / d as f64; d];
            assert!(excess_growth_pairwise(&mu).abs() < 1e-15);
        }
        // double-sum oracle
        let mu = [0.1, 0.25, 0.05, 0.6];
        let mut acc = 0.0;
        for i in 0..4 {
            for j in (i + 1)..4 {
                acc += (mu[i] - mu[j]) * (mu[i] - mu[j]);
            }
        }
        assert!((excess_growth_pairwise(&mu) - 0.5 * acc).abs() < 1e-15);
    }

    #[test]
    fn classical_excess_growth_examples() {
        let zero = DMatrix::zeros(3, 3);
        assert_eq!(excess_growth_classical(&[0.2, 0.3, 0.5], &zero).unwrap(), 0.0);
        let tau = DMatrix::from_diagonal(&vec![0.04, 0.09, 0.01].into());
        assert_eq!(excess_growth_classical(&[1.0, 0.0, 0.0], &tau).unwrap(), 0.0);
        let tau2 = DMatrix::from_diagonal(&vec![0.04, 0.04].into());
        let g = excess_growth_classical(&[0.5, 0.5], &tau2).unwrap();
        assert!((g - 0.01).abs() < 1e-16);
        assert!(excess_growth_classical(&[0.5, 0.5], &tau).is_err());
    }

    #[test]
    fn concavity_flags() {
        let mu = [0.5, 0.3, 0.2];
        assert!(GeneratorSpec::diversity(0.7).unwrap().is_concave_at(&mu));
        assert!(GeneratorSpec::gibbs_entropy().is_concave_at(&mu));
        assert!(GeneratorSpec::market().is_concave_at(&mu));
        assert!(!GeneratorSpec::entropy().is_concave_at(&mu));
    }

    #[test]
    fn curvature_overrides_match_dense_hessian() {
        let mu = [0.4, 0.35, 0.15, 0.1];
        let s = DMatrix::from_row_slice(4, 4, &[
            0.2, 0.01, 0.0, 0.03, 0.0, 0.3, 0.02, 0.0, 0.05, 0.0, 0.25, 0.01, 0.0, 0.04, 0.0, 0.15,
        ]);
        let tau = &s * s.transpose();
        let gens: [&dyn Generator; 3] = [&Diversity { p: 0.6 }, &ProductEntropy, &GibbsEntropy];
        for g in gens {
            let h = g.hessian(&mu);
            let v = g.value(&mu);
            let mut dense = 0.0;
            let mut rel = 0.0;
            let tm: Vec<f64> = (0..4).map(|i| (0..4).map(|j| tau[(i, j)] * mu[j]).sum()).collect();
            let mtm: f64 = (0..4).map(|i| mu[i] * tm[i]).sum();
            for i in 0..4 {
                for j in 0..4 {
                    dense += h[(i, j)] * mu[i] * mu[j] * tau[(i, j)];
                    rel += h[(i, j)] * mu[i] * mu[j] * (tau[(i, j)] - tm[i] - tm[j] + mtm);
                }
            }
            assert!((g.curvature(&mu, &tau) - dense / v).abs() < 1e-14, "{}", g.name());
            assert!((g.relative_curvature(&mu, &tau) - rel / v).abs() < 1e-14, "{}", g.name());
        }
    }
}
