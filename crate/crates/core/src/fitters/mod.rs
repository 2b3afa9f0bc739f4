//! Model-fitting procedures producing `theta_hat` for each decision
//! class in the experiments.

pub mod chi2;

pub use chi2::{chi2_worst_case_value, chi2_worst_case_weights, fit_dro_chi2};

use std::collections::BTreeMap;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numkit::{dot, empirical_quantile, mean, norm2, variance, Matrix};
use crate::problems::builtin::{LinearRule, NewsvendorNormalRule, NewsvendorScaleRule};
use crate::problems::DecisionRule;

/// A fitted parameter with solver diagnostics.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_hat: Vec<f64>,
    pub method: &'static str,
    pub diagnostics: BTreeMap<String, f64>,
}

impl FitResult {
    fn new(theta_hat: Vec<f64>, method: &'static str) -> Result<Self> {
        if theta_hat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver(format!("{method} produced a non-finite parameter")));
        }
        Ok(Self {
            theta_hat,
            method,
            diagnostics: BTreeMap::new(),
        })
    }

    fn with(mut self, key: &str, value: f64) -> Self {
        self.diagnostics.insert(key.into(), value);
        self
    }
}

/// Sample-average newsvendor decision: the empirical critical-ratio
/// quantile `theta_hat = F_n^{-1}(1 - c/p)`.
pub fn fit_saa_newsvendor(data: &Dataset, p: f64, c: f64) -> Result<FitResult> {
    let demands = data.scalars()?;
    let q = 1.0 - c / p;
    let theta = empirical_quantile(&demands, q)?;
    FitResult::new(vec![theta], "saa_newsvendor")
}

/// Divisor convention for the variance estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceDivisor {
    /// Divide by `n`; pairs exactly with the moment influence function
    /// `(xi - mu)^2 - var`.
    N,
    /// Divide by `n - 1`, the convention of the newsvendor parametric
    /// fits.
    NMinus1,
}

/// Per-coordinate mean and variance, stacked as
/// `theta = (mu_1..d, var_1..d)`.
pub fn fit_moments(data: &Dataset, divisor: VarianceDivisor) -> Result<FitResult> {
    let n = data.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let d = data.dim_xi();
    let mut theta = Vec::with_capacity(2 * d);
    for k in 0..d {
        theta.push(mean(&data.column(k)));
    }
    let div = match divisor {
        VarianceDivisor::N => n,
        VarianceDivisor::NMinus1 => n - 1,
    };
    for k in 0..d {
        theta.push(variance(&data.column(k), div));
    }
    FitResult::new(theta, "moments")
}

/// Estimate-then-optimize newsvendor decision families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EtoKind {
    Normal,
    Exponential,
    /// Exponential model solved jointly with the optimization step
    /// (operational statistics).
    ExpOs,
}

/// Binds a fitted moment parameter to its newsvendor decision rule.
/// Returns the rule together with the parameter slice it consumes:
/// `(mu, var)` for the normal rule, `(mu,)` for the exponential kinds.
pub fn eto_decision(
    kind: EtoKind,
    fit: &FitResult,
    p: f64,
    c: f64,
    n: usize,
) -> Result<(Box<dyn DecisionRule>, Vec<f64>)> {
    if fit.theta_hat.len() < 2 {
        return Err(Error::Input("eto_decision expects a (mu, var) moment fit".into()));
    }
    let mu = fit.theta_hat[0];
    let var = fit.theta_hat[1];
    match kind {
        EtoKind::Normal => {
            if var < 0.0 {
                return Err(Error::Domain(format!("negative variance {var}")));
            }
            Ok((Box::new(NewsvendorNormalRule::new(p, c)?), vec![mu, var]))
        }
        EtoKind::Exponential => {
            if mu <= 0.0 {
                return Err(Error::Domain(format!(
                    "exponential rule needs a positive mean, got {mu}"
                )));
            }
            Ok((Box::new(NewsvendorScaleRule::exponential(p, c)), vec![mu]))
        }
        EtoKind::ExpOs => {
            if mu <= 0.0 {
                return Err(Error::Domain(format!(
                    "operational-statistics rule needs a positive mean, got {mu}"
                )));
            }
            Ok((Box::new(NewsvendorScaleRule::exp_os(p, c, n)), vec![mu]))
        }
    }
}

/// Portfolio policy spaces solved in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortfolioClass {
    /// One weight per asset.
    Full,
    /// One shared weight.
    Uniform,
    /// One weight per asset block.
    Block,
}

impl PortfolioClass {
    pub fn label(&self) -> &'static str {
        match self {
            PortfolioClass::Full => "saa",
            PortfolioClass::Uniform => "saa_u",
            PortfolioClass::Block => "saa_b",
        }
    }

    pub fn rule(&self, dim_x: usize) -> Result<LinearRule> {
        Ok(match self {
            PortfolioClass::Full => LinearRule::identity(dim_x),
            PortfolioClass::Uniform => LinearRule::uniform(dim_x),
            PortfolioClass::Block => LinearRule::block(dim_x)?,
        })
    }
}

/// Closed-form minimizer of the empirical portfolio cost over `x = U theta`:
/// the first-order condition is the linear system
/// `[(2/n) sum (U^T w_i)(U^T w_i)^T + 2 l2 U^T U] theta = (l1/n) U^T sum xi_i`
/// with `w_i = xi_i - mu_c`.
pub fn fit_portfolio(
    class: PortfolioClass,
    data: &Dataset,
    lambda1: f64,
    lambda2: f64,
    centering: Vec<f64>,
) -> Result<FitResult> {
    let n = data.len();
    if n == 0 {
        return Err(Error::Input("fit_portfolio needs a nonempty dataset".into()));
    }
    let d = data.dim_xi();
    if centering.len() != d {
        return Err(Error::Dimension(format!(
            "centering has length {} but data dimension is {d}",
            centering.len()
        )));
    }
    let rule = class.rule(d)?;
    let basis = rule.basis();
    let k = basis.cols();
    let bt = basis.transpose();
    let mut gram = bt.matmul(basis)?.scale(2.0 * lambda2);
    let mut rhs = vec![0.0; k];
    for i in 0..n {
        let w: Vec<f64> = data
            .xi(i)
            .iter()
            .zip(centering.iter())
            .map(|(x, c)| x - c)
            .collect();
        let v = bt.matvec(&w)?;
        crate::problems::outer_into(&mut gram, &v, &v, 2.0 / n as f64);
        let bx = bt.matvec(data.xi(i))?;
        for (r, b) in rhs.iter_mut().zip(&bx) {
            *r += lambda1 * b / n as f64;
        }
    }
    let theta = gram
        .solve(&rhs)
        .map_err(|_| Error::Rank("portfolio first-order system is singular".into()))?;
    let resid: Vec<f64> = gram
        .matvec(&theta)?
        .iter()
        .zip(&rhs)
        .map(|(a, b)| a - b)
        .collect();
    Ok(FitResult::new(theta, class.label())?.with("fo_residual", norm2(&resid)))
}

/// Least squares / ridge fit by normal equations:
/// minimizer of `sum (y_i - theta^T u_i)^2 + alpha |theta|^2`.
pub fn fit_ols(features: &Matrix, targets: &[f64], ridge_alpha: f64) -> Result<FitResult> {
    let n = features.rows();
    let d = features.cols();
    if targets.len() != n {
        return Err(Error::Dimension(format!(
            "{n} feature rows but {} targets",
            targets.len()
        )));
    }
    if ridge_alpha < 0.0 {
        return Err(Error::Domain(format!("ridge penalty must be nonnegative, got {ridge_alpha}")));
    }
    let mut gram = Matrix::from_fn(d, d, |i, j| if i == j { ridge_alpha } else { 0.0 });
    let mut rhs = vec![0.0; d];
    for i in 0..n {
        let u = features.row(i);
        crate::problems::outer_into(&mut gram, u, u, 1.0);
        for (r, &x) in rhs.iter_mut().zip(u) {
            *r += targets[i] * x;
        }
    }
    let theta = gram.solve(&rhs).map_err(|_| {
        Error::Rank("Gram matrix is singular; add a ridge penalty or more data".into())
    })?;
    let resid: Vec<f64> = gram
        .matvec(&theta)?
        .iter()
        .zip(&rhs)
        .map(|(a, b)| a - b)
        .collect();
    Ok(FitResult::new(theta, "ols")?.with("fo_residual", norm2(&resid)))
}

/// Evaluates the per-sample portfolio losses `h(U theta; xi_i)` used by
/// the distributionally robust fit.
pub(crate) fn portfolio_losses(
    data: &Dataset,
    basis: &Matrix,
    theta: &[f64],
    lambda1: f64,
    lambda2: f64,
    centering: &[f64],
) -> Result<Vec<f64>> {
    let x = basis.matvec(theta)?;
    let xx = dot(&x, &x);
    Ok((0..data.len())
        .map(|i| {
            let xi = data.xi(i);
            let wx: f64 = xi
                .iter()
                .zip(centering.iter())
                .zip(x.iter())
                .map(|((v, c), xj)| (v - c) * xj)
                .sum();
            wx * wx + lambda2 * xx - lambda1 * dot(xi, &x)
        })
        .collect())
}
