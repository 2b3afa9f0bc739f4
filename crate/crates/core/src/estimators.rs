//! The debiased performance estimator family.
//!
//! Every estimator decomposes as `total = apparent + correction`, where
//! the apparent term is the in-sample average cost of the fitted
//! decision and the correction removes its optimistic bias:
//!
//! * [`oic_general`] — influence-function form,
//!   `-(1/n^2) sum grad_theta h(x*(theta_hat); xi_i)^T IF(xi_i)`;
//! * [`oic_ierm`] — the trace form `(1/n) Tr[I_h^{-1} J_h]` for fits
//!   that minimize the empirical composed cost;
//! * [`oic_constrained`] — the trace form projected onto the active
//!   constraint manifold;
//! * [`p_oic`] — evaluation under the fitted parametric model plus the
//!   `(1/2n) Tr[I Psi]` curvature term;
//! * [`oic_newsvendor_saa_kde`] — the quantile-decision correction
//!   `c (p - c) / (n p f_hat(theta_hat))` with a kernel density plug-in.

use std::collections::BTreeMap;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::influence::{CovarianceEstimate, InfluenceSet};
use crate::numkit::{dot, kde_density, norm2, Matrix, PINV_REL_TOL};
use crate::problems::{
    compose_grad_theta, compose_hess_theta, ConstraintSet, CostModel, DecisionRule,
};

/// First-order-condition residual beyond `1e-6 (1 + |theta|)` marks the
/// trace formula as suspect; the estimate is still returned, with a
/// warning in the diagnostics.
pub const FO_RESIDUAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Empirical,
    OicGeneral,
    OicIerm,
    OicConstrained,
    POic,
    NewsvendorSaaKde,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Empirical => "empirical",
            Method::OicGeneral => "oic_general",
            Method::OicIerm => "oic_ierm",
            Method::OicConstrained => "oic_constrained",
            Method::POic => "poic",
            Method::NewsvendorSaaKde => "oic_saa_kde",
        }
    }
}

/// Estimator by-products: named scalars, the detected active set, and
/// warnings raised while computing.
#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub values: BTreeMap<String, f64>,
    pub active_set: Option<Vec<usize>>,
    pub warnings: Vec<String>,
}

/// A point estimate decomposed into apparent cost and correction.
#[derive(Debug, Clone)]
pub struct EvalEstimate {
    pub apparent: f64,
    pub correction: f64,
    pub total: f64,
    pub method: Method,
    pub diagnostics: Diagnostics,
}

impl EvalEstimate {
    fn new(apparent: f64, correction: f64, method: Method, diagnostics: Diagnostics) -> Self {
        Self {
            apparent,
            correction,
            total: apparent + correction,
            method,
            diagnostics,
        }
    }
}

/// In-sample average cost of the fitted decision,
/// `(1/n) sum h(x*(theta_hat [, z_i]); xi_i)`.
pub fn apparent_cost(
    cost: &dyn CostModel,
    rule: &dyn DecisionRule,
    theta_hat: &[f64],
    data: &Dataset,
) -> Result<f64> {
    let n = data.len();
    if n == 0 {
        return Err(Error::Input("apparent cost of empty data".into()));
    }
    let mut acc = 0.0;
    if data.contexts().is_some() {
        for i in 0..n {
            let x = rule.value(theta_hat, data.z(i));
            acc += cost.value(&x, data.xi(i));
        }
    } else {
        let x = rule.value(theta_hat, None);
        for i in 0..n {
            acc += cost.value(&x, data.xi(i));
        }
    }
    Ok(acc / n as f64)
}

/// General influence-function estimator:
/// `total = apparent - (1/n^2) sum grad_theta h(x*(theta_hat [, z_i]); xi_i)^T IF(xi_i)`.
///
/// Gradients at kinks of piecewise-smooth costs follow the cost's
/// subgradient convention.
pub fn oic_general(
    cost: &dyn CostModel,
    rule: &dyn DecisionRule,
    theta_hat: &[f64],
    data: &Dataset,
    inf: &InfluenceSet,
) -> Result<EvalEstimate> {
    let n = data.len();
    if inf.len() != n {
        return Err(Error::Dimension(format!(
            "{n} samples but {} influence vectors",
            inf.len()
        )));
    }
    if inf.dim_theta() != rule.dim_theta() {
        return Err(Error::Dimension(format!(
            "rule has {} parameters but influence vectors have {}",
            rule.dim_theta(),
            inf.dim_theta()
        )));
    }
    let apparent = apparent_cost(cost, rule, theta_hat, data)?;
    let mut acc = 0.0;
    for i in 0..n {
        let g = compose_grad_theta(cost, rule, theta_hat, data.xi(i), data.z(i))?;
        acc += dot(&g, inf.vector(i));
    }
    let correction = -acc / (n as f64 * n as f64);
    Ok(EvalEstimate::new(
        apparent,
        correction,
        Method::OicGeneral,
        Diagnostics::default(),
    ))
}

/// Policy knobs for the trace-form estimator.
#[derive(Debug, Clone, Copy, Default)]
pub struct IermOptions {
    /// Use the pseudo-inverse when the averaged Hessian is singular
    /// instead of failing.
    pub pinv_fallback: bool,
}

struct ComposedMoments {
    i_h: Matrix,
    j_h: Matrix,
    grad_mean: Vec<f64>,
}

fn composed_moments(
    cost: &dyn CostModel,
    rule: &dyn DecisionRule,
    theta_hat: &[f64],
    data: &Dataset,
) -> Result<ComposedMoments> {
    let n = data.len();
    if n == 0 {
        return Err(Error::Input("estimator needs a nonempty dataset".into()));
    }
    let d = rule.dim_theta();
    let w = 1.0 / n as f64;
    let mut i_h = Matrix::zeros(d, d);
    let mut j_h = Matrix::zeros(d, d);
    let mut grad_mean = vec![0.0; d];
    for i in 0..n {
        let z = data.z(i);
        i_h.add_scaled(&compose_hess_theta(cost, rule, theta_hat, data.xi(i), z)?, w)?;
        let g = compose_grad_theta(cost, rule, theta_hat, data.xi(i), z)?;
        crate::problems::outer_into(&mut j_h, &g, &g, w);
        for (m, gi) in grad_mean.iter_mut().zip(&g) {
            *m += w * gi;
        }
    }
    Ok(ComposedMoments { i_h, j_h, grad_mean })
}

fn fo_diagnostics(theta_hat: &[f64], grad_mean: &[f64]) -> Diagnostics {
    let mut diag = Diagnostics::default();
    let residual = norm2(grad_mean);
    diag.values.insert("fo_residual".into(), residual);
    if residual > FO_RESIDUAL_TOL * (1.0 + norm2(theta_hat)) {
        diag.warnings.push(format!(
            "first-order residual {residual:.3e} exceeds tolerance; the trace \
             correction assumes theta_hat solves the empirical problem"
        ));
    }
    diag
}

/// Trace-form estimator for decisions fitted by minimizing the
/// empirical composed cost:
/// `total = apparent + (1/n) Tr[I_h^{-1} J_h]` with
/// `I_h = (1/n) sum hess_theta h` and `J_h = (1/n) sum grad grad^T`.
pub fn oic_ierm(
    cost: &dyn CostModel,
    rule: &dyn DecisionRule,
    theta_hat: &[f64],
    data: &Dataset,
    opts: IermOptions,
) -> Result<EvalEstimate> {
    let apparent = apparent_cost(cost, rule, theta_hat, data)?;
    let m = composed_moments(cost, rule, theta_hat, data)?;
    let mut diag = fo_diagnostics(theta_hat, &m.grad_mean);

    let d = rule.dim_theta();
    let condition = m.i_h.sym_condition().unwrap_or(f64::INFINITY);
    diag.values.insert("hessian_condition".into(), condition);
    let trace = if condition > 1e12 {
        if !opts.pinv_fallback {
            return Err(Error::Rank(format!(
                "averaged Hessian is singular (condition {condition:.2e}); \
                 enable the pseudo-inverse fallback to proceed"
            )));
        }
        m.i_h.pinv(PINV_REL_TOL)?.matmul(&m.j_h)?.trace()?
    } else {
        let lu = m.i_h.lu()?;
        let mut t = 0.0;
        for j in 0..d {
            let col: Vec<f64> = (0..d).map(|i| m.j_h[(i, j)]).collect();
            t += lu.solve(&col)?[j];
        }
        t
    };
    diag.values.insert("trace_penalty".into(), trace);
    let correction = trace / data.len() as f64;
    Ok(EvalEstimate::new(apparent, correction, Method::OicIerm, diag))
}

/// Trace-form estimator under inequality constraints. The active set is
/// detected by `|g_j(theta_hat)| <= active_tol`; its gradient rows `C`
/// define the tangent projector `P = I - C^T (C C^T)^+ C`, the
/// multipliers solve `C^T alpha = -grad_mean` in least squares, and
///
/// `correction = (1/n) Tr[P (I_h + sum alpha_j hess g_j)^+ P J_h]`.
///
/// With no active constraints this reduces to [`oic_ierm`] exactly.
pub fn oic_constrained(
    cost: &dyn CostModel,
    rule: &dyn DecisionRule,
    theta_hat: &[f64],
    data: &Dataset,
    constraints: &ConstraintSet,
) -> Result<EvalEstimate> {
    let active = constraints.active_set(theta_hat);
    if active.is_empty() {
        let mut est = oic_ierm(cost, rule, theta_hat, data, IermOptions::default())?;
        est.method = Method::OicConstrained;
        est.diagnostics.active_set = Some(Vec::new());
        return Ok(est);
    }

    let apparent = apparent_cost(cost, rule, theta_hat, data)?;
    let m = composed_moments(cost, rule, theta_hat, data)?;
    let mut diag = fo_diagnostics(theta_hat, &m.grad_mean);
    let d = rule.dim_theta();
    let k = active.len();

    let mut c = Matrix::zeros(k, d);
    for (row, &j) in active.iter().enumerate() {
        let g = constraints.constraints[j].grad_theta(theta_hat);
        for (col, v) in g.iter().enumerate() {
            c[(row, col)] = *v;
        }
    }
    let cct_pinv = c.matmul(&c.transpose())?.pinv(PINV_REL_TOL)?;
    // P = I - C^T (C C^T)^+ C
    let proj = Matrix::identity(d).sub(
        &c.transpose().matmul(&cct_pinv)?.matmul(&c)?,
    )?;
    let idem = proj.matmul(&proj)?.sub(&proj)?.frob_norm();
    diag.values.insert("projector_idempotence".into(), idem);

    // multipliers: least squares of C^T alpha = -grad_mean
    let rhs: Vec<f64> = c.matvec(&m.grad_mean)?.iter().map(|v| -v).collect();
    let alpha = cct_pinv.matvec(&rhs)?;
    for (i, a) in alpha.iter().enumerate() {
        diag.values.insert(format!("alpha_{}", active[i]), *a);
    }

    let mut i_ha = m.i_h.clone();
    for (idx, &j) in active.iter().enumerate() {
        i_ha.add_scaled(&constraints.constraints[j].hess_theta(theta_hat), alpha[idx])?;
    }
    let inner = proj
        .matmul(&i_ha.pinv(PINV_REL_TOL)?)?
        .matmul(&proj)?
        .matmul(&m.j_h)?;
    let trace = inner.trace()?;
    diag.values.insert("trace_penalty".into(), trace);
    diag.active_set = Some(active);
    let correction = trace / data.len() as f64;
    Ok(EvalEstimate::new(apparent, correction, Method::OicConstrained, diag))
}

/// Expected cost under the fitted parametric model, as a function of
/// the parameter and a fixed decision.
pub trait ParametricExpectation {
    fn value(&self, theta: &[f64], x: &[f64]) -> Result<f64>;
    fn grad_theta(&self, theta: &[f64], x: &[f64]) -> Result<Vec<f64>>;
    /// Monte Carlo standard error of `value`, when sampling is used.
    fn standard_error(&self) -> Option<f64> {
        None
    }
}

/// Closed-form parametric expectation from closures.
pub struct ClosedFormExpectation<V, G>
where
    V: Fn(&[f64], &[f64]) -> f64 + Send + Sync,
    G: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync,
{
    pub value: V,
    pub grad: G,
}

impl<V, G> ParametricExpectation for ClosedFormExpectation<V, G>
where
    V: Fn(&[f64], &[f64]) -> f64 + Send + Sync,
    G: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync,
{
    fn value(&self, theta: &[f64], x: &[f64]) -> Result<f64> {
        Ok((self.value)(theta, x))
    }
    fn grad_theta(&self, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        Ok((self.grad)(theta, x))
    }
}

/// Parametric estimator: evaluation under the fitted model plus the
/// curvature and estimator-bias terms,
///
/// `total = E_{P_theta_hat}[h(x_hat; xi)] + (1/2n) Tr[I_h Psi]
///          - (1/n) grad_theta(E_{P_theta_hat}[h(x_hat; xi)])^T C`.
///
/// `c_bias` is the higher-order estimator bias `C(P*, theta*)`; it
/// defaults to zero, which is exact for unbiased parameter estimators.
pub fn p_oic(
    rule: &dyn DecisionRule,
    theta_hat: &[f64],
    expectation: &dyn ParametricExpectation,
    i_h: &Matrix,
    psi: &CovarianceEstimate,
    c_bias: Option<&[f64]>,
    n: usize,
) -> Result<EvalEstimate> {
    if n == 0 {
        return Err(Error::Input("p_oic needs a positive sample count".into()));
    }
    let x_hat = rule.value(theta_hat, None);
    let apparent = expectation.value(theta_hat, &x_hat)?;
    let mut diag = Diagnostics::default();
    if let Some(se) = expectation.standard_error() {
        diag.values.insert("expectation_se".into(), se);
    }
    let curvature = i_h.matmul(&psi.psi_hat)?.trace()? / (2.0 * n as f64);
    diag.values.insert("curvature_term".into(), curvature);
    let mut correction = curvature;
    if let Some(c) = c_bias {
        if c.iter().any(|v| *v != 0.0) {
            let grad = expectation.grad_theta(theta_hat, &x_hat)?;
            let bias_term = dot(&grad, c) / n as f64;
            diag.values.insert("c_bias_term".into(), bias_term);
            correction -= bias_term;
        }
    }
    Ok(EvalEstimate::new(apparent, correction, Method::POic, diag))
}

/// Model misspecification gap: the influence-based estimate minus the
/// mean of the parametric estimates (one per context, or a single
/// global value). Near zero for well-specified models at large `n`.
pub fn misspec_gap(oic_total: f64, poic_totals: &[f64]) -> Result<f64> {
    if poic_totals.is_empty() {
        return Err(Error::Input("misspec_gap needs at least one parametric estimate".into()));
    }
    Ok(oic_total - crate::numkit::mean(poic_totals))
}

/// Quantile-decision correction for the sample-average newsvendor:
/// the curvature of the expected cost is `p f(theta)`, so
///
/// `correction = c (p - c) / (n p f_hat(theta_hat))`
///
/// with `f_hat` a Gaussian-kernel density estimate (Silverman's
/// bandwidth unless one is supplied).
pub fn oic_newsvendor_saa_kde(
    demands: &[f64],
    p: f64,
    c: f64,
    theta_hat: f64,
    bandwidth: Option<f64>,
) -> Result<EvalEstimate> {
    let n = demands.len();
    if n == 0 {
        return Err(Error::Input("estimator needs a nonempty dataset".into()));
    }
    let apparent = demands
        .iter()
        .map(|&xi| c * theta_hat - p * xi.min(theta_hat))
        .sum::<f64>()
        / n as f64;
    let density = kde_density(demands, theta_hat, bandwidth)?;
    if density <= f64::MIN_POSITIVE {
        return Err(Error::DegenerateData(
            "estimated demand density vanishes at the fitted quantile".into(),
        ));
    }
    let correction = c * (p - c) / (n as f64 * p * density);
    let mut diag = Diagnostics::default();
    diag.values.insert("kde_density".into(), density);
    Ok(EvalEstimate::new(
        apparent,
        correction,
        Method::NewsvendorSaaKde,
        diag,
    ))
}
