//! Built-in cost models and decision rules used across the experiments.

use crate::error::{Error, Result};
use crate::numkit::{dot, Matrix};
use crate::problems::{CostModel, DecisionRule, Smoothness};

/// Newsvendor cost `h(x; xi) = c x - p min(xi, x)` for scalar order
/// quantity `x` and demand `xi`.
pub struct NewsvendorCost {
    pub p: f64,
    pub c: f64,
}

impl NewsvendorCost {
    pub fn new(p: f64, c: f64) -> Result<Self> {
        if !(p > 0.0 && c > 0.0 && c < p) {
            return Err(Error::Domain(format!(
                "newsvendor needs 0 < c < p, got p={p}, c={c}"
            )));
        }
        Ok(Self { p, c })
    }

    /// Critical ratio `1 - c/p`.
    pub fn critical_ratio(&self) -> f64 {
        1.0 - self.c / self.p
    }
}

impl CostModel for NewsvendorCost {
    fn dim_x(&self) -> usize {
        1
    }
    fn dim_xi(&self) -> usize {
        1
    }
    fn value(&self, x: &[f64], xi: &[f64]) -> f64 {
        self.c * x[0] - self.p * xi[0].min(x[0])
    }
    fn grad_x(&self, x: &[f64], xi: &[f64]) -> Vec<f64> {
        let g = if x[0] < xi[0] {
            self.c - self.p
        } else if x[0] > xi[0] {
            self.c
        } else {
            self.c - self.p / 2.0
        };
        vec![g]
    }
    fn hess_x(&self, _x: &[f64], _xi: &[f64]) -> Matrix {
        Matrix::zeros(1, 1)
    }
    fn smoothness(&self) -> Smoothness {
        Smoothness::PiecewiseSmooth
    }
}

/// Mean-variance portfolio cost
/// `h(x; xi) = x^T (A(xi) + l2 I) x - l1 xi^T x` with
/// `A(xi) = (xi - mu_c)(xi - mu_c)^T` centered at `mu_c`.
pub struct PortfolioCost {
    pub lambda1: f64,
    pub lambda2: f64,
    pub centering: Vec<f64>,
}

impl PortfolioCost {
    pub fn new(lambda1: f64, lambda2: f64, centering: Vec<f64>) -> Self {
        Self {
            lambda1,
            lambda2,
            centering,
        }
    }

    fn centered<'a>(&self, xi: &'a [f64]) -> Vec<f64> {
        xi.iter()
            .zip(self.centering.iter())
            .map(|(x, c)| x - c)
            .collect()
    }
}

impl CostModel for PortfolioCost {
    fn dim_x(&self) -> usize {
        self.centering.len()
    }
    fn dim_xi(&self) -> usize {
        self.centering.len()
    }
    fn value(&self, x: &[f64], xi: &[f64]) -> f64 {
        let w = self.centered(xi);
        let wx = dot(&w, x);
        wx * wx + self.lambda2 * dot(x, x) - self.lambda1 * dot(xi, x)
    }
    fn grad_x(&self, x: &[f64], xi: &[f64]) -> Vec<f64> {
        let w = self.centered(xi);
        let wx = dot(&w, x);
        (0..x.len())
            .map(|i| 2.0 * wx * w[i] + 2.0 * self.lambda2 * x[i] - self.lambda1 * xi[i])
            .collect()
    }
    fn hess_x(&self, _x: &[f64], xi: &[f64]) -> Matrix {
        let w = self.centered(xi);
        let d = w.len();
        Matrix::from_fn(d, d, |i, j| {
            2.0 * w[i] * w[j] + if i == j { 2.0 * self.lambda2 } else { 0.0 }
        })
    }
}

/// Squared prediction loss `h(x; xi) = (xi - x)^2` for scalar target
/// `xi` and prediction `x`; contextual through `x*(theta, z) = theta^T z`.
pub struct SquaredLossCost;

impl CostModel for SquaredLossCost {
    fn dim_x(&self) -> usize {
        1
    }
    fn dim_xi(&self) -> usize {
        1
    }
    fn value(&self, x: &[f64], xi: &[f64]) -> f64 {
        let r = xi[0] - x[0];
        r * r
    }
    fn grad_x(&self, x: &[f64], xi: &[f64]) -> Vec<f64> {
        vec![2.0 * (x[0] - xi[0])]
    }
    fn hess_x(&self, _x: &[f64], _xi: &[f64]) -> Matrix {
        Matrix::diag(&[2.0])
    }
}

/// Gaussian negative log-likelihood treated as a cost over the decision
/// `x = (mu, v)` with `v` the variance.
pub struct GaussianNllCost;

impl CostModel for GaussianNllCost {
    fn dim_x(&self) -> usize {
        2
    }
    fn dim_xi(&self) -> usize {
        1
    }
    fn value(&self, x: &[f64], xi: &[f64]) -> f64 {
        let (mu, v) = (x[0], x[1]);
        debug_assert!(v > 0.0, "variance coordinate must stay positive");
        let r = xi[0] - mu;
        0.5 * (2.0 * std::f64::consts::PI * v).ln() + r * r / (2.0 * v)
    }
    fn grad_x(&self, x: &[f64], xi: &[f64]) -> Vec<f64> {
        let (mu, v) = (x[0], x[1]);
        let r = xi[0] - mu;
        vec![-r / v, 0.5 / v - r * r / (2.0 * v * v)]
    }
    fn hess_x(&self, x: &[f64], xi: &[f64]) -> Matrix {
        let (mu, v) = (x[0], x[1]);
        let r = xi[0] - mu;
        Matrix::new(
            2,
            2,
            vec![
                1.0 / v,
                r / (v * v),
                r / (v * v),
                -0.5 / (v * v) + r * r / (v * v * v),
            ],
        )
        .expect("finite Hessian")
    }
}

/// Linear decision rule `x = U theta` for a fixed basis `U`; covers the
/// identity, equally-weighted and block-equally-weighted policy spaces.
pub struct LinearRule {
    basis: Matrix,
}

impl LinearRule {
    pub fn from_basis(basis: Matrix) -> Self {
        Self { basis }
    }

    /// `x = theta`.
    pub fn identity(dim: usize) -> Self {
        Self {
            basis: Matrix::identity(dim),
        }
    }

    /// One shared weight for every asset: `x = theta 1_d`.
    pub fn uniform(dim_x: usize) -> Self {
        Self {
            basis: Matrix::from_fn(dim_x, 1, |_, _| 1.0),
        }
    }

    /// One weight per half: `x = (theta_1 1_{d/2}, theta_2 1_{d/2})`.
    pub fn block(dim_x: usize) -> Result<Self> {
        if dim_x % 2 != 0 {
            return Err(Error::Dimension(format!(
                "block rule needs even dimension, got {dim_x}"
            )));
        }
        let half = dim_x / 2;
        Ok(Self {
            basis: Matrix::from_fn(dim_x, 2, |i, j| {
                if (i < half) == (j == 0) {
                    1.0
                } else {
                    0.0
                }
            }),
        })
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }
}

impl DecisionRule for LinearRule {
    fn dim_theta(&self) -> usize {
        self.basis.cols()
    }
    fn dim_x(&self) -> usize {
        self.basis.rows()
    }
    fn value(&self, theta: &[f64], _z: Option<&[f64]>) -> Vec<f64> {
        self.basis.matvec(theta).expect("rule dimension checked")
    }
    fn jac_theta(&self, _theta: &[f64], _z: Option<&[f64]>) -> Matrix {
        self.basis.clone()
    }
    fn hess_theta_component(&self, _i: usize, _theta: &[f64], _z: Option<&[f64]>) -> Matrix {
        Matrix::zeros(self.basis.cols(), self.basis.cols())
    }
}

/// Contextual linear rule `x*(theta, z) = theta^T z` (scalar decision).
pub struct LinearContextRule {
    pub dim_theta: usize,
}

impl DecisionRule for LinearContextRule {
    fn dim_theta(&self) -> usize {
        self.dim_theta
    }
    fn dim_x(&self) -> usize {
        1
    }
    fn value(&self, theta: &[f64], z: Option<&[f64]>) -> Vec<f64> {
        let z = z.expect("contextual rule needs a context");
        vec![dot(theta, z)]
    }
    fn jac_theta(&self, _theta: &[f64], z: Option<&[f64]>) -> Matrix {
        let z = z.expect("contextual rule needs a context");
        Matrix::new(1, z.len(), z.to_vec()).expect("finite context")
    }
    fn hess_theta_component(&self, _i: usize, _theta: &[f64], _z: Option<&[f64]>) -> Matrix {
        Matrix::zeros(self.dim_theta, self.dim_theta)
    }
}

/// Newsvendor rule under a fitted normal demand model:
/// `x*(mu, v) = mu + sqrt(v) * z_q` with `z_q` the critical-ratio
/// normal quantile.
pub struct NewsvendorNormalRule {
    pub quantile_z: f64,
}

impl NewsvendorNormalRule {
    pub fn new(p: f64, c: f64) -> Result<Self> {
        Ok(Self {
            quantile_z: crate::numkit::normal_quantile(1.0 - c / p)?,
        })
    }
}

impl DecisionRule for NewsvendorNormalRule {
    fn dim_theta(&self) -> usize {
        2
    }
    fn dim_x(&self) -> usize {
        1
    }
    fn value(&self, theta: &[f64], _z: Option<&[f64]>) -> Vec<f64> {
        vec![theta[0] + theta[1].max(0.0).sqrt() * self.quantile_z]
    }
    fn jac_theta(&self, theta: &[f64], _z: Option<&[f64]>) -> Matrix {
        let sigma = theta[1].max(f64::MIN_POSITIVE).sqrt();
        Matrix::new(1, 2, vec![1.0, self.quantile_z / (2.0 * sigma)]).expect("finite jacobian")
    }
    fn hess_theta_component(&self, _i: usize, theta: &[f64], _z: Option<&[f64]>) -> Matrix {
        let v = theta[1].max(f64::MIN_POSITIVE);
        Matrix::new(
            2,
            2,
            vec![0.0, 0.0, 0.0, -self.quantile_z / (4.0 * v.powf(1.5))],
        )
        .expect("finite hessian")
    }
}

/// Scalar scaling rule `x = k theta`, covering the exponential ETO rule
/// (`k = ln(p/c)`) and operational statistics
/// (`k = n ((p/c)^{1/(n+1)} - 1)`, `n` held fixed as part of the rule).
pub struct NewsvendorScaleRule {
    pub k: f64,
}

impl NewsvendorScaleRule {
    pub fn exponential(p: f64, c: f64) -> Self {
        Self { k: (p / c).ln() }
    }

    pub fn exp_os(p: f64, c: f64, n: usize) -> Self {
        let n = n as f64;
        Self {
            k: n * ((p / c).powf(1.0 / (n + 1.0)) - 1.0),
        }
    }
}

impl DecisionRule for NewsvendorScaleRule {
    fn dim_theta(&self) -> usize {
        1
    }
    fn dim_x(&self) -> usize {
        1
    }
    fn value(&self, theta: &[f64], _z: Option<&[f64]>) -> Vec<f64> {
        vec![self.k * theta[0]]
    }
    fn jac_theta(&self, _theta: &[f64], _z: Option<&[f64]>) -> Matrix {
        Matrix::diag(&[self.k])
    }
    fn hess_theta_component(&self, _i: usize, _theta: &[f64], _z: Option<&[f64]>) -> Matrix {
        Matrix::zeros(1, 1)
    }
}

/// Portfolio decision under a fitted Gaussian model with independent
/// margins: `theta = (mu_1..d, v_1..d)` and
/// `x*(theta) = (l1/2) M(theta)^{-1} mu` with
/// `M(theta) = diag(v) + (mu - mu_c)(mu - mu_c)^T + l2 I`.
pub struct PortfolioParamRule {
    pub lambda1: f64,
    pub lambda2: f64,
    pub centering: Vec<f64>,
}

impl PortfolioParamRule {
    fn model_matrix(&self, mu: &[f64], v: &[f64]) -> Matrix {
        let d = mu.len();
        let delta: Vec<f64> = mu
            .iter()
            .zip(self.centering.iter())
            .map(|(m, c)| m - c)
            .collect();
        Matrix::from_fn(d, d, |i, j| {
            delta[i] * delta[j]
                + if i == j {
                    v[i] + self.lambda2
                } else {
                    0.0
                }
        })
    }
}

impl DecisionRule for PortfolioParamRule {
    fn dim_theta(&self) -> usize {
        2 * self.centering.len()
    }
    fn dim_x(&self) -> usize {
        self.centering.len()
    }
    fn value(&self, theta: &[f64], _z: Option<&[f64]>) -> Vec<f64> {
        let d = self.centering.len();
        let (mu, v) = theta.split_at(d);
        let m = self.model_matrix(mu, v);
        let rhs: Vec<f64> = mu.iter().map(|x| 0.5 * self.lambda1 * x).collect();
        m.solve(&rhs).expect("model matrix is positive definite")
    }
    fn jac_theta(&self, theta: &[f64], _z: Option<&[f64]>) -> Matrix {
        let d = self.centering.len();
        let (mu, v) = theta.split_at(d);
        let m = self.model_matrix(mu, v);
        let lu = m.lu().expect("model matrix is positive definite");
        let rhs: Vec<f64> = mu.iter().map(|x| 0.5 * self.lambda1 * x).collect();
        let x = lu.solve(&rhs).expect("solve");
        let delta: Vec<f64> = mu
            .iter()
            .zip(self.centering.iter())
            .map(|(m, c)| m - c)
            .collect();
        let minv_delta = lu.solve(&delta).expect("solve");
        let dx = dot(&delta, &x);
        let mut jac = Matrix::zeros(d, 2 * d);
        for k in 0..d {
            let mut e = vec![0.0; d];
            e[k] = 1.0;
            let minv_ek = lu.solve(&e).expect("solve");
            // d x / d mu_k = (l1/2 - delta^T x) M^{-1} e_k - x_k M^{-1} delta
            for i in 0..d {
                jac[(i, k)] = (0.5 * self.lambda1 - dx) * minv_ek[i] - x[k] * minv_delta[i];
                // d x / d v_k = -x_k M^{-1} e_k
                jac[(i, d + k)] = -x[k] * minv_ek[i];
            }
        }
        jac
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{compose_grad_theta, compose_hess_theta};
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn fd_grad(cost: &dyn CostModel, x: &[f64], xi: &[f64]) -> Vec<f64> {
        let h = 1e-5;
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                (cost.value(&xp, xi) - cost.value(&xm, xi)) / (2.0 * h)
            })
            .collect()
    }

    fn check_cost_at(cost: &dyn CostModel, x: &[f64], xi: &[f64]) {
        let g = cost.grad_x(x, xi);
        let fd = fd_grad(cost, x, xi);
        for (a, b) in g.iter().zip(fd.iter()) {
            let scale = a.abs().max(b.abs()).max(1.0);
            assert!(
                (a - b).abs() <= 1e-4 * scale,
                "gradient mismatch: analytic {a}, finite difference {b}"
            );
        }
        let hess = cost.hess_x(x, xi);
        for i in 0..x.len() {
            for j in 0..x.len() {
                assert_abs_diff_eq!(hess[(i, j)], hess[(j, i)], epsilon = 1e-12);
            }
        }
    }

    fn check_rule_at(rule: &dyn DecisionRule, theta: &[f64], z: Option<&[f64]>) {
        let h = 1e-5;
        let jac = rule.jac_theta(theta, z);
        for j in 0..rule.dim_theta() {
            let mut tp = theta.to_vec();
            let mut tm = theta.to_vec();
            tp[j] += h;
            tm[j] -= h;
            let vp = rule.value(&tp, z);
            let vm = rule.value(&tm, z);
            for i in 0..rule.dim_x() {
                let fd = (vp[i] - vm[i]) / (2.0 * h);
                let scale = fd.abs().max(jac[(i, j)].abs()).max(1.0);
                assert!(
                    (jac[(i, j)] - fd).abs() <= 1e-4 * scale,
                    "jacobian mismatch at ({i},{j}): analytic {}, fd {fd}",
                    jac[(i, j)]
                );
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(7);
        let nv = NewsvendorCost::new(5.0, 2.0).unwrap();
        let pf = PortfolioCost::new(1.0, 1.0, vec![0.1, -0.2, 0.3, 0.0]);
        let sq = SquaredLossCost;
        let nll = GaussianNllCost;
        for _ in 0..100 {
            // keep newsvendor points away from the kink x == xi
            let x = rng.random_range(-3.0..3.0);
            let xi = x + rng.random_range(0.2..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            check_cost_at(&nv, &[x], &[xi]);

            let xs: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let xis: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            check_cost_at(&pf, &xs, &xis);

            check_cost_at(&sq, &[rng.random_range(-2.0..2.0)], &[rng.random_range(-2.0..2.0)]);
            check_cost_at(
                &nll,
                &[rng.random_range(-1.0..1.0), rng.random_range(0.5..2.0)],
                &[rng.random_range(-2.0..2.0)],
            );
        }
    }

    #[test]
    fn rule_jacobians_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(11);
        let normal = NewsvendorNormalRule::new(5.0, 2.0).unwrap();
        let exp = NewsvendorScaleRule::exponential(5.0, 2.0);
        let os = NewsvendorScaleRule::exp_os(5.0, 2.0, 25);
        let block = LinearRule::block(4).unwrap();
        let ctx = LinearContextRule { dim_theta: 3 };
        let param = PortfolioParamRule {
            lambda1: 1.0,
            lambda2: 1.0,
            centering: vec![0.5, -0.1, 0.2],
        };
        for _ in 0..100 {
            check_rule_at(
                &normal,
                &[rng.random_range(5.0..15.0), rng.random_range(1.0..9.0)],
                None,
            );
            check_rule_at(&exp, &[rng.random_range(0.5..5.0)], None);
            check_rule_at(&os, &[rng.random_range(0.5..5.0)], None);
            check_rule_at(
                &block,
                &[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                None,
            );
            let z: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let th: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            check_rule_at(&ctx, &th, Some(&z));
            let theta: Vec<f64> = (0..3)
                .map(|_| rng.random_range(0.5..2.0))
                .chain((0..3).map(|_| rng.random_range(0.5..2.0)))
                .collect();
            check_rule_at(&param, &theta, None);
        }
    }

    #[test]
    fn newsvendor_subgradient_convention() {
        let nv = NewsvendorCost::new(5.0, 2.0).unwrap();
        assert_eq!(nv.grad_x(&[1.0], &[2.0]), vec![2.0 - 5.0]); // x < xi
        assert_eq!(nv.grad_x(&[3.0], &[2.0]), vec![2.0]); // x > xi
        assert_eq!(nv.grad_x(&[2.0], &[2.0]), vec![2.0 - 2.5]); // kink
    }

    #[test]
    fn exp_os_factor_examples() {
        // n = 1, p/c = 2.5: sqrt(2.5) - 1
        let os = NewsvendorScaleRule::exp_os(5.0, 2.0, 1);
        assert_abs_diff_eq!(os.k, 2.5f64.sqrt() - 1.0, epsilon = 1e-12);
        let exp = NewsvendorScaleRule::exponential(5.0, 2.0);
        assert_abs_diff_eq!(exp.value(&[1.0], None)[0], 2.5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn normal_rule_example() {
        let rule = NewsvendorNormalRule::new(5.0, 2.0).unwrap();
        let x = rule.value(&[10.0, 4.0], None)[0];
        assert_abs_diff_eq!(x, 10.0 + 2.0 * 0.2533471031357997, epsilon = 1e-9);
    }

    #[test]
    fn block_rule_shape() {
        let rule = LinearRule::block(6).unwrap();
        assert_eq!(rule.value(&[2.0, -1.0], None), vec![2.0, 2.0, 2.0, -1.0, -1.0, -1.0]);
        assert!(LinearRule::block(5).is_err());
    }
}
