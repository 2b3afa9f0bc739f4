//! Cost models, parametric decision rules and their derivative assembly.

pub mod builtin;
pub mod implicit;
pub mod smoothing;

use crate::error::{Error, Result};
use crate::numkit::{outer, Matrix};

/// Smoothness class of a cost in its decision argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothness {
    Smooth,
    /// Twice differentiable except at isolated kinks; gradients at a
    /// kink follow the average-of-one-sided-derivatives convention.
    PiecewiseSmooth,
}

/// Cost `h(x; xi)` with derivatives in the decision `x`.
///
/// Implementations of `grad_x` must already apply the kink convention:
/// at a point where the cost is not differentiable, return the average
/// of the one-sided derivatives (the large-`m` limit of kernel
/// smoothing).
pub trait CostModel: Send + Sync {
    fn dim_x(&self) -> usize;
    fn dim_xi(&self) -> usize;
    fn value(&self, x: &[f64], xi: &[f64]) -> f64;
    fn grad_x(&self, x: &[f64], xi: &[f64]) -> Vec<f64>;
    fn hess_x(&self, x: &[f64], xi: &[f64]) -> Matrix;
    fn smoothness(&self) -> Smoothness {
        Smoothness::Smooth
    }
}

/// Parametric decision map `theta -> x*(theta)`, optionally contextual
/// (`theta, z -> x*(theta, z)`).
pub trait DecisionRule: Send + Sync {
    fn dim_theta(&self) -> usize;
    fn dim_x(&self) -> usize;
    fn value(&self, theta: &[f64], z: Option<&[f64]>) -> Vec<f64>;
    /// Jacobian `d x / d theta`, shape `dim_x x dim_theta`.
    fn jac_theta(&self, theta: &[f64], z: Option<&[f64]>) -> Matrix;
    /// Hessian of component `x_i` in `theta`, shape `dim_theta x dim_theta`.
    ///
    /// The default is a central finite difference of `jac_theta`; rules
    /// with closed-form curvature should override it.
    fn hess_theta_component(&self, i: usize, theta: &[f64], z: Option<&[f64]>) -> Matrix {
        let d = self.dim_theta();
        let h = 1e-5;
        let mut out = Matrix::zeros(d, d);
        let mut tp = theta.to_vec();
        for j in 0..d {
            tp.copy_from_slice(theta);
            tp[j] = theta[j] + h;
            let jp = self.jac_theta(&tp, z);
            tp[j] = theta[j] - h;
            let jm = self.jac_theta(&tp, z);
            for k in 0..d {
                out[(j, k)] = (jp[(i, k)] - jm[(i, k)]) / (2.0 * h);
            }
        }
        // symmetrize away finite-difference noise
        Matrix::from_fn(d, d, |j, k| 0.5 * (out[(j, k)] + out[(k, j)]))
    }
}

fn check_dims(cost: &dyn CostModel, rule: &dyn DecisionRule, theta: &[f64], xi: &[f64]) -> Result<()> {
    if cost.dim_x() != rule.dim_x() {
        return Err(Error::Dimension(format!(
            "cost has dim_x {} but rule produces {}",
            cost.dim_x(),
            rule.dim_x()
        )));
    }
    if theta.len() != rule.dim_theta() {
        return Err(Error::Dimension(format!(
            "rule expects {} parameters, got {}",
            rule.dim_theta(),
            theta.len()
        )));
    }
    if xi.len() != cost.dim_xi() {
        return Err(Error::Dimension(format!(
            "cost expects dim_xi {}, got {}",
            cost.dim_xi(),
            xi.len()
        )));
    }
    Ok(())
}

/// Chain rule gradient of `theta -> h(x*(theta); xi)`:
/// `J_theta(x)^T grad_x h`.
pub fn compose_grad_theta(
    cost: &dyn CostModel,
    rule: &dyn DecisionRule,
    theta: &[f64],
    xi: &[f64],
    z: Option<&[f64]>,
) -> Result<Vec<f64>> {
    check_dims(cost, rule, theta, xi)?;
    let x = rule.value(theta, z);
    let g = cost.grad_x(&x, xi);
    let jac = rule.jac_theta(theta, z);
    jac.transpose().matvec(&g)
}

/// Chain rule Hessian of `theta -> h(x*(theta); xi)`:
/// `J^T H_x J + sum_i (grad_x h)_i * d^2 x_i / d theta^2`.
pub fn compose_hess_theta(
    cost: &dyn CostModel,
    rule: &dyn DecisionRule,
    theta: &[f64],
    xi: &[f64],
    z: Option<&[f64]>,
) -> Result<Matrix> {
    check_dims(cost, rule, theta, xi)?;
    let x = rule.value(theta, z);
    let g = cost.grad_x(&x, xi);
    let hx = cost.hess_x(&x, xi);
    let jac = rule.jac_theta(theta, z);
    let mut out = jac.transpose().matmul(&hx.matmul(&jac)?)?;
    for (i, &gi) in g.iter().enumerate() {
        if gi != 0.0 {
            out.add_scaled(&rule.hess_theta_component(i, theta, z), gi)?;
        }
    }
    Ok(out)
}

/// Gradient of the cost in `x` under the kink convention: `grad_x` at
/// differentiable points, and the average of one-sided derivatives at a
/// kink (the `m -> infinity` limit of the smoothed gradient).
pub fn subgradient_convention(cost: &dyn CostModel, x: &[f64], xi: &[f64]) -> Vec<f64> {
    cost.grad_x(x, xi)
}

/// A scalar inequality constraint expressed in the model parameter,
/// `g(theta) <= 0`, with derivatives used by the constrained estimator.
pub trait ThetaConstraint: Send + Sync {
    fn value(&self, theta: &[f64]) -> f64;
    fn grad_theta(&self, theta: &[f64]) -> Vec<f64>;
    fn hess_theta(&self, theta: &[f64]) -> Matrix;
}

/// Affine constraint `a^T theta - b <= 0`.
pub struct AffineConstraint {
    pub coeffs: Vec<f64>,
    pub offset: f64,
}

impl ThetaConstraint for AffineConstraint {
    fn value(&self, theta: &[f64]) -> f64 {
        crate::numkit::dot(&self.coeffs, theta) - self.offset
    }
    fn grad_theta(&self, _theta: &[f64]) -> Vec<f64> {
        self.coeffs.clone()
    }
    fn hess_theta(&self, _theta: &[f64]) -> Matrix {
        Matrix::zeros(self.coeffs.len(), self.coeffs.len())
    }
}

/// A set of inequality constraints plus the tolerance used to detect
/// the binding active set at a fitted solution.
pub struct ConstraintSet {
    pub constraints: Vec<Box<dyn ThetaConstraint>>,
    pub active_tol: f64,
}

impl ConstraintSet {
    pub fn new(constraints: Vec<Box<dyn ThetaConstraint>>) -> Self {
        Self {
            constraints,
            active_tol: 1e-8,
        }
    }

    /// Indices of constraints with `|g_j(theta)| <= active_tol`.
    pub fn active_set(&self, theta: &[f64]) -> Vec<usize> {
        self.constraints
            .iter()
            .enumerate()
            .filter(|(_, c)| c.value(theta).abs() <= self.active_tol)
            .map(|(j, _)| j)
            .collect()
    }
}

pub(crate) fn outer_into(acc: &mut Matrix, u: &[f64], v: &[f64], weight: f64) {
    debug_assert_eq!(acc.rows(), u.len());
    debug_assert_eq!(acc.cols(), v.len());
    for i in 0..u.len() {
        let w = weight * u[i];
        if w == 0.0 {
            continue;
        }
        for j in 0..v.len() {
            acc[(i, j)] += w * v[j];
        }
    }
}

#[allow(dead_code)]
pub(crate) fn outer_of(u: &[f64], v: &[f64]) -> Matrix {
    outer(u, v)
}

#[cfg(test)]
mod tests {
    use super::builtin::*;
    use super::*;
    use approx::assert_abs_diff_eq;

    struct QuarticCost; // h(x) = x^2 with x scalar

    impl CostModel for QuarticCost {
        fn dim_x(&self) -> usize {
            1
        }
        fn dim_xi(&self) -> usize {
            1
        }
        fn value(&self, x: &[f64], _xi: &[f64]) -> f64 {
            x[0] * x[0]
        }
        fn grad_x(&self, x: &[f64], _xi: &[f64]) -> Vec<f64> {
            vec![2.0 * x[0]]
        }
        fn hess_x(&self, _x: &[f64], _xi: &[f64]) -> Matrix {
            Matrix::diag(&[2.0])
        }
    }

    struct SquareRule; // x(theta) = theta^2, scalar

    impl DecisionRule for SquareRule {
        fn dim_theta(&self) -> usize {
            1
        }
        fn dim_x(&self) -> usize {
            1
        }
        fn value(&self, theta: &[f64], _z: Option<&[f64]>) -> Vec<f64> {
            vec![theta[0] * theta[0]]
        }
        fn jac_theta(&self, theta: &[f64], _z: Option<&[f64]>) -> Matrix {
            Matrix::diag(&[2.0 * theta[0]])
        }
        fn hess_theta_component(&self, _i: usize, _theta: &[f64], _z: Option<&[f64]>) -> Matrix {
            Matrix::diag(&[2.0])
        }
    }

    #[test]
    fn compose_grad_identity_rule_passes_through() {
        let cost = QuarticCost;
        let rule = LinearRule::identity(1);
        let g = compose_grad_theta(&cost, &rule, &[3.0], &[0.0], None).unwrap();
        assert_eq!(g, cost.grad_x(&[3.0], &[0.0]));
    }

    #[test]
    fn compose_grad_quartic() {
        // h(x(theta)) = theta^4, derivative 4 theta^3
        let g = compose_grad_theta(&QuarticCost, &SquareRule, &[1.5], &[0.0], None).unwrap();
        assert_abs_diff_eq!(g[0], 4.0 * 1.5f64.powi(3), epsilon = 1e-12);
    }

    #[test]
    fn compose_hess_quartic() {
        // second derivative of theta^4 is 12 theta^2
        let h = compose_hess_theta(&QuarticCost, &SquareRule, &[1.5], &[0.0], None).unwrap();
        assert_abs_diff_eq!(h[(0, 0)], 12.0 * 1.5f64 * 1.5, epsilon = 1e-12);
    }

    #[test]
    fn compose_hess_identity_rule_passes_through() {
        let cost = QuarticCost;
        let rule = LinearRule::identity(1);
        let h = compose_hess_theta(&cost, &rule, &[0.7], &[0.0], None).unwrap();
        assert_eq!(h, cost.hess_x(&[0.49], &[0.0]));
    }

    #[test]
    fn zero_gradient_and_curvature_give_zero() {
        struct FlatCost;
        impl CostModel for FlatCost {
            fn dim_x(&self) -> usize {
                1
            }
            fn dim_xi(&self) -> usize {
                1
            }
            fn value(&self, _: &[f64], _: &[f64]) -> f64 {
                1.0
            }
            fn grad_x(&self, _: &[f64], _: &[f64]) -> Vec<f64> {
                vec![0.0]
            }
            fn hess_x(&self, _: &[f64], _: &[f64]) -> Matrix {
                Matrix::zeros(1, 1)
            }
        }
        let g = compose_grad_theta(&FlatCost, &SquareRule, &[2.0], &[0.0], None).unwrap();
        assert_eq!(g, vec![0.0]);
        let h = compose_hess_theta(&FlatCost, &SquareRule, &[2.0], &[0.0], None).unwrap();
        assert_eq!(h, Matrix::zeros(1, 1));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let cost = QuarticCost;
        let rule = LinearRule::identity(2);
        assert!(compose_grad_theta(&cost, &rule, &[1.0, 2.0], &[0.0], None).is_err());
    }

    #[test]
    fn compose_hess_is_symmetric() {
        let cost = PortfolioCost::new(1.0, 1.0, vec![0.0; 4]);
        let rule = LinearRule::block(4).unwrap();
        let theta = [0.3, -0.2];
        let xi = [1.0, 0.5, -0.3, 2.0];
        let h = compose_hess_theta(&cost, &rule, &theta, &xi, None).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(h[(i, j)], h[(j, i)], epsilon = 1e-12);
            }
        }
    }
}
