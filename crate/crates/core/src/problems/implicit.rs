//! Decision derivatives through an implicit first-order condition.
//!
//! When the decision is defined by `f(theta; x) = 0` for a scalar `x`
//! rather than an explicit map, the implicit function theorem gives
//!
//! ```text
//! dx/dtheta   = -f_theta / f_x
//! d2x/dtheta2 = (-f_x^2 f_tt + f_x (f_t f_xt^T + f_xt f_t^T) - f_xx f_t f_t^T) / f_x^3
//! ```

use crate::error::{Error, Result};
use crate::numkit::{outer, Matrix};

/// First-order condition `f(theta; x) = 0` for a scalar decision, with
/// the partial derivatives needed for implicit differentiation.
pub trait ImplicitCondition {
    fn dim_theta(&self) -> usize;
    fn f(&self, theta: &[f64], x: f64) -> f64;
    fn f_theta(&self, theta: &[f64], x: f64) -> Vec<f64>;
    fn f_x(&self, theta: &[f64], x: f64) -> f64;
    fn f_theta_theta(&self, theta: &[f64], x: f64) -> Matrix;
    /// Mixed partial `d^2 f / dx dtheta`, length `dim_theta`.
    fn f_x_theta(&self, theta: &[f64], x: f64) -> Vec<f64>;
    fn f_xx(&self, theta: &[f64], x: f64) -> f64;
}

/// First and second derivatives of the implicitly defined decision.
pub fn implicit_decision_derivatives(
    cond: &dyn ImplicitCondition,
    theta: &[f64],
    x: f64,
) -> Result<(Vec<f64>, Matrix)> {
    let fx = cond.f_x(theta, x);
    if fx.abs() < 1e-12 {
        return Err(Error::Singular(format!(
            "implicit condition has |f_x| = {:.3e} at the fitted point",
            fx.abs()
        )));
    }
    let ft = cond.f_theta(theta, x);
    let dx: Vec<f64> = ft.iter().map(|v| -v / fx).collect();

    let ftt = cond.f_theta_theta(theta, x);
    let fxt = cond.f_x_theta(theta, x);
    let fxx = cond.f_xx(theta, x);
    let mut num = ftt.scale(-fx * fx);
    let cross = outer(&ft, &fxt);
    num.add_scaled(&cross, fx)?;
    num.add_scaled(&cross.transpose(), fx)?;
    num.add_scaled(&outer(&ft, &ft), -fxx)?;
    Ok((dx, num.scale(1.0 / (fx * fx * fx))))
}
