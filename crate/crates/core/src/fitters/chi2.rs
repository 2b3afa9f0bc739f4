//! Chi-squared distributionally robust fitting.
//!
//! The ambiguity set is the chi-squared divergence ball
//! `{q >= 0, 1^T q = 1, n sum q_i^2 - 1 <= eps}` around the empirical
//! distribution. The inner worst case over that set has a water-filling
//! solution `q_i = max(0, 1/n + lambda (loss_i - shift))`; the outer
//! robust fit minimizes the resulting worst-case cost over the policy
//! space.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fitters::{fit_portfolio, portfolio_losses, FitResult, PortfolioClass};
use crate::numkit::norm2;

const INNER_TOL: f64 = 1e-10;

/// Maximizer of `sum q_i loss_i` over the chi-squared ball of radius
/// `epsilon`.
pub fn chi2_worst_case_weights(losses: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    Ok(chi2_worst_case_value(losses, epsilon)?.0)
}

/// Worst-case weights together with the attained objective value.
pub fn chi2_worst_case_value(losses: &[f64], epsilon: f64) -> Result<(Vec<f64>, f64)> {
    let n = losses.len();
    if n == 0 {
        return Err(Error::Input("worst case over empty losses".into()));
    }
    if epsilon < 0.0 {
        return Err(Error::Domain(format!("ambiguity level must be nonnegative, got {epsilon}")));
    }
    let uniform = vec![1.0 / n as f64; n];
    let max_loss = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_loss = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    if epsilon == 0.0 || max_loss == min_loss {
        let value = crate::numkit::dot(&uniform, losses);
        return Ok((uniform, value));
    }

    // The divergence is maximal at the uniform distribution over the
    // loss maximizers; beyond that radius the ball constraint is slack.
    let ties = losses.iter().filter(|&&l| l == max_loss).count();
    let max_div = n as f64 / ties as f64 - 1.0;
    if epsilon >= max_div - INNER_TOL {
        let q: Vec<f64> = losses
            .iter()
            .map(|&l| if l == max_loss { 1.0 / ties as f64 } else { 0.0 })
            .collect();
        return Ok((q, max_loss));
    }

    // The divergence of the water-filling weights is continuous and
    // non-decreasing in lambda; bracket and bisect.
    let divergence = |lambda: f64| -> (Vec<f64>, f64) {
        let q = waterfill(losses, lambda);
        let div = n as f64 * crate::numkit::dot(&q, &q) - 1.0;
        (q, div)
    };
    let mut hi = 1.0 / (max_loss - min_loss);
    for _ in 0..200 {
        if divergence(hi).1 >= epsilon {
            break;
        }
        hi *= 2.0;
    }
    let mut lo = 0.0;
    let mut q_best = uniform;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (q, div) = divergence(mid);
        q_best = q;
        if (div - epsilon).abs() <= INNER_TOL {
            break;
        }
        if div < epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let value = crate::numkit::dot(&q_best, losses);
    Ok((q_best, value))
}

/// `q_i = max(0, 1/n + lambda (loss_i - shift))` with the shift chosen
/// so the weights sum to one (exact sort-and-scan solve).
fn waterfill(losses: &[f64], lambda: f64) -> Vec<f64> {
    let n = losses.len();
    let c: Vec<f64> = losses.iter().map(|&l| 1.0 / n as f64 + lambda * l).collect();
    let mut sorted = c.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    // find the largest k with c_(k) > t where t = (sum_{i<=k} c_i - 1)/k
    let mut prefix = 0.0;
    let mut t = 0.0;
    for (k, &ck) in sorted.iter().enumerate() {
        prefix += ck;
        let cand = (prefix - 1.0) / (k + 1) as f64;
        if k + 1 == n || sorted[k + 1] <= cand {
            t = cand;
            if ck > cand {
                break;
            }
        }
    }
    c.iter().map(|&ci| (ci - t).max(0.0)).collect()
}

/// Distributionally robust portfolio fit at ambiguity `eps = rho / n`.
///
/// Scalar policy spaces are minimized by golden-section search over an
/// adaptively widened bracket; vector spaces by a damped re-weighted
/// re-solve of the closed-form first-order system. Either way the
/// returned fit records the worst-case first-order residual and the
/// inner multiplier state, and `rho = 0` falls back to the empirical
/// fit verbatim.
pub fn fit_dro_chi2(
    class: PortfolioClass,
    data: &Dataset,
    lambda1: f64,
    lambda2: f64,
    centering: Vec<f64>,
    rho: f64,
) -> Result<FitResult> {
    if rho < 0.0 {
        return Err(Error::Domain(format!("rho must be nonnegative, got {rho}")));
    }
    let empirical = fit_portfolio(class, data, lambda1, lambda2, centering.clone())?;
    if rho == 0.0 {
        let mut fit = empirical;
        fit.method = "dro_chi2";
        fit.diagnostics.insert("rho".into(), 0.0);
        return Ok(fit);
    }
    let n = data.len();
    let eps = rho / n as f64;
    let rule = class.rule(data.dim_xi())?;
    let basis = rule.basis().clone();

    let worst_value = |theta: &[f64]| -> Result<f64> {
        let losses = portfolio_losses(data, &basis, theta, lambda1, lambda2, &centering)?;
        Ok(chi2_worst_case_value(&losses, eps)?.1)
    };
    let worst_gradient = |theta: &[f64]| -> Result<Vec<f64>> {
        let losses = portfolio_losses(data, &basis, theta, lambda1, lambda2, &centering)?;
        let q = chi2_worst_case_weights(&losses, eps)?;
        weighted_gradient(data, &basis, theta, lambda1, lambda2, &centering, &q)
    };

    let k = basis.cols();
    let theta = if k == 1 {
        let scale = empirical.theta_hat[0].abs().max(1e-3);
        let mut lo = -10.0 * scale;
        let mut hi = 10.0 * scale;
        let mut best = golden_section(&|t| worst_value(&[t]), lo, hi)?;
        // widen if the minimizer sits on the bracket edge
        for _ in 0..60 {
            let width = hi - lo;
            if best - lo > 1e-3 * width && hi - best > 1e-3 * width {
                break;
            }
            lo -= width;
            hi += width;
            best = golden_section(&|t| worst_value(&[t]), lo, hi)?;
        }
        vec![best]
    } else {
        // damped re-weighted re-solve from the empirical fit
        let mut theta = empirical.theta_hat.clone();
        let mut best_theta = theta.clone();
        let mut best_res = f64::INFINITY;
        let mut damping = 1.0;
        let mut converged = false;
        for _ in 0..2000 {
            let losses = portfolio_losses(data, &basis, &theta, lambda1, lambda2, &centering)?;
            let q = chi2_worst_case_weights(&losses, eps)?;
            let res = norm2(&weighted_gradient(
                data, &basis, &theta, lambda1, lambda2, &centering, &q,
            )?);
            if res < best_res {
                best_res = res;
                best_theta = theta.clone();
            } else {
                damping *= 0.5;
                theta = best_theta.clone();
                if damping < 1e-6 {
                    break;
                }
                continue;
            }
            if res <= 1e-8 {
                converged = true;
                break;
            }
            let target = solve_weighted(data, &basis, lambda1, lambda2, &centering, &q)?;
            for (t, nt) in theta.iter_mut().zip(&target) {
                *t += damping * (nt - *t);
            }
        }
        if !converged && best_res > 1e-8 {
            return Err(Error::Solver(format!(
                "robust fit did not reach the first-order tolerance \
                 (residual {best_res:.3e})"
            )));
        }
        best_theta
    };

    let residual = norm2(&worst_gradient(&theta)?);
    if residual > 1e-8 {
        return Err(Error::Solver(format!(
            "robust fit did not reach the first-order tolerance (residual {residual:.3e})"
        )));
    }
    let losses = portfolio_losses(data, &basis, &theta, lambda1, lambda2, &centering)?;
    let (q, value) = chi2_worst_case_value(&losses, eps)?;
    let inner_lambda = inner_multiplier(&losses, &q);
    Ok(FitResult::new(theta, "dro_chi2")?
        .with("rho", rho)
        .with("fo_residual", residual)
        .with("worst_case_value", value)
        .with("inner_lambda", inner_lambda))
}

/// Recovers the inner water-filling slope from the solved weights (the
/// dual multiplier of the divergence constraint, up to normalization).
fn inner_multiplier(losses: &[f64], q: &[f64]) -> f64 {
    let n = losses.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    let qbar = 1.0 / n;
    let lbar = crate::numkit::mean(losses);
    for (&l, &qi) in losses.iter().zip(q) {
        if qi > 0.0 {
            num += (qi - qbar) * (l - lbar);
            den += (l - lbar) * (l - lbar);
        }
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn weighted_gradient(
    data: &Dataset,
    basis: &crate::numkit::Matrix,
    theta: &[f64],
    lambda1: f64,
    lambda2: f64,
    centering: &[f64],
    q: &[f64],
) -> Result<Vec<f64>> {
    let bt = basis.transpose();
    let x = basis.matvec(theta)?;
    let mut grad = vec![0.0; basis.cols()];
    for i in 0..data.len() {
        let xi = data.xi(i);
        let w: Vec<f64> = xi.iter().zip(centering.iter()).map(|(v, c)| v - c).collect();
        let wx = crate::numkit::dot(&w, &x);
        let gx: Vec<f64> = (0..x.len())
            .map(|j| 2.0 * wx * w[j] + 2.0 * lambda2 * x[j] - lambda1 * xi[j])
            .collect();
        let gt = bt.matvec(&gx)?;
        for (g, v) in grad.iter_mut().zip(&gt) {
            *g += q[i] * v;
        }
    }
    Ok(grad)
}

/// Minimizer of the `q`-weighted portfolio cost (weighted version of
/// the closed-form first-order system).
fn solve_weighted(
    data: &Dataset,
    basis: &crate::numkit::Matrix,
    lambda1: f64,
    lambda2: f64,
    centering: &[f64],
    q: &[f64],
) -> Result<Vec<f64>> {
    let bt = basis.transpose();
    let k = basis.cols();
    let mut gram = bt.matmul(basis)?.scale(2.0 * lambda2);
    let mut rhs = vec![0.0; k];
    for i in 0..data.len() {
        let w: Vec<f64> = data
            .xi(i)
            .iter()
            .zip(centering.iter())
            .map(|(x, c)| x - c)
            .collect();
        let v = bt.matvec(&w)?;
        crate::problems::outer_into(&mut gram, &v, &v, 2.0 * q[i]);
        let bx = bt.matvec(data.xi(i))?;
        for (r, b) in rhs.iter_mut().zip(&bx) {
            *r += lambda1 * q[i] * b;
        }
    }
    gram.solve(&rhs)
        .map_err(|_| Error::Rank("weighted first-order system is singular".into()))
}

fn golden_section(f: &dyn Fn(f64) -> Result<f64>, mut lo: f64, mut hi: f64) -> Result<f64> {
    const INV_PHI: f64 = 0.618_033_988_749_894_8_f64;
    let mut a = hi - INV_PHI * (hi - lo);
    let mut b = lo + INV_PHI * (hi - lo);
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    let tol = 1e-10 * (1.0 + hi.abs().max(lo.abs()));
    while hi - lo > tol {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - INV_PHI * (hi - lo);
            fa = f(a)?;
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + INV_PHI * (hi - lo);
            fb = f(b)?;
        }
    }
    Ok(0.5 * (lo + hi))
}
