//! Empirical influence functions of the fitting procedures and the
//! covariance of the fitted parameter they imply.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numkit::Matrix;
use crate::problems::{compose_grad_theta, compose_hess_theta, CostModel, DecisionRule};

/// Which procedure produced the influence vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Moment,
    MEstimator,
    Ols,
    Custom,
}

/// Per-sample empirical influence vectors of a fitted parameter.
#[derive(Debug, Clone)]
pub struct InfluenceSet {
    vectors: Matrix,
    provenance: Provenance,
}

impl InfluenceSet {
    pub fn new(vectors: Matrix, provenance: Provenance) -> Result<Self> {
        Ok(Self { vectors, provenance })
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim_theta(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.dim_theta()];
        for i in 0..self.len() {
            for (s, v) in sums.iter_mut().zip(self.vector(i)) {
                *s += v;
            }
        }
        sums
    }
}

/// Asymptotic covariance estimate of `sqrt(n) (theta_hat - theta*)`.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    pub psi_hat: Matrix,
}

/// Influence vectors of the per-coordinate mean and variance
/// estimators, stacked as `theta = (mu_1..d, var_1..d)`:
/// `IF_mu(xi) = xi - mu_hat` and `IF_var(xi) = (xi - mu_hat)^2 - var_hat`.
///
/// The variance here divides by `n`, which makes both columns sum to
/// zero exactly; pair with the matching fitter convention.
pub fn if_moment_mean_var(data: &Dataset) -> Result<InfluenceSet> {
    let n = data.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let d = data.dim_xi();
    let mut mu = vec![0.0; d];
    for i in 0..n {
        for (m, x) in mu.iter_mut().zip(data.xi(i)) {
            *m += x;
        }
    }
    for m in mu.iter_mut() {
        *m /= n as f64;
    }
    let mut var = vec![0.0; d];
    for i in 0..n {
        for k in 0..d {
            let c = data.xi(i)[k] - mu[k];
            var[k] += c * c;
        }
    }
    for v in var.iter_mut() {
        *v /= n as f64;
    }
    let vectors = Matrix::from_fn(n, 2 * d, |i, j| {
        if j < d {
            data.xi(i)[j] - mu[j]
        } else {
            let k = j - d;
            let c = data.xi(i)[k] - mu[k];
            c * c - var[k]
        }
    });
    InfluenceSet::new(vectors, Provenance::Moment)
}

/// Policy for a singular averaged Hessian in [`if_m_estimator`].
#[derive(Debug, Clone, Copy, Default)]
pub struct MEstimatorOptions {
    /// Fall back to the pseudo-inverse instead of failing.
    pub pinv_fallback: bool,
}

/// Influence vectors of an M-estimator fit:
/// `IF(xi_i) = -H_bar^{-1} grad_theta h(x*(theta_hat); xi_i)` with
/// `H_bar` the averaged composed Hessian.
pub fn if_m_estimator(
    cost: &dyn CostModel,
    rule: &dyn DecisionRule,
    theta_hat: &[f64],
    data: &Dataset,
    opts: MEstimatorOptions,
) -> Result<InfluenceSet> {
    let n = data.len();
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let d = rule.dim_theta();
    let mut hbar = Matrix::zeros(d, d);
    let mut grads = Vec::with_capacity(n);
    for i in 0..n {
        let z = data.z(i);
        hbar.add_scaled(
            &compose_hess_theta(cost, rule, theta_hat, data.xi(i), z)?,
            1.0 / n as f64,
        )?;
        grads.push(compose_grad_theta(cost, rule, theta_hat, data.xi(i), z)?);
    }

    let condition = hbar.sym_condition().unwrap_or(f64::INFINITY);
    let solve: Box<dyn Fn(&[f64]) -> Result<Vec<f64>>> = if condition > 1e12 {
        if !opts.pinv_fallback {
            return Err(Error::Rank(format!(
                "averaged Hessian is singular (condition {condition:.2e}); \
                 enable the pseudo-inverse fallback to proceed"
            )));
        }
        let pinv = hbar.pinv(crate::numkit::PINV_REL_TOL)?;
        Box::new(move |g: &[f64]| pinv.matvec(g))
    } else {
        let lu = hbar.lu()?;
        Box::new(move |g: &[f64]| lu.solve(g))
    };

    let mut vectors = Matrix::zeros(n, d);
    for (i, g) in grads.iter().enumerate() {
        let x = solve(g)?;
        for (j, v) in x.iter().enumerate() {
            vectors[(i, j)] = -v;
        }
    }
    InfluenceSet::new(vectors, Provenance::MEstimator)
}

/// Influence vectors of the ordinary least squares fit:
/// `IF(xi_i) = (xi_i^v - theta^T xi_i^u) Sigma_hat^{-1} xi_i^u` with
/// `Sigma_hat = (1/n) sum xi^u (xi^u)^T`.
pub fn if_ols(features: &Matrix, targets: &[f64], theta_hat: &[f64]) -> Result<InfluenceSet> {
    let n = features.rows();
    let d = features.cols();
    if targets.len() != n {
        return Err(Error::Dimension(format!(
            "{n} feature rows but {} targets",
            targets.len()
        )));
    }
    if theta_hat.len() != d {
        return Err(Error::Dimension(format!(
            "{d} features but {} coefficients",
            theta_hat.len()
        )));
    }
    let mut sigma = Matrix::zeros(d, d);
    for i in 0..n {
        crate::problems::outer_into(&mut sigma, features.row(i), features.row(i), 1.0 / n as f64);
    }
    let lu = sigma
        .lu()
        .map_err(|_| Error::Rank("OLS second-moment matrix is singular".into()))?;
    let mut vectors = Matrix::zeros(n, d);
    for i in 0..n {
        let u = features.row(i);
        let residual = targets[i] - crate::numkit::dot(theta_hat, u);
        let dir = lu.solve(u)?;
        for (j, v) in dir.iter().enumerate() {
            vectors[(i, j)] = residual * v;
        }
    }
    InfluenceSet::new(vectors, Provenance::Ols)
}

/// Covariance of the fitted parameter implied by the influence vectors:
/// `Psi_hat = (1/n) sum IF_i IF_i^T`.
pub fn psi_hat(inf: &InfluenceSet) -> Result<CovarianceEstimate> {
    let n = inf.len();
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let d = inf.dim_theta();
    let mut psi = Matrix::zeros(d, d);
    for i in 0..n {
        crate::problems::outer_into(&mut psi, inf.vector(i), inf.vector(i), 1.0 / n as f64);
    }
    Ok(CovarianceEstimate { psi_hat: psi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::builtin::{LinearRule, SquaredLossCost};
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn moment_influence_examples() {
        let data = Dataset::from_scalars(&[0.0, 2.0]).unwrap();
        let inf = if_moment_mean_var(&data).unwrap();
        assert_eq!(inf.dim_theta(), 2);
        assert_abs_diff_eq!(inf.vector(0)[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(inf.vector(1)[0], 1.0, epsilon = 1e-14);
        // var_hat = 1 here, so (xi - 1)^2 - 1 vanishes at both points
        assert_abs_diff_eq!(inf.vector(0)[1], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(inf.vector(1)[1], 0.0, epsilon = 1e-14);

        let constant = Dataset::from_scalars(&[3.0, 3.0, 3.0]).unwrap();
        let inf = if_moment_mean_var(&constant).unwrap();
        for i in 0..3 {
            assert_eq!(inf.vector(i), &[0.0, 0.0]);
        }

        assert!(if_moment_mean_var(&Dataset::from_scalars(&[1.0]).unwrap()).is_err());
    }

    #[test]
    fn moment_and_ols_column_sums_vanish() {
        let mut rng = StdRng::seed_from_u64(3);
        let values: Vec<f64> = (0..40).map(|_| rng.random_range(-5.0..5.0)).collect();
        let data = Dataset::from_scalars(&values).unwrap();
        let inf = if_moment_mean_var(&data).unwrap();
        let scale = inf.vectors.max_abs().max(1.0);
        for s in inf.column_sums() {
            assert!(s.abs() <= 1e-10 * scale * 40.0_f64);
        }

        let features = Matrix::from_fn(30, 2, |i, j| if j == 0 { 1.0 } else { (i as f64) / 10.0 });
        let targets: Vec<f64> = (0..30).map(|i| 0.5 + 0.2 * (i as f64) / 10.0).collect();
        let theta = crate::fitters::fit_ols(&features, &targets, 0.0).unwrap().theta_hat;
        let noisy: Vec<f64> = targets
            .iter()
            .enumerate()
            .map(|(i, t)| t + if i % 2 == 0 { 0.3 } else { -0.3 })
            .collect();
        let theta2 = crate::fitters::fit_ols(&features, &noisy, 0.0).unwrap().theta_hat;
        for (f, t) in [(&targets, &theta), (&noisy, &theta2)] {
            let inf = if_ols(&features, f, t).unwrap();
            let scale = inf.vectors.max_abs().max(1.0);
            for s in inf.column_sums() {
                assert!(s.abs() <= 1e-10 * scale * 30.0);
            }
        }
    }

    #[test]
    fn m_estimator_intercept_example() {
        let data = Dataset::from_scalars(&[0.0, 2.0]).unwrap();
        let inf = if_m_estimator(
            &SquaredLossCost,
            &LinearRule::identity(1),
            &[1.0],
            &data,
            MEstimatorOptions::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(inf.vector(0)[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(inf.vector(1)[0], 1.0, epsilon = 1e-12);
        let sums = inf.column_sums();
        assert_abs_diff_eq!(sums[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn m_estimator_zero_gradients_give_zero_influence() {
        let data = Dataset::from_scalars(&[1.0, 1.0]).unwrap();
        let inf = if_m_estimator(
            &SquaredLossCost,
            &LinearRule::identity(1),
            &[1.0],
            &data,
            MEstimatorOptions::default(),
        )
        .unwrap();
        assert_eq!(inf.vector(0), &[0.0]);
        assert_eq!(inf.vector(1), &[0.0]);
    }

    #[test]
    fn ols_influence_examples() {
        let ones = Matrix::from_fn(2, 1, |_, _| 1.0);
        let inf = if_ols(&ones, &[0.0, 2.0], &[1.0]).unwrap();
        assert_abs_diff_eq!(inf.vector(0)[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(inf.vector(1)[0], 1.0, epsilon = 1e-14);

        // exact fit: zero residuals, zero influence
        let x = Matrix::new(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let inf = if_ols(&x, &[2.0, 4.0, 6.0], &[2.0]).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(inf.vector(i)[0], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn psi_hat_examples() {
        let zero = InfluenceSet::new(Matrix::zeros(4, 2), Provenance::Custom).unwrap();
        assert_eq!(psi_hat(&zero).unwrap().psi_hat, Matrix::zeros(2, 2));

        let pm = InfluenceSet::new(Matrix::new(2, 1, vec![-1.0, 1.0]).unwrap(), Provenance::Custom)
            .unwrap();
        assert_abs_diff_eq!(psi_hat(&pm).unwrap().psi_hat[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn psi_hat_is_symmetric_psd_and_consistent() {
        let mut rng = StdRng::seed_from_u64(99);
        let n = 4000;
        let values: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let data = Dataset::from_scalars(&values).unwrap();
        let inf = if_moment_mean_var(&data).unwrap();
        let psi = psi_hat(&inf).unwrap().psi_hat;
        let (eig, _) = psi.sym_eig(1e-8).unwrap();
        let trace = psi.trace().unwrap();
        assert!(eig.iter().all(|&l| l >= -1e-10 * trace));
        // mean-estimator covariance tends to Var(xi) = 1; 3 SE band with
        // SE ~ sqrt(2/n)
        let se = (2.0f64 / n as f64).sqrt();
        assert!((psi[(0, 0)] - 1.0).abs() <= 3.0 * se);
    }

    #[test]
    fn m_estimator_influence_is_consistent_on_quadratic_toy() {
        // True influence for mean estimation is xi - mu*; the empirical
        // error is |mu_hat - mu*|, which shrinks with n.
        let mut rng = StdRng::seed_from_u64(2024);
        let mut med_err = Vec::new();
        for &n in &[50usize, 200, 800] {
            let mut errs = Vec::new();
            for _ in 0..21 {
                let values: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                let data = Dataset::from_scalars(&values).unwrap();
                let mu_hat = crate::numkit::mean(&values);
                let inf = if_m_estimator(
                    &SquaredLossCost,
                    &LinearRule::identity(1),
                    &[mu_hat],
                    &data,
                    MEstimatorOptions::default(),
                )
                .unwrap();
                let worst = (0..n)
                    .map(|i| (inf.vector(i)[0] - values[i]).abs())
                    .fold(0.0f64, f64::max);
                errs.push(worst);
            }
            errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            med_err.push(errs[errs.len() / 2]);
        }
        assert!(med_err[0] > med_err[1] && med_err[1] > med_err[2], "{med_err:?}");
    }

    #[test]
    fn singular_hessian_policy() {
        // A rule that ignores theta makes the composed Hessian zero.
        struct DeadRule;
        impl crate::problems::DecisionRule for DeadRule {
            fn dim_theta(&self) -> usize {
                1
            }
            fn dim_x(&self) -> usize {
                1
            }
            fn value(&self, _t: &[f64], _z: Option<&[f64]>) -> Vec<f64> {
                vec![0.5]
            }
            fn jac_theta(&self, _t: &[f64], _z: Option<&[f64]>) -> Matrix {
                Matrix::zeros(1, 1)
            }
            fn hess_theta_component(&self, _i: usize, _t: &[f64], _z: Option<&[f64]>) -> Matrix {
                Matrix::zeros(1, 1)
            }
        }
        let data = Dataset::from_scalars(&[0.0, 1.0]).unwrap();
        let err = if_m_estimator(
            &SquaredLossCost,
            &DeadRule,
            &[0.0],
            &data,
            MEstimatorOptions::default(),
        );
        assert!(matches!(err, Err(Error::Rank(_))));
        let ok = if_m_estimator(
            &SquaredLossCost,
            &DeadRule,
            &[0.0],
            &data,
            MEstimatorOptions { pinv_fallback: true },
        )
        .unwrap();
        assert_eq!(ok.vector(0), &[0.0]);
    }
}
