//! Small dense linear algebra and statistical primitives.
//!
//! Everything here operates on matrices of modest size (at most a few
//! hundred rows), so the implementations favor robustness and
//! determinism over BLAS-grade throughput: a cyclic Jacobi eigensolver
//! backs the pseudo-inverse, LU with partial pivoting backs the linear
//! solves, and the normal CDF/quantile pair is accurate to roughly
//! machine precision.

use crate::error::{Error, Result};

/// Relative eigenvalue cutoff used by [`Matrix::pinv`] when callers do
/// not supply one.
pub const PINV_REL_TOL: f64 = 1e-10;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, validating shape and finiteness.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{}x{} matrix needs {} entries, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("matrix entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(entries: &[f64]) -> Self {
        let mut m = Self::zeros(entries.len(), entries.len());
        for (i, &v) in entries.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Stacks per-sample rows into an n x d matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(n, d, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.cols != v.len() {
            return Err(Error::Dimension(format!(
                "cannot apply {}x{} to vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `self += s * other`, in place.
    pub fn add_scaled(&mut self, other: &Matrix, s: f64) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension("shape mismatch in add_scaled".into()));
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += s * b;
        }
        Ok(())
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "shape mismatch: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Sum of diagonal entries.
    pub fn trace(&self) -> Result<f64> {
        if !self.is_square() {
            return Err(Error::Dimension(format!(
                "trace of non-square {}x{} matrix",
                self.rows, self.cols
            )));
        }
        Ok((0..self.rows).map(|i| self[(i, i)]).sum())
    }

    /// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
    ///
    /// The input must be symmetric up to `tol` relative to its largest
    /// entry. Returns eigenvalues sorted in descending order and the
    /// matching orthonormal eigenvector columns, so that
    /// `m = V diag(lambda) V^T`.
    pub fn sym_eig(&self, tol: f64) -> Result<(Vec<f64>, Matrix)> {
        if !self.is_square() {
            return Err(Error::Dimension("sym_eig needs a square matrix".into()));
        }
        let n = self.rows;
        let scale = self.max_abs().max(1.0);
        for i in 0..n {
            for j in (i + 1)..n {
                if (self[(i, j)] - self[(j, i)]).abs() > tol * scale {
                    return Err(Error::Input(format!(
                        "matrix is not symmetric within tolerance at ({i},{j})"
                    )));
                }
            }
        }
        // Work on the symmetrized copy so roundoff asymmetry cannot leak in.
        let mut a = Matrix::from_fn(n, n, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]));
        let mut v = Matrix::identity(n);
        let target = 1e-12 * a.frob_norm().max(f64::MIN_POSITIVE);
        for _sweep in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += 2.0 * a[(i, j)] * a[(i, j)];
                }
            }
            if off.sqrt() <= target {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq == 0.0 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                    let t = if theta >= 0.0 {
                        1.0 / (theta + (theta * theta + 1.0).sqrt())
                    } else {
                        -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                    };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| a[(j, j)].partial_cmp(&a[(i, i)]).unwrap());
        let eigenvalues: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
        let vectors = Matrix::from_fn(n, n, |i, j| v[(i, order[j])]);
        Ok((eigenvalues, vectors))
    }

    /// Moore-Penrose pseudo-inverse of a symmetric matrix.
    ///
    /// Eigenvalues with `|lambda| <= rel_tol * max|lambda|` are truncated
    /// to zero before inversion.
    pub fn pinv(&self, rel_tol: f64) -> Result<Matrix> {
        let (eig, v) = self.sym_eig(1e-8)?;
        let max_abs = eig.iter().fold(0.0f64, |m, l| m.max(l.abs()));
        let cutoff = rel_tol * max_abs;
        let inv: Vec<f64> = eig
            .iter()
            .map(|&l| if l.abs() <= cutoff { 0.0 } else { 1.0 / l })
            .collect();
        // V diag(inv) V^T
        let n = self.rows;
        let mut out = Matrix::zeros(n, n);
        for k in 0..n {
            if inv[k] == 0.0 {
                continue;
            }
            for i in 0..n {
                let w = v[(i, k)] * inv[k];
                for j in 0..n {
                    out[(i, j)] += w * v[(j, k)];
                }
            }
        }
        Ok(out)
    }

    /// Ratio of largest to smallest absolute eigenvalue of a symmetric matrix.
    pub fn sym_condition(&self) -> Result<f64> {
        let (eig, _) = self.sym_eig(1e-8)?;
        let max = eig.iter().fold(0.0f64, |m, l| m.max(l.abs()));
        let min = eig.iter().fold(f64::INFINITY, |m, l| m.min(l.abs()));
        if min == 0.0 {
            Ok(f64::INFINITY)
        } else {
            Ok(max / min)
        }
    }

    /// LU factorization with partial pivoting, for repeated solves.
    pub fn lu(&self) -> Result<LuFactor> {
        LuFactor::new(self)
    }

    /// Solves `self * x = rhs` for a single right-hand side.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.lu()?.solve(rhs)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorization with partial pivoting of a square matrix.
pub struct LuFactor {
    n: usize,
    lu: Vec<f64>,
    pivots: Vec<usize>,
}

impl LuFactor {
    fn new(m: &Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension("LU needs a square matrix".into()));
        }
        let n = m.rows();
        let mut lu = m.data.clone();
        let mut pivots = vec![0usize; n];
        let scale = m.max_abs().max(1.0);
        for k in 0..n {
            let mut p = k;
            let mut max = lu[k * n + k].abs();
            for i in (k + 1)..n {
                let v = lu[i * n + k].abs();
                if v > max {
                    max = v;
                    p = i;
                }
            }
            if max <= 1e-14 * scale {
                return Err(Error::Rank(format!(
                    "matrix is singular to working precision (pivot {k})"
                )));
            }
            pivots[k] = p;
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
            }
            let inv = 1.0 / lu[k * n + k];
            for i in (k + 1)..n {
                let f = lu[i * n + k] * inv;
                lu[i * n + k] = f;
                for j in (k + 1)..n {
                    lu[i * n + j] -= f * lu[k * n + j];
                }
            }
        }
        Ok(Self { n, lu, pivots })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.n {
            return Err(Error::Dimension("rhs length mismatch in LU solve".into()));
        }
        let n = self.n;
        let mut x = rhs.to_vec();
        for k in 0..n {
            x.swap(k, self.pivots[k]);
            for i in (k + 1)..n {
                x[i] -= self.lu[i * n + k] * x[k];
            }
        }
        for k in (0..n).rev() {
            for j in (k + 1)..n {
                x[k] -= self.lu[k * n + j] * x[j];
            }
            x[k] /= self.lu[k * n + k];
        }
        Ok(x)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn mean(a: &[f64]) -> f64 {
    if a.is_empty() {
        return f64::NAN;
    }
    a.iter().sum::<f64>() / a.len() as f64
}

/// Sample variance with an explicit divisor (`n` or `n - 1`).
pub fn variance(a: &[f64], divisor: usize) -> f64 {
    let m = mean(a);
    a.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / divisor as f64
}

/// Outer product `u v^T`.
pub fn outer(u: &[f64], v: &[f64]) -> Matrix {
    Matrix::from_fn(u.len(), v.len(), |i, j| u[i] * v[j])
}

/// Numerically careful sum: pairwise reduction, independent of chunking.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal CDF via Cody's rational erf/erfc approximation.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

// W. J. Cody's SPECFUN rational approximations for erf/erfc, accurate to
// about 1e-16 relative over the double range.
fn erfc(x: f64) -> f64 {
    let ax = x.abs();
    if ax < 0.46875 {
        return 1.0 - erf_small(x);
    }
    let z = if ax <= 4.0 {
        // erfc(ax) = exp(-ax^2) * R2(ax)
        const C: [f64; 9] = [
            5.64188496988670089e-1,
            8.88314979438837594e0,
            6.61191906371416295e1,
            2.98635138197400131e2,
            8.81952221241769090e2,
            1.71204761263407058e3,
            2.05107837782607147e3,
            1.23033935479799725e3,
            2.15311535474403846e-8,
        ];
        const D: [f64; 8] = [
            1.57449261107098347e1,
            1.17693950891312499e2,
            5.37181101862009858e2,
            1.62138957456669019e3,
            3.29079923573345963e3,
            4.36261909014324716e3,
            3.43936767414372164e3,
            1.23033935480374942e3,
        ];
        let mut num = C[8] * ax;
        let mut den = ax;
        for i in 0..7 {
            num = (num + C[i]) * ax;
            den = (den + D[i]) * ax;
        }
        ((num + C[7]) / (den + D[7])) * (-ax * ax).exp()
    } else {
        // erfc(ax) = exp(-ax^2)/ax * (1/sqrt(pi) + R3(1/ax^2)/ax^2)
        const P: [f64; 6] = [
            3.05326634961232344e-1,
            3.60344899949804439e-1,
            1.25781726111229246e-1,
            1.60837851487422766e-2,
            6.58749161529837803e-4,
            1.63153871373020978e-2,
        ];
        const Q: [f64; 5] = [
            2.56852019228982242e0,
            1.87295284992346047e0,
            5.27905102951428412e-1,
            6.05183413124413191e-2,
            2.33520497626869185e-3,
        ];
        let inv2 = 1.0 / (ax * ax);
        let mut num = P[5] * inv2;
        let mut den = inv2;
        for i in 0..4 {
            num = (num + P[i]) * inv2;
            den = (den + Q[i]) * inv2;
        }
        let r = inv2 * (num + P[4]) / (den + Q[4]);
        ((1.0 / std::f64::consts::PI.sqrt()) - r) * (-ax * ax).exp() / ax
    };
    if x < 0.0 {
        2.0 - z
    } else {
        z
    }
}

fn erf_small(x: f64) -> f64 {
    const A: [f64; 5] = [
        3.16112374387056560e0,
        1.13864154151050156e2,
        3.77485237685302021e2,
        3.20937758913846947e3,
        1.85777706184603153e-1,
    ];
    const B: [f64; 4] = [
        2.36012909523441209e1,
        2.44024637934444173e2,
        1.28261652607737228e3,
        2.84423683343917062e3,
    ];
    let z = x * x;
    let mut num = A[4] * z;
    let mut den = z;
    for i in 0..3 {
        num = (num + A[i]) * z;
        den = (den + B[i]) * z;
    }
    x * (num + A[3]) / (den + B[3])
}

/// Standard normal quantile: Acklam's rational approximation plus one
/// Newton refinement against [`normal_cdf`].
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "normal_quantile needs p in (0,1), got {p}"
        )));
    }
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239e0,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838e0,
        -2.549732539343734e0,
        4.374664141464968e0,
        2.938163982698783e0,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996e0,
        3.754408661907416e0,
    ];
    const P_LOW: f64 = 0.02425;
    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    // One Newton step sharpens the approximation to near machine precision.
    let err = normal_cdf(x) - p;
    let pdf = normal_pdf(x);
    Ok(if pdf > 0.0 { x - err / pdf } else { x })
}

/// Silverman's rule-of-thumb bandwidth `1.06 * sd * n^(-1/5)`.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let sd = variance(samples, n - 1).sqrt();
    if sd == 0.0 {
        return Err(Error::DegenerateData(
            "zero spread: supply an explicit bandwidth".into(),
        ));
    }
    Ok(1.06 * sd * (n as f64).powf(-0.2))
}

/// Gaussian kernel density estimate at a point.
///
/// With no explicit bandwidth, Silverman's rule is used (which then
/// requires at least two samples with nonzero spread).
pub fn kde_density(samples: &[f64], at: f64, bandwidth: Option<f64>) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let b = match bandwidth {
        Some(b) if b > 0.0 => b,
        Some(b) => {
            return Err(Error::Domain(format!("bandwidth must be positive, got {b}")));
        }
        None => silverman_bandwidth(samples)?,
    };
    let n = samples.len() as f64;
    let sum: f64 = samples.iter().map(|&x| normal_pdf((at - x) / b)).sum();
    Ok(sum / (n * b))
}

/// `ceil(n q)`-th order statistic (left-continuous generalized inverse).
pub fn empirical_quantile(samples: &[f64], q: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Input("empirical_quantile of empty sample".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!(
            "empirical_quantile needs q in (0,1), got {q}"
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let k = ((n as f64 * q).ceil() as usize).clamp(1, n);
    Ok(sorted[k - 1])
}
