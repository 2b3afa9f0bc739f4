//! Kernel smoothing of piecewise-smooth scalar costs.
//!
//! A nonsmooth cost is written as `h = f(g(x; xi))` with `g` smooth and
//! `f` scalar and piecewise smooth. The smoothed surrogate is the
//! kernel convolution `f_m(z) = m * integral f(u) phi(m (z - u)) du`,
//! which dominates a convex `f`, converges to it pointwise as `m`
//! grows, and whose gradient at a kink tends to the average of the
//! one-sided derivatives.

use crate::error::{Error, Result};

/// Smoothing levels used for convergence diagnostics.
pub const M_SCHEDULE: [f64; 3] = [10.0, 100.0, 1000.0];

/// Compactly supported smoothing kernels on `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoothKernel {
    /// `phi(t) = 1/2` on `[-1, 1]`.
    Box,
    /// `phi(t) = 3/4 (1 - t^2)` on `[-1, 1]`.
    Epanechnikov,
}

impl SmoothKernel {
    pub fn density(&self, t: f64) -> f64 {
        if !(-1.0..=1.0).contains(&t) {
            return 0.0;
        }
        match self {
            SmoothKernel::Box => 0.5,
            SmoothKernel::Epanechnikov => 0.75 * (1.0 - t * t),
        }
    }

    /// Kernel mass on `[-1, t]`.
    fn cdf(&self, t: f64) -> f64 {
        let t = t.clamp(-1.0, 1.0);
        match self {
            SmoothKernel::Box => (t + 1.0) / 2.0,
            SmoothKernel::Epanechnikov => (3.0 * t - t * t * t + 2.0) / 4.0,
        }
    }

    /// Partial first moment `integral_{-1}^{t} u phi(u) du`.
    fn first_moment(&self, t: f64) -> f64 {
        let t = t.clamp(-1.0, 1.0);
        match self {
            SmoothKernel::Box => (t * t - 1.0) / 4.0,
            SmoothKernel::Epanechnikov => 0.75 * (t * t / 2.0 - t.powi(4) / 4.0) - 3.0 / 16.0,
        }
    }
}

/// Continuous piecewise-linear scalar function, the closed-form case of
/// the convolution.
#[derive(Debug, Clone)]
pub struct PiecewiseLinear {
    /// Strictly increasing kink locations; may be empty for an affine map.
    breakpoints: Vec<f64>,
    /// One slope per segment, `breakpoints.len() + 1` entries.
    slopes: Vec<f64>,
    /// Function values at the breakpoints.
    values: Vec<f64>,
    /// Anchor `(x0, f(x0))` used when there are no breakpoints.
    anchor: (f64, f64),
}

impl PiecewiseLinear {
    pub fn new(breakpoints: Vec<f64>, slopes: Vec<f64>, value_at_first_break: f64) -> Result<Self> {
        if slopes.len() != breakpoints.len() + 1 {
            return Err(Error::Input(format!(
                "{} breakpoints need {} slopes, got {}",
                breakpoints.len(),
                breakpoints.len() + 1,
                slopes.len()
            )));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Input("breakpoints must be strictly increasing".into()));
        }
        let mut values = Vec::with_capacity(breakpoints.len());
        if let Some(&b0) = breakpoints.first() {
            values.push(value_at_first_break);
            for k in 1..breakpoints.len() {
                let prev = values[k - 1];
                values.push(prev + slopes[k] * (breakpoints[k] - breakpoints[k - 1]));
            }
            let _ = b0;
        }
        Ok(Self {
            breakpoints,
            slopes,
            values,
            anchor: (0.0, value_at_first_break),
        })
    }

    pub fn affine(slope: f64, value_at_zero: f64) -> Self {
        Self {
            breakpoints: Vec::new(),
            slopes: vec![slope],
            values: Vec::new(),
            anchor: (0.0, value_at_zero),
        }
    }

    /// `f(z) = |z|`.
    pub fn abs() -> Self {
        Self::new(vec![0.0], vec![-1.0, 1.0], 0.0).unwrap()
    }

    pub fn value(&self, z: f64) -> f64 {
        if self.breakpoints.is_empty() {
            return self.anchor.1 + self.slopes[0] * (z - self.anchor.0);
        }
        let seg = self.segment_of(z);
        let (bx, bv) = if seg == 0 {
            (self.breakpoints[0], self.values[0])
        } else {
            (self.breakpoints[seg - 1], self.values[seg - 1])
        };
        bv + self.slopes[seg] * (z - bx)
    }

    /// Derivative away from kinks; at a kink, the average of the two
    /// adjacent slopes.
    pub fn grad(&self, z: f64) -> f64 {
        for (k, &b) in self.breakpoints.iter().enumerate() {
            if z == b {
                return 0.5 * (self.slopes[k] + self.slopes[k + 1]);
            }
        }
        self.slopes[self.segment_of(z)]
    }

    fn segment_of(&self, z: f64) -> usize {
        self.breakpoints.iter().take_while(|&&b| z > b).count()
    }

    /// Intercept form `(a, b)` with `f(u) = a + b u` on segment `seg`.
    fn segment_affine(&self, seg: usize) -> (f64, f64) {
        let b = self.slopes[seg];
        let (x0, v0) = if self.breakpoints.is_empty() {
            self.anchor
        } else if seg == 0 {
            (self.breakpoints[0], self.values[0])
        } else {
            (self.breakpoints[seg - 1], self.values[seg - 1])
        };
        (v0 - b * x0, b)
    }
}

/// A piecewise-smooth scalar factor together with a kernel and level.
pub struct SmoothedCost {
    f: ScalarFactor,
    kernel: SmoothKernel,
    m: f64,
}

enum ScalarFactor {
    Linear(PiecewiseLinear),
    General(Box<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl SmoothedCost {
    pub fn piecewise_linear(f: PiecewiseLinear, kernel: SmoothKernel, m: f64) -> Result<Self> {
        if m <= 0.0 {
            return Err(Error::Domain(format!("smoothing level must be positive, got {m}")));
        }
        Ok(Self {
            f: ScalarFactor::Linear(f),
            kernel,
            m,
        })
    }

    pub fn general(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        kernel: SmoothKernel,
        m: f64,
    ) -> Result<Self> {
        if m <= 0.0 {
            return Err(Error::Domain(format!("smoothing level must be positive, got {m}")));
        }
        Ok(Self {
            f: ScalarFactor::General(Box::new(f)),
            kernel,
            m,
        })
    }

    pub fn level(&self) -> f64 {
        self.m
    }

    /// The unsmoothed factor `f(z)`.
    pub fn base_value(&self, z: f64) -> f64 {
        match &self.f {
            ScalarFactor::Linear(pl) => pl.value(z),
            ScalarFactor::General(f) => f(z),
        }
    }

    /// Smoothed value `f_m(z)`, closed form in the piecewise-linear
    /// case and adaptive quadrature (tolerance 1e-8) otherwise.
    pub fn value(&self, z: f64) -> f64 {
        match &self.f {
            ScalarFactor::Linear(pl) => {
                // Integrate f(z - t/m) phi(t) over t in [-1, 1], splitting at
                // the kernel-space images of the breakpoints. On each piece
                // f is affine, so only the kernel CDF and partial first
                // moment are needed.
                let m = self.m;
                let mut cuts = vec![-1.0f64];
                for &b in pl.breakpoints.iter().rev() {
                    let t = m * (z - b);
                    if t > -1.0 && t < 1.0 {
                        cuts.push(t);
                    }
                }
                cuts.push(1.0);
                let mut total = 0.0;
                for w in cuts.windows(2) {
                    let (t0, t1) = (w[0], w[1]);
                    if t1 <= t0 {
                        continue;
                    }
                    let mid = 0.5 * (t0 + t1);
                    let seg = pl.segment_of(z - mid / m);
                    let (a, b) = pl.segment_affine(seg);
                    let mass = self.kernel.cdf(t1) - self.kernel.cdf(t0);
                    let moment = self.kernel.first_moment(t1) - self.kernel.first_moment(t0);
                    total += (a + b * z) * mass - (b / m) * moment;
                }
                total
            }
            ScalarFactor::General(f) => {
                let m = self.m;
                let kernel = self.kernel;
                adaptive_simpson(&|t| f(z - t / m) * kernel.density(t), -1.0, 1.0, 1e-8)
            }
        }
    }

    /// Gradient of the smoothed value.
    pub fn grad(&self, z: f64) -> f64 {
        let m = self.m;
        match &self.f {
            ScalarFactor::Linear(pl) => {
                // Slopes weighted by the kernel mass each segment receives.
                if pl.breakpoints.is_empty() {
                    return pl.slopes[0];
                }
                let mut total = 0.0;
                let k = pl.breakpoints.len();
                for seg in 0..=k {
                    // u in (b_{seg-1}, b_seg) maps to t in (m(z-b_seg), m(z-b_{seg-1}))
                    let lo = if seg == k {
                        -1.0
                    } else {
                        m * (z - pl.breakpoints[seg])
                    };
                    let hi = if seg == 0 {
                        1.0
                    } else {
                        m * (z - pl.breakpoints[seg - 1])
                    };
                    let mass = self.kernel.cdf(hi) - self.kernel.cdf(lo);
                    if mass > 0.0 {
                        total += pl.slopes[seg] * mass;
                    }
                }
                total
            }
            ScalarFactor::General(f) => match self.kernel {
                // d/dz f_m picks up only the boundary terms of the box kernel.
                SmoothKernel::Box => (m / 2.0) * (f(z + 1.0 / m) - f(z - 1.0 / m)),
                // d/dz f_m(z) = m * integral f(z - t/m) phi'(t) dt with
                // phi'(t) = -3t/2 on the support.
                SmoothKernel::Epanechnikov => {
                    m * adaptive_simpson(&|t| f(z - t / m) * (-1.5 * t), -1.0, 1.0, 1e-8)
                }
            },
        }
    }
}

/// Recursive adaptive Simpson quadrature.
fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1)
                + recurse(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
        }
    }
    // Seed with a handful of panels so narrow features are not missed.
    let panels = 16;
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let x0 = a + k as f64 * h;
        let x1 = x0 + h;
        let f0 = f(x0);
        let f1 = f(x1);
        let (whole, m, fm) = simpson(f, x0, f0, x1, f1);
        total += recurse(f, x0, f0, x1, f1, whole, m, fm, tol / panels as f64, 30);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn abs_box_at_zero() {
        for &m in &M_SCHEDULE {
            let s = SmoothedCost::piecewise_linear(PiecewiseLinear::abs(), SmoothKernel::Box, m)
                .unwrap();
            assert_abs_diff_eq!(s.value(0.0), 1.0 / (2.0 * m), epsilon = 1e-14);
        }
    }

    #[test]
    fn affine_is_fixed_point_of_smoothing() {
        for kernel in [SmoothKernel::Box, SmoothKernel::Epanechnikov] {
            let f = PiecewiseLinear::affine(2.5, -0.75);
            let s = SmoothedCost::piecewise_linear(f.clone(), kernel, 10.0).unwrap();
            for &z in &[-2.0, -0.3, 0.0, 0.4, 1.7] {
                assert_abs_diff_eq!(s.value(z), f.value(z), epsilon = 1e-12);
                assert_abs_diff_eq!(s.grad(z), 2.5, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn smoothing_dominates_and_converges() {
        for kernel in [SmoothKernel::Box, SmoothKernel::Epanechnikov] {
            let mut prev_err = f64::INFINITY;
            for &m in &M_SCHEDULE {
                let s = SmoothedCost::piecewise_linear(PiecewiseLinear::abs(), kernel, m).unwrap();
                let mut worst = 0.0f64;
                let mut z = -1.0;
                while z <= 1.0 {
                    let fm = s.value(z);
                    assert!(fm >= z.abs() - 1e-12, "f_m must dominate f at z={z}");
                    worst = worst.max(fm - z.abs());
                    z += 0.01;
                }
                assert!(worst <= prev_err);
                prev_err = worst;
            }
        }
    }

    #[test]
    fn kink_gradient_averages_one_sided_slopes() {
        // slopes 1 and 3 around a kink at zero: smoothed gradient at the
        // kink is exactly their average for any symmetric kernel level.
        let f = PiecewiseLinear::new(vec![0.0], vec![1.0, 3.0], 0.0).unwrap();
        for kernel in [SmoothKernel::Box, SmoothKernel::Epanechnikov] {
            for &m in &M_SCHEDULE {
                let s = SmoothedCost::piecewise_linear(f.clone(), kernel, m).unwrap();
                assert_abs_diff_eq!(s.grad(0.0), 2.0, epsilon = 1e-12);
            }
        }
        assert_abs_diff_eq!(f.grad(0.0), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn quadrature_matches_closed_form() {
        let closed =
            SmoothedCost::piecewise_linear(PiecewiseLinear::abs(), SmoothKernel::Epanechnikov, 25.0)
                .unwrap();
        let general =
            SmoothedCost::general(|z: f64| z.abs(), SmoothKernel::Epanechnikov, 25.0).unwrap();
        for &z in &[-0.2, -0.013, 0.0, 0.007, 0.31] {
            assert_abs_diff_eq!(general.value(z), closed.value(z), epsilon = 1e-7);
        }
        let box_general = SmoothedCost::general(|z: f64| z.abs(), SmoothKernel::Box, 25.0).unwrap();
        let box_closed =
            SmoothedCost::piecewise_linear(PiecewiseLinear::abs(), SmoothKernel::Box, 25.0).unwrap();
        for &z in &[-0.2, 0.0, 0.31] {
            assert_abs_diff_eq!(box_general.grad(z), box_closed.grad(z), epsilon = 1e-7);
            assert_abs_diff_eq!(general.grad(z), closed.grad(z), epsilon = 1e-7);
        }
    }

    #[test]
    fn invalid_construction_rejected() {
        assert!(PiecewiseLinear::new(vec![1.0, 0.0], vec![0.0; 3], 0.0).is_err());
        assert!(PiecewiseLinear::new(vec![0.0], vec![1.0], 0.0).is_err());
        assert!(
            SmoothedCost::piecewise_linear(PiecewiseLinear::abs(), SmoothKernel::Box, 0.0).is_err()
        );
    }
}
