//! Delay weight functions on `[-r, 0]`.
//!
//! A [`DelayKernel`] is a scalar weight `g(θ)` used in distributed-delay
//! terms such as `∫ g(θ) y(t+θ) dθ`. Constant and exponential kernels carry
//! closed forms for their norms and Laplace transforms
//! `L_g(λ) = ∫_{-r}^0 g(θ) e^{λθ} dθ`. A tabulated kernel is the piecewise
//! linear interpolant of its values, and its transforms and norms are
//! integrated exactly segment by segment.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Number of uniform points used to integrate `|f + g|` for mixed-sign sums.
pub const SUM_NORM_POINTS: usize = 2049;

/// Below this `|x|` the Laplace closed forms switch to their Taylor series.
const SERIES_THRESHOLD: f64 = 1e-6;

/// The derivative closed form loses `eps/|x|` relative accuracy, so its
/// series takes over on a wider disc.
const DERIVATIVE_SERIES_THRESHOLD: f64 = 5e-2;

#[derive(Debug, Clone, PartialEq)]
pub enum KernelShape {
    Zero,
    Constant { a: f64 },
    /// `θ ↦ κ e^{μθ}`
    Exponential { kappa: f64, mu: f64 },
    Sum(Box<DelayKernel>, Box<DelayKernel>),
    /// Values on the uniform grid `θ_j = -r + j r/(n-1)`, `j = 0..n`.
    Table { values: Vec<f64> },
}

/// A weight function on `[-r, 0]` together with its horizon `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayKernel {
    shape: KernelShape,
    horizon: f64,
}

fn check_horizon(r: f64) -> Result<()> {
    if r.is_finite() && r > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("delay horizon must be positive, got {r}")))
    }
}

impl DelayKernel {
    pub fn zero(r: f64) -> Result<Self> {
        check_horizon(r)?;
        Ok(Self {
            shape: KernelShape::Zero,
            horizon: r,
        })
    }

    pub fn constant(r: f64, a: f64) -> Result<Self> {
        check_horizon(r)?;
        Ok(Self {
            shape: KernelShape::Constant { a },
            horizon: r,
        })
    }

    pub fn exponential(r: f64, kappa: f64, mu: f64) -> Result<Self> {
        check_horizon(r)?;
        Ok(Self {
            shape: KernelShape::Exponential { kappa, mu },
            horizon: r,
        })
    }

    /// Tabulated kernel on a uniform grid including both endpoints.
    pub fn table(r: f64, values: Vec<f64>) -> Result<Self> {
        check_horizon(r)?;
        if values.len() < 2 {
            return Err(Error::Config(format!(
                "table kernel needs at least 2 grid points, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("table kernel values must be finite".into()));
        }
        Ok(Self {
            shape: KernelShape::Table { values },
            horizon: r,
        })
    }

    pub fn sum(left: DelayKernel, right: DelayKernel) -> Result<Self> {
        if (left.horizon - right.horizon).abs() > 1e-12 * left.horizon.max(right.horizon) {
            return Err(Error::Config(format!(
                "sum operands have different horizons ({} vs {})",
                left.horizon, right.horizon
            )));
        }
        let horizon = left.horizon;
        Ok(Self {
            shape: KernelShape::Sum(Box::new(left), Box::new(right)),
            horizon,
        })
    }

    /// Sum of a non-empty list of kernels, folded left.
    pub fn sum_all(terms: Vec<DelayKernel>) -> Result<Self> {
        let mut it = terms.into_iter();
        let first = it
            .next()
            .ok_or_else(|| Error::Config("sum kernel needs at least one term".into()))?;
        it.try_fold(first, DelayKernel::sum)
    }

    pub fn shape(&self) -> &KernelShape {
        &self.shape
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn is_zero(&self) -> bool {
        match &self.shape {
            KernelShape::Zero => true,
            KernelShape::Constant { a } => *a == 0.0,
            KernelShape::Exponential { kappa, .. } => *kappa == 0.0,
            KernelShape::Sum(l, r) => l.is_zero() && r.is_zero(),
            KernelShape::Table { values } => values.iter().all(|v| *v == 0.0),
        }
    }

    /// Pointwise value; tables interpolate linearly between grid points.
    pub fn evaluate(&self, theta: f64) -> Result<f64> {
        let r = self.horizon;
        if !(-r - 1e-12 * r..=0.0).contains(&theta) {
            return Err(Error::Domain(format!("theta = {theta} outside [-{r}, 0]")));
        }
        Ok(self.value_unchecked(theta.max(-r)))
    }

    fn value_unchecked(&self, theta: f64) -> f64 {
        match &self.shape {
            KernelShape::Zero => 0.0,
            KernelShape::Constant { a } => *a,
            KernelShape::Exponential { kappa, mu } => kappa * (mu * theta).exp(),
            KernelShape::Sum(l, r) => l.value_unchecked(theta) + r.value_unchecked(theta),
            KernelShape::Table { values } => {
                let n = values.len() - 1;
                let s = (theta + self.horizon) / self.horizon * n as f64;
                let j = (s.floor() as usize).min(n - 1);
                let frac = s - j as f64;
                values[j] * (1.0 - frac) + values[j + 1] * frac
            }
        }
    }

    fn sign_definite(&self) -> Option<f64> {
        // Some(+1) if g >= 0 everywhere, Some(-1) if g <= 0, None if unknown.
        let sign_of = |x: f64| if x >= 0.0 { 1.0 } else { -1.0 };
        match &self.shape {
            KernelShape::Zero => Some(1.0),
            KernelShape::Constant { a } => Some(sign_of(*a)),
            KernelShape::Exponential { kappa, .. } => Some(sign_of(*kappa)),
            KernelShape::Table { values } => {
                if values.iter().all(|v| *v >= 0.0) {
                    Some(1.0)
                } else if values.iter().all(|v| *v <= 0.0) {
                    Some(-1.0)
                } else {
                    None
                }
            }
            KernelShape::Sum(l, r) => {
                if l.is_zero() {
                    return r.sign_definite();
                }
                if r.is_zero() {
                    return l.sign_definite();
                }
                match (l.sign_definite(), r.sign_definite()) {
                    (Some(a), Some(b)) if a == b => Some(a),
                    _ => None,
                }
            }
        }
    }

    /// `∫_{-r}^0 |g(θ)| dθ`.
    pub fn l1_norm(&self) -> f64 {
        let r = self.horizon;
        match &self.shape {
            KernelShape::Zero => 0.0,
            KernelShape::Constant { a } => a.abs() * r,
            KernelShape::Exponential { kappa, mu } => kappa.abs() * r * phi1_real(mu * r),
            KernelShape::Table { values } => segments(values, r)
                .map(|(h, a, b)| {
                    if a * b >= 0.0 {
                        0.5 * h * (a.abs() + b.abs())
                    } else {
                        0.5 * h * (a * a + b * b) / (a.abs() + b.abs())
                    }
                })
                .sum(),
            KernelShape::Sum(l, rt) => match self.sign_definite() {
                // A sign-definite sum has no cancellation: the norm is additive.
                Some(_) => l.l1_norm() + rt.l1_norm(),
                None => self.sampled_integral(SUM_NORM_POINTS, f64::abs),
            },
        }
    }

    /// `(∫_{-r}^0 g(θ)² dθ)^{1/2}`.
    pub fn l2_norm(&self) -> f64 {
        let r = self.horizon;
        match &self.shape {
            KernelShape::Zero => 0.0,
            KernelShape::Constant { a } => a.abs() * r.sqrt(),
            KernelShape::Exponential { kappa, mu } => {
                kappa.abs() * (r * phi1_real(2.0 * mu * r)).sqrt()
            }
            KernelShape::Table { values } => segments(values, r)
                .map(|(h, a, b)| h * (a * a + a * b + b * b) / 3.0)
                .sum::<f64>()
                .sqrt(),
            KernelShape::Sum(..) => self.sampled_integral(SUM_NORM_POINTS, |v| v * v).sqrt(),
        }
    }

    fn sampled_integral(&self, points: usize, f: impl Fn(f64) -> f64) -> f64 {
        let r = self.horizon;
        let h = r / (points - 1) as f64;
        trapezoid(
            (0..points).map(|j| f(self.value_unchecked(-r + j as f64 * h))),
            r,
        )
    }

    /// `L_g(λ) = ∫_{-r}^0 g(θ) e^{λθ} dθ`.
    pub fn laplace(&self, lambda: Complex64) -> Complex64 {
        let r = self.horizon;
        match &self.shape {
            KernelShape::Zero => Complex64::new(0.0, 0.0),
            KernelShape::Constant { a } => *a * r * phi1(lambda * r),
            KernelShape::Exponential { kappa, mu } => *kappa * r * phi1((lambda + mu) * r),
            KernelShape::Sum(l, rt) => l.laplace(lambda) + rt.laplace(lambda),
            KernelShape::Table { values } => table_quadrature(values, r, lambda, false),
        }
    }

    /// `d/dλ L_g(λ) = ∫_{-r}^0 θ g(θ) e^{λθ} dθ`.
    pub fn laplace_derivative(&self, lambda: Complex64) -> Complex64 {
        let r = self.horizon;
        match &self.shape {
            KernelShape::Zero => Complex64::new(0.0, 0.0),
            KernelShape::Constant { a } => *a * r * r * phi1_prime(lambda * r),
            KernelShape::Exponential { kappa, mu } => {
                *kappa * r * r * phi1_prime((lambda + mu) * r)
            }
            KernelShape::Sum(l, rt) => l.laplace_derivative(lambda) + rt.laplace_derivative(lambda),
            KernelShape::Table { values } => table_quadrature(values, r, lambda, true),
        }
    }

    /// Trapezoid weights `w_j g(θ_j)` on the step grid `θ_j = -r + j h`,
    /// `h = r / intervals`, ordered oldest (`θ = -r`) first.
    ///
    /// `Σ_j weights[j] · x(θ_j)` is the discrete history functional shared by
    /// the simulator, the Picard solver and the resolvent check.
    pub fn trapezoid_weights(&self, intervals: usize) -> Vec<f64> {
        let r = self.horizon;
        let h = r / intervals as f64;
        (0..=intervals)
            .map(|j| {
                let w = if j == 0 || j == intervals { 0.5 * h } else { h };
                let theta = if j == intervals { 0.0 } else { -r + j as f64 * h };
                w * self.value_unchecked(theta)
            })
            .collect()
    }
}

fn trapezoid(values: impl ExactSizeIterator<Item = f64>, r: f64) -> f64 {
    let n = values.len();
    let h = r / (n - 1) as f64;
    let mut acc = 0.0;
    for (j, v) in values.enumerate() {
        let w = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
        acc += w * v;
    }
    acc * h
}

/// `(h, g(θ_j), g(θ_{j+1}))` for each interval of a table.
fn segments(values: &[f64], r: f64) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
    let h = r / (values.len() - 1) as f64;
    values.windows(2).map(move |w| (h, w[0], w[1]))
}

/// `I_n(x) = ∫_0^1 s^n e^{-xs} ds` for `n = 0, 1, 2`.
fn segment_moments(x: Complex64) -> [Complex64; 3] {
    if x.norm() < 1.0 {
        // Σ_m (-x)^m / (m! (n+m+1))
        let mut out = [Complex64::new(0.0, 0.0); 3];
        let mut term = Complex64::new(1.0, 0.0);
        for m in 0..24 {
            for (n, acc) in out.iter_mut().enumerate() {
                *acc += term / (n + m + 1) as f64;
            }
            term *= -x / (m + 1) as f64;
        }
        out
    } else {
        let e = (-x).exp();
        let i0 = -expm1(-x) / x;
        let i1 = (i0 - e) / x;
        let i2 = (2.0 * i1 - e) / x;
        [i0, i1, i2]
    }
}

/// Exact transform of the piecewise-linear interpolant; with `moment` the
/// integrand carries an extra factor `θ`.
fn table_quadrature(values: &[f64], r: f64, lambda: Complex64, moment: bool) -> Complex64 {
    let n = values.len() - 1;
    let mut acc = Complex64::new(0.0, 0.0);
    for (j, (h, ga, gb)) in segments(values, r).enumerate() {
        // θ = θ_{j+1} - h s on the interval, s ∈ [0, 1].
        let tb = if j + 1 == n { 0.0 } else { -r + (j + 1) as f64 * h };
        let [i0, i1, i2] = segment_moments(lambda * h);
        let d = ga - gb;
        let inner = if moment {
            tb * gb * i0 + (tb * d - h * gb) * i1 - h * d * i2
        } else {
            gb * i0 + d * i1
        };
        acc += h * (lambda * tb).exp() * inner;
    }
    acc
}

/// `e^z - 1` without cancellation for small `|z|`.
pub(crate) fn expm1(z: Complex64) -> Complex64 {
    let (a, b) = (z.re, z.im);
    let half_sin = (0.5 * b).sin();
    Complex64::new(
        a.exp_m1() * b.cos() - 2.0 * half_sin * half_sin,
        a.exp() * b.sin(),
    )
}

/// `(1 - e^{-x}) / x`, analytic with value 1 at the origin.
pub(crate) fn phi1(x: Complex64) -> Complex64 {
    if x.norm() < SERIES_THRESHOLD {
        // Σ_{n=0}^{5} (-x)^n / (n+1)!
        let mut term = Complex64::new(1.0, 0.0);
        let mut acc = term;
        for n in 1..6 {
            term *= -x / (n as f64 + 1.0);
            acc += term;
        }
        acc
    } else {
        -expm1(-x) / x
    }
}

fn phi1_real(x: f64) -> f64 {
    phi1(Complex64::new(x, 0.0)).re
}

/// Derivative of [`phi1`]: `(e^{-x}(1+x) - 1) / x²`, value `-1/2` at 0.
pub(crate) fn phi1_prime(x: Complex64) -> Complex64 {
    if x.norm() < DERIVATIVE_SERIES_THRESHOLD {
        // phi1(x) = Σ (-1)^n x^n/(n+1)!, so phi1'(x) = Σ_{n≥1} (-1)^n n x^{n-1}/(n+1)!
        let mut acc = Complex64::new(0.0, 0.0);
        let mut power = Complex64::new(1.0, 0.0);
        let mut fact = 2.0; // (n+1)!
        for n in 1..14 {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * n as f64 * power / fact;
            power *= x;
            fact *= n as f64 + 2.0;
        }
        acc
    } else {
        let em = expm1(-x);
        (em * (1.0 + x) + x) / (x * x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn evaluate_examples() {
        let e = DelayKernel::exponential(1.0, 1.0, 0.0).unwrap();
        assert_eq!(e.evaluate(-0.5).unwrap(), 1.0);
        let k = DelayKernel::constant(2.0, 0.3).unwrap();
        assert_eq!(k.evaluate(-2.0).unwrap(), 0.3);
        let e = DelayKernel::exponential(1.0, 2.0, 1.0).unwrap();
        assert_relative_eq!(e.evaluate(-1.0).unwrap(), 0.735758882, epsilon = 1e-9);
    }

    #[test]
    fn evaluate_outside_domain_is_error() {
        let k = DelayKernel::constant(1.0, 0.3).unwrap();
        assert!(matches!(k.evaluate(0.1), Err(Error::Domain(_))));
        assert!(matches!(k.evaluate(-1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn table_interpolates_linearly() {
        let t = DelayKernel::table(1.0, vec![0.0, 1.0, 4.0]).unwrap();
        assert_relative_eq!(t.evaluate(-0.75).unwrap(), 0.5);
        assert_relative_eq!(t.evaluate(-0.25).unwrap(), 2.5);
        assert_relative_eq!(t.evaluate(0.0).unwrap(), 4.0);
        assert_relative_eq!(t.evaluate(-1.0).unwrap(), 0.0);
    }

    #[test]
    fn invalid_kernels_rejected() {
        assert!(DelayKernel::constant(0.0, 1.0).is_err());
        assert!(DelayKernel::table(1.0, vec![1.0]).is_err());
        let a = DelayKernel::constant(1.0, 1.0).unwrap();
        let b = DelayKernel::constant(2.0, 1.0).unwrap();
        assert!(matches!(DelayKernel::sum(a, b), Err(Error::Config(_))));
    }

    #[test]
    fn l1_norm_examples() {
        assert_relative_eq!(DelayKernel::constant(1.0, 0.3).unwrap().l1_norm(), 0.3);
        assert_relative_eq!(
            DelayKernel::exponential(1.0, 1.0, 2.0).unwrap().l1_norm(),
            0.432332358,
            epsilon = 1e-9
        );
        let s = DelayKernel::sum(
            DelayKernel::constant(1.0, 0.5).unwrap(),
            DelayKernel::constant(1.0, -0.5).unwrap(),
        )
        .unwrap();
        assert_eq!(s.l1_norm(), 0.0);
        assert_relative_eq!(
            DelayKernel::exponential(2.0, -1.5, 0.0).unwrap().l1_norm(),
            3.0
        );
    }

    #[test]
    fn mixed_sign_sum_norm_honours_cancellation() {
        // g(θ) = 1 + 2θ on [-1, 0] changes sign at -1/2: ∫|g| = 1/2.
        let s = DelayKernel::sum(
            DelayKernel::constant(1.0, 1.0).unwrap(),
            DelayKernel::table(1.0, vec![-2.0, 0.0]).unwrap(),
        )
        .unwrap();
        assert_relative_eq!(s.l1_norm(), 0.5, epsilon = 1e-6);
    }

    #[test]
    fn laplace_examples() {
        let a = 0.7;
        let k = DelayKernel::constant(1.3, a).unwrap();
        assert_relative_eq!(k.laplace(c(0.0, 0.0)).re, a * 1.3, epsilon = 1e-15);
        assert_relative_eq!(k.laplace(c(1e-9, 0.0)).re, a * 1.3, epsilon = 1e-9);
        let e = DelayKernel::exponential(1.0, 0.4, 2.5).unwrap();
        let v = e.laplace(c(-2.5, 0.0));
        assert_relative_eq!(v.re, 0.4, epsilon = 1e-15);
        assert_eq!(v.im, 0.0);
        let one = DelayKernel::constant(1.0, 1.0).unwrap();
        assert_relative_eq!(one.laplace(c(1.0, 0.0)).re, 0.632120559, epsilon = 1e-9);
    }

    #[test]
    fn laplace_derivative_examples() {
        let one = DelayKernel::constant(1.0, 1.0).unwrap();
        assert_relative_eq!(one.laplace_derivative(c(0.0, 0.0)).re, -0.5, epsilon = 1e-15);
        let z = DelayKernel::zero(1.0).unwrap();
        assert_eq!(z.laplace_derivative(c(3.0, -1.0)), c(0.0, 0.0));
        let e = DelayKernel::exponential(1.0, 1.0, 0.0).unwrap();
        assert_relative_eq!(e.laplace_derivative(c(0.0, 0.0)).re, -0.5, epsilon = 1e-15);
    }

    #[test]
    fn series_and_closed_form_agree_across_threshold() {
        for &x in &[0.9e-6, 1.1e-6, 0.049, 0.051] {
            for &dir in &[c(1.0, 0.0), c(0.0, 1.0), c(-0.6, 0.8)] {
                let z = x * dir;
                let closed = -expm1(-z) / z;
                assert!((phi1(z) - closed).norm() < 1e-12);
                let closed_d = (expm1(-z) * (1.0 + z) + z) / (z * z);
                // closed form is only accurate to ~eps/|z| near the origin
                assert!((phi1_prime(z) - closed_d).norm() < 1e-14 / x + 1e-13);
            }
        }
    }

    #[test]
    fn trapezoid_weights_match_table_quadrature() {
        let t = DelayKernel::table(2.0, vec![0.3, -1.0, 0.5, 2.0, 1.0]).unwrap();
        let w = t.trapezoid_weights(4);
        let s: f64 = w.iter().sum();
        assert_relative_eq!(s, t.laplace(c(0.0, 0.0)).re, epsilon = 1e-14);
    }

    fn simpson(f: impl Fn(f64) -> Complex64, a: f64, b: f64, n: usize) -> Complex64 {
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for j in 1..n {
            let w = if j % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(a + j as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn table_transforms_integrate_the_interpolant() {
        let t = DelayKernel::table(1.5, vec![0.3, -1.0, 0.5, 2.0, 1.0]).unwrap();
        for &lam in &[c(0.0, 0.0), c(0.3, -0.2), c(-4.0, 9.0), c(2.5, 30.0), c(-0.01, 0.02)] {
            let g = |th: f64| t.evaluate(th).unwrap();
            // Simpson per table interval, so the kinks sit on panel edges.
            let mut want = c(0.0, 0.0);
            let mut want_d = c(0.0, 0.0);
            for j in 0..4 {
                let (a, b) = (-1.5 + j as f64 * 0.375, -1.5 + (j + 1) as f64 * 0.375);
                want += simpson(|th| g(th) * (lam * th).exp(), a, b, 2000);
                want_d += simpson(|th| th * g(th) * (lam * th).exp(), a, b, 2000);
            }
            assert!((t.laplace(lam) - want).norm() < 1e-10 * (1.0 + want.norm()), "{lam}");
            assert!((t.laplace_derivative(lam) - want_d).norm() < 1e-10 * (1.0 + want_d.norm()));
            let eps = 1e-6;
            let fd = (t.laplace(lam + eps) - t.laplace(lam - eps)) / (2.0 * eps);
            assert!((fd - t.laplace_derivative(lam)).norm() < 1e-6);
        }
    }

    #[test]
    fn table_norms_are_exact_for_sign_changes() {
        // g goes linearly from -1 to 1 on [-2, 0].
        let t = DelayKernel::table(2.0, vec![-1.0, 1.0]).unwrap();
        assert_relative_eq!(t.l1_norm(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(t.l2_norm(), (2.0f64 / 3.0).sqrt(), epsilon = 1e-15);
    }
}
