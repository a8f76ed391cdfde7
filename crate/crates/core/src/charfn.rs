//! Characteristic scalars of the neutral system and per-mode characteristic
//! functions.
//!
//! The spatial operator is the Dirichlet Laplacian on `(0, π)`, so the
//! operator equation decouples along the eigenvectors `sin(kξ)` with
//! eigenvalues `-k²`. On mode `k` the characteristic operator acts as the
//! scalar `Δ_k(λ) = m(λ) + k² n(λ)` with
//!
//! ```text
//! m(λ) = λ (1 - α₁ e^{-λr} - L_γ(λ))
//! n(λ) = 1 - α₁ e^{-λr} - L_γ(λ) + α₂ e^{-λr} + L_β(λ)
//! ```

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::DelayKernel;

/// Default relative tolerance used by [`classify`].
pub const DEFAULT_CLASSIFY_TOL: f64 = 1e-8;

/// Kernels of the concrete heat equation `d[y - ∫γy] = Δy + ∫β Δy + b dw`
/// from which a system was built.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcreteKernels {
    pub gamma: DelayKernel,
    pub beta: DelayKernel,
}

/// The full problem datum in abstract neutral form.
#[derive(Debug, Clone, PartialEq)]
pub struct NeutralSystem {
    r: f64,
    gamma: DelayKernel,
    beta: DelayKernel,
    alpha1: f64,
    alpha2: f64,
    noise: Vec<f64>,
    concrete: Option<ConcreteKernels>,
}

impl NeutralSystem {
    /// Builds a system in abstract form. The number of Galerkin modes is
    /// `noise.len()`.
    pub fn new(
        gamma: DelayKernel,
        beta: DelayKernel,
        alpha1: f64,
        alpha2: f64,
        noise: Vec<f64>,
    ) -> Result<Self> {
        let r = gamma.horizon();
        if (beta.horizon() - r).abs() > 1e-12 * r {
            return Err(Error::Config(format!(
                "kernel horizons differ: gamma has r = {r}, beta has r = {}",
                beta.horizon()
            )));
        }
        if noise.is_empty() {
            return Err(Error::Config("at least one mode is required".into()));
        }
        if !alpha1.is_finite() || !alpha2.is_finite() || noise.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config("coefficients must be finite".into()));
        }
        Ok(Self {
            r,
            gamma,
            beta,
            alpha1,
            alpha2,
            noise,
            concrete: None,
        })
    }

    /// Distributed-delay system with no noise on `modes` modes.
    pub fn deterministic(gamma: DelayKernel, beta: DelayKernel, modes: usize) -> Result<Self> {
        Self::new(gamma, beta, 0.0, 0.0, vec![0.0; modes])
    }

    /// Rewrites the concrete heat equation into abstract form: the
    /// distributed term `∫β Δy` becomes `Δ(y - ∫γy) + ∫(β+γ) Δy`.
    pub fn from_concrete(gamma: DelayKernel, beta: DelayKernel, noise: Vec<f64>) -> Result<Self> {
        let beta_abs = DelayKernel::sum(beta.clone(), gamma.clone())?;
        let mut sys = Self::new(gamma.clone(), beta_abs, 0.0, 0.0, noise)?;
        sys.concrete = Some(ConcreteKernels { gamma, beta });
        Ok(sys)
    }

    pub fn with_noise(mut self, noise: Vec<f64>) -> Result<Self> {
        if noise.is_empty() {
            return Err(Error::Config("at least one mode is required".into()));
        }
        self.noise = noise;
        Ok(self)
    }

    pub fn horizon(&self) -> f64 {
        self.r
    }
    pub fn gamma(&self) -> &DelayKernel {
        &self.gamma
    }
    pub fn beta(&self) -> &DelayKernel {
        &self.beta
    }
    pub fn alpha1(&self) -> f64 {
        self.alpha1
    }
    pub fn alpha2(&self) -> f64 {
        self.alpha2
    }
    pub fn modes(&self) -> usize {
        self.noise.len()
    }
    pub fn noise(&self) -> &[f64] {
        &self.noise
    }
    pub fn concrete(&self) -> Option<&ConcreteKernels> {
        self.concrete.as_ref()
    }
    /// Distance of `σ(A) = {-k²}` from the origin.
    pub fn c0(&self) -> f64 {
        1.0
    }

    pub fn has_point_delays(&self) -> bool {
        self.alpha1 != 0.0 || self.alpha2 != 0.0
    }

    /// `1 - ‖γ‖₁ - |α₁|`: the lower slope of `|m(iω)|/|ω|`.
    pub fn neutral_margin(&self) -> f64 {
        1.0 - self.gamma.l1_norm() - self.alpha1.abs()
    }

    pub(crate) fn check_mode(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.modes() {
            Err(Error::Domain(format!(
                "mode {k} outside 1..={}",
                self.modes()
            )))
        } else {
            Ok(())
        }
    }

    /// `1 - α₁e^{-λr} - L_γ(λ)`, the symbol of `I - D`.
    fn neutral_symbol(&self, lambda: Complex64) -> Complex64 {
        1.0 - self.alpha1 * (-lambda * self.r).exp() - self.gamma.laplace(lambda)
    }

    pub fn m_of(&self, lambda: Complex64) -> Complex64 {
        lambda * self.neutral_symbol(lambda)
    }

    pub fn n_of(&self, lambda: Complex64) -> Complex64 {
        // β_abs = β + γ: summing L_γ into L_β_abs and subtracting it again
        // loses every digit far in the left half plane
        if let Some(c) = &self.concrete {
            return 1.0 + c.beta.laplace(lambda);
        }
        self.neutral_symbol(lambda)
            + self.alpha2 * (-lambda * self.r).exp()
            + self.beta.laplace(lambda)
    }

    pub fn m_prime(&self, lambda: Complex64) -> Complex64 {
        let e = (-lambda * self.r).exp();
        self.neutral_symbol(lambda)
            + lambda * (self.r * self.alpha1 * e - self.gamma.laplace_derivative(lambda))
    }

    pub fn n_prime(&self, lambda: Complex64) -> Complex64 {
        if let Some(c) = &self.concrete {
            return c.beta.laplace_derivative(lambda);
        }
        let e = (-lambda * self.r).exp();
        self.r * (self.alpha1 - self.alpha2) * e - self.gamma.laplace_derivative(lambda)
            + self.beta.laplace_derivative(lambda)
    }

    /// `Δ_k(λ) = m(λ) + k² n(λ)`.
    pub fn delta_mode(&self, k: usize, lambda: Complex64) -> Result<Complex64> {
        self.check_mode(k)?;
        Ok(self.delta_unchecked(k, lambda))
    }

    pub(crate) fn delta_unchecked(&self, k: usize, lambda: Complex64) -> Complex64 {
        let k2 = (k * k) as f64;
        self.m_of(lambda) + k2 * self.n_of(lambda)
    }

    pub(crate) fn delta_prime_unchecked(&self, k: usize, lambda: Complex64) -> Complex64 {
        let k2 = (k * k) as f64;
        self.m_prime(lambda) + k2 * self.n_prime(lambda)
    }

    pub fn delta_mode_prime(&self, k: usize, lambda: Complex64) -> Result<Complex64> {
        self.check_mode(k)?;
        Ok(self.delta_prime_unchecked(k, lambda))
    }

    /// Frequency response `1/Δ_k(iω)` of mode `k` to the driving noise.
    pub fn transfer(&self, k: usize, omega: f64) -> Result<Complex64> {
        let d = self.delta_mode(k, Complex64::new(0.0, omega))?;
        if d.norm() < 1e-12 {
            return Err(Error::SingularTransfer {
                omega,
                modulus: d.norm(),
            });
        }
        Ok(1.0 / d)
    }

    /// Classifies `λ` into the spectral sets `Γ₀` (nonzero roots of `n`) and
    /// `Γ₁` (points where `m/n` hits an eigenvalue `-k²`, `k ≤ K`).
    ///
    /// With a self-adjoint diagonal `A`, `σ(A) = σ_p(A)` and the residual
    /// spectrum is empty, so `Γ₁` is also the point-spectrum set.
    pub fn classify(&self, lambda: Complex64, tol: f64) -> GammaClass {
        let n = self.n_of(lambda);
        let n_res = n.norm();
        if n_res <= tol {
            if lambda.norm() > tol {
                return GammaClass {
                    tag: GammaTag::Gamma0,
                    n_residual: n_res,
                    delta_residual: None,
                };
            }
            return GammaClass {
                tag: GammaTag::NotSpectral,
                n_residual: n_res,
                delta_residual: None,
            };
        }
        let s = n.norm();
        let ratio = (self.m_of(lambda) / s) / (n / s);
        let mut best: Option<(usize, f64)> = None;
        for k in 1..=self.modes() {
            let k2 = (k * k) as f64;
            let miss = (ratio + k2).norm();
            if miss <= tol * k2 && best.is_none_or(|(_, m)| miss / k2 < m) {
                best = Some((k, miss / k2));
            }
        }
        match best {
            Some((k, _)) => GammaClass {
                tag: GammaTag::Gamma1 { k },
                n_residual: n_res,
                delta_residual: Some(self.delta_unchecked(k, lambda).norm()),
            },
            None => GammaClass {
                tag: GammaTag::NotSpectral,
                n_residual: n_res,
                delta_residual: None,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "class")]
pub enum GammaTag {
    Gamma0,
    Gamma1 { k: usize },
    NotSpectral,
}

impl GammaTag {
    pub fn label(&self) -> &'static str {
        match self {
            GammaTag::Gamma0 => "Gamma0",
            GammaTag::Gamma1 { .. } => "Gamma1",
            GammaTag::NotSpectral => "NotSpectral",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaClass {
    pub tag: GammaTag,
    /// `|n(λ)|`
    pub n_residual: f64,
    /// `|Δ_k(λ)|` for the matched mode, when `Γ₁`.
    pub delta_residual: Option<f64>,
}
