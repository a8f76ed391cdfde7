//! Deterministic oracle: the integral form of the mode equations solved by
//! Picard iteration on windows short enough to make the map a contraction.
//!
//! On a window starting at `t_s`, mode `k` satisfies
//!
//! ```text
//! x(t) = Dx_t + e^{−k²(t−t_s)} z(t_s) + ∫_{t_s}^t e^{−k²(t−s)} Fx_s ds
//! ```
//!
//! with `D = α₁·shift(−r) + Q_γ`, `F = −k²(α₂·shift(−r) + Q_β)` and
//! `z = x − Dx`. The window length `t₀ ≤ r` keeps `x(t−r)` inside known
//! data, and `δ(t₀) = ‖γ‖₂√t₀ + k²‖β‖₂t₀ ≤ 1/2` bounds the contraction of
//! the distributed parts. The time integral uses exact exponential weights
//! for piecewise-linear integrands; `Q` is the trapezoid rule on the grid.
//! The resolvent check solves `λφ − 𝒜φ = ψ` for one mode and returns the
//! residual of the reconstructed solution.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::charfn::NeutralSystem;
use crate::error::{Error, Result};
use crate::simulate::{init_history, grid_intervals, run, InitialData, Scheme, SimConfig};

pub const MAX_ITERATIONS: usize = 200;
pub const TARGET_CONTRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PicardWindow {
    pub k: usize,
    pub start: f64,
    pub t0: f64,
    /// `δ(t₀)` from the kernel norms.
    pub delta: f64,
    pub h_p: f64,
    pub iterations: usize,
    /// Largest ratio of successive iterate differences above round-off.
    pub max_contraction: f64,
}

fn norms(sys: &NeutralSystem, k: usize) -> (f64, f64) {
    let k2 = (k * k) as f64;
    (sys.gamma().l2_norm(), k2 * sys.beta().l2_norm())
}

/// `δ(t₀) = ‖γ‖₂√t₀ + k²‖β‖₂ t₀`.
pub fn contraction_factor(sys: &NeutralSystem, k: usize, t0: f64) -> f64 {
    let (a, b) = norms(sys, k);
    a * t0.sqrt() + b * t0
}

/// Largest `t₀ ≤ r` with `δ(t₀) ≤ 1/2`.
pub fn window_size(sys: &NeutralSystem, k: usize) -> f64 {
    let (a, b) = norms(sys, k);
    let r = sys.horizon();
    let s = if b > 0.0 {
        // b s² + a s − 1/2 = 0, in the cancellation-free form
        2.0 * TARGET_CONTRACTION / (a + (a * a + 4.0 * b * TARGET_CONTRACTION).sqrt())
    } else if a > 0.0 {
        TARGET_CONTRACTION / a
    } else {
        return r;
    };
    (s * s).min(r)
}

/// Weights `(w₀, w₁)` with `∫₀ʰ e^{−a(h−s)} g(s) ds = w₀g(0) + w₁g(h)` for
/// linear `g`.
fn exp_weights(a: f64, h: f64) -> (f64, f64) {
    let x = a * h;
    let (i0, i1) = if x.abs() < 0.1 {
        // (1 − e^{−x})/x and (1 − e^{−x}(1 + x))/x² by their series
        let (mut s0, mut s1, mut term) = (0.0, 0.0, 1.0);
        for n in 0..12 {
            s0 += term / (n + 1) as f64;
            s1 += term / (n + 2) as f64;
            term *= -x / (n + 1) as f64;
        }
        (h * s0, h * h * s1)
    } else {
        let e = (-x).exp();
        (h * (-(-x).exp_m1()) / x, h * h * (1.0 - e - x * e) / (x * x))
    };
    (i1 / h, i0 - i1 / h)
}

/// Per-mode samples on the Picard grid from `−r` to `T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardSolution {
    pub h_p: f64,
    pub t_end: f64,
    /// Index of `t = 0` in each mode's sample vector.
    pub origin: usize,
    pub samples: Vec<Vec<f64>>,
    pub windows: Vec<Vec<PicardWindow>>,
}

impl PicardSolution {
    /// `x_k(t)` for a grid time `t ≥ −r`.
    pub fn value(&self, k: usize, t: f64) -> Option<f64> {
        let idx = (t / self.h_p).round() as i64 + self.origin as i64;
        if ((idx - self.origin as i64) as f64 * self.h_p - t).abs() > 1e-9 * self.h_p.max(t.abs()) {
            return None;
        }
        self.samples.get(k - 1)?.get(usize::try_from(idx).ok()?).copied()
    }

    /// Largest measured contraction factor over all windows and modes.
    pub fn max_contraction(&self) -> f64 {
        self.windows
            .iter()
            .flatten()
            .map(|w| w.max_contraction)
            .fold(0.0, f64::max)
    }
}

struct ModeOperators {
    k2: f64,
    alpha1: f64,
    alpha2: f64,
    w_gamma: Vec<f64>,
    w_beta: Vec<f64>,
}

fn solve_mode(
    sys: &NeutralSystem,
    k: usize,
    history: &[f64],
    head: f64,
    h_p: f64,
    steps: usize,
    tol: f64,
) -> Result<(Vec<f64>, Vec<PicardWindow>)> {
    let n = history.len() - 1;
    let ops = ModeOperators {
        k2: (k * k) as f64,
        alpha1: sys.alpha1(),
        alpha2: sys.alpha2(),
        w_gamma: sys.gamma().trapezoid_weights(n),
        w_beta: sys.beta().trapezoid_weights(n),
    };
    let t0 = window_size(sys, k);
    let m_full = ((t0 / h_p) * (1.0 + 1e-12)).floor().max(1.0) as usize;
    let (e0, e1) = exp_weights(ops.k2, h_p);
    let decay = (-ops.k2 * h_p).exp();

    let mut x = Vec::with_capacity(n + 1 + steps);
    x.extend_from_slice(history);
    let mut windows = Vec::new();
    let mut done = 0;
    while done < steps {
        let m = m_full.min(steps - done);
        let s0 = n + done;
        let t_s = done as f64 * h_p;
        // head at the window start; the supplied one at t = 0
        let z_s = if done == 0 {
            head
        } else {
            let w = &x[s0 - n..=s0];
            x[s0] - ops.alpha1 * w[0] - dot(&ops.w_gamma, w)
        };
        // parts of D and F at node j fixed by samples up to s0
        let mut known_d = vec![0.0; m + 1];
        let mut known_f = vec![0.0; m + 1];
        for j in 1..=m {
            let lo = s0 + j - n;
            let len = n - j + 1;
            let w = &x[lo..lo + len];
            known_d[j] = ops.alpha1 * x[lo] + dot(&ops.w_gamma[..len], w);
            known_f[j] = -ops.k2 * (ops.alpha2 * x[lo] + dot(&ops.w_beta[..len], w));
        }
        let f0 = {
            let w = &x[s0 - n..=s0];
            -ops.k2 * (ops.alpha2 * w[0] + dot(&ops.w_beta, w))
        };
        // initial guess: constant continuation
        let mut cur = vec![x[s0]; m + 1];
        let mut next = vec![0.0; m + 1];
        next[0] = x[s0];
        let scale = 1.0 + history.iter().chain(x[s0..].iter()).fold(0.0f64, |a, v| a.max(v.abs()));
        let mut prev_diff = f64::INFINITY;
        let mut max_ratio: f64 = 0.0;
        let mut iterations = 0;
        loop {
            iterations += 1;
            let mut conv = 0.0;
            let mut f_prev = f0;
            let mut exp_factor = 1.0;
            let mut diff: f64 = 0.0;
            for j in 1..=m {
                // unknown samples s0+1..=s0+j carry weights w_{n−j+1..=n}
                let unknown = &cur[1..=j];
                let d = known_d[j] + dot(&ops.w_gamma[n - j + 1..], unknown);
                let f = known_f[j] - ops.k2 * dot(&ops.w_beta[n - j + 1..], unknown);
                conv = decay * conv + e0 * f_prev + e1 * f;
                f_prev = f;
                exp_factor *= decay;
                next[j] = d + exp_factor * z_s + conv;
                diff = diff.max((next[j] - cur[j]).abs());
            }
            std::mem::swap(&mut cur, &mut next);
            if prev_diff.is_finite() && prev_diff > 1e-13 * scale {
                max_ratio = max_ratio.max(diff / prev_diff);
            }
            if diff < tol {
                break;
            }
            if iterations >= MAX_ITERATIONS || !diff.is_finite() {
                return Err(Error::PicardNonConvergence { k, t0: t_s });
            }
            prev_diff = diff;
        }
        x.extend_from_slice(&cur[1..]);
        windows.push(PicardWindow {
            k,
            start: t_s,
            t0: m as f64 * h_p,
            delta: contraction_factor(sys, k, m as f64 * h_p),
            h_p,
            iterations,
            max_contraction: max_ratio,
        });
        done += m;
    }
    Ok((x, windows))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves the deterministic mode equations on `[0, T]` with grid `h_p`,
/// iterating each window until successive iterates differ by less than
/// `tol` in sup norm. The noise coefficients are ignored.
pub fn picard_solve(
    sys: &NeutralSystem,
    init: &InitialData,
    t_end: f64,
    tol: f64,
    h_p: f64,
) -> Result<PicardSolution> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tol must be positive, got {tol}")));
    }
    let n = grid_intervals(sys.horizon(), h_p)?;
    let steps = (t_end / h_p).round();
    if t_end < 0.0 || (steps * h_p - t_end).abs() > 1e-9 * t_end.max(h_p) {
        return Err(Error::Config(format!(
            "T = {t_end} is not a non-negative multiple of h_p = {h_p}"
        )));
    }
    let state = init_history(sys, init, h_p)?;
    let results = (1..=sys.modes())
        .into_par_iter()
        .map(|k| {
            solve_mode(
                sys,
                k,
                state.history(k - 1),
                state.head()[k - 1],
                h_p,
                steps as usize,
                tol,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let (samples, windows) = results.into_iter().unzip();
    Ok(PicardSolution {
        h_p,
        t_end,
        origin: n,
        samples,
        windows,
    })
}

/// Sup-norm agreement between the time stepper and the Picard oracle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepperAgreement {
    pub h: f64,
    pub h_p: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    /// Per mode `sup|y_stepper − x_picard|`.
    pub sup_error: Vec<f64>,
    /// Per mode error divided by `sup|x_picard|`.
    pub relative_error: Vec<f64>,
    pub max_relative_error: f64,
}

/// Runs the stepper with step `h` and the oracle with `h_p = h/2` on
/// `[0, T]` from the same initial data and compares them at the stepper's
/// grid points.
pub fn stepper_agreement(
    sys: &NeutralSystem,
    init: &InitialData,
    t_end: f64,
    h: f64,
    scheme: Scheme,
    tol: f64,
) -> Result<StepperAgreement> {
    let det = sys.clone().with_noise(vec![0.0; sys.modes()])?;
    let h_p = 0.5 * h;
    let oracle = picard_solve(&det, init, t_end, tol, h_p)?;
    let cfg = SimConfig::new(h, t_end).with_scheme(scheme);
    let start = init_history(&det, init, h)?;
    let traj = run(&det, &cfg, &start)?;
    let mut sup_error = vec![0.0f64; det.modes()];
    let mut sup_value = vec![0.0f64; det.modes()];
    for n in 0..traj.len() {
        for (i, &y) in traj.y_row(n).iter().enumerate() {
            let x = oracle.samples[i][oracle.origin + 2 * n];
            sup_error[i] = sup_error[i].max((y - x).abs());
            sup_value[i] = sup_value[i].max(x.abs());
        }
    }
    let relative_error: Vec<f64> = sup_error
        .iter()
        .zip(&sup_value)
        .map(|(e, v)| if *v > 0.0 { e / v } else { *e })
        .collect();
    Ok(StepperAgreement {
        h,
        h_p,
        t_end,
        scheme,
        max_relative_error: relative_error.iter().copied().fold(0.0, f64::max),
        sup_error,
        relative_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolventResidual {
    pub grid: usize,
    /// `φ₁(0)` from the scalar characteristic equation.
    pub phi1_at_zero: Complex64,
    pub phi0: Complex64,
    /// `sup_θ |λφ₁ − φ₁′ − ψ₁|` over interior grid points.
    pub segment_residual: f64,
    /// `|λφ₀ + k²φ₀ − Fφ₁ − ψ₀|`.
    pub head_residual: f64,
    pub residual: f64,
}

/// Solves `(λ − 𝒜)φ = ψ` for mode `k` with `ψ₁` sampled on a uniform grid of
/// `[−r, 0]` (oldest first) and returns the residual of the reconstruction.
pub fn resolvent_check(
    sys: &NeutralSystem,
    k: usize,
    lambda: Complex64,
    psi0: Complex64,
    psi1: &[Complex64],
) -> Result<ResolventResidual> {
    sys.check_mode(k)?;
    if psi1.len() < 3 {
        return Err(Error::Config("psi1 needs at least three grid points".into()));
    }
    let delta = sys.delta_mode(k, lambda)?;
    if delta.norm() < 1e-9 * (1.0 + lambda.norm()) {
        return Err(Error::Precondition(format!(
            "Delta_{k}({lambda}) = {delta} is numerically singular"
        )));
    }
    let n = psi1.len() - 1;
    let r = sys.horizon();
    let h = r / n as f64;
    let k2 = (k * k) as f64;
    let wg = sys.gamma().trapezoid_weights(n);
    let wb = sys.beta().trapezoid_weights(n);
    let d_of = |v: &[Complex64]| -> Complex64 {
        sys.alpha1() * v[0] + v.iter().zip(&wg).map(|(x, w)| x * *w).sum::<Complex64>()
    };
    let f_of = |v: &[Complex64]| -> Complex64 {
        -k2 * (sys.alpha2() * v[0] + v.iter().zip(&wb).map(|(x, w)| x * *w).sum::<Complex64>())
    };

    // g(θ) = ∫_θ^0 e^{λ(θ−τ)} ψ₁(τ) dτ, marched from θ = 0 towards −r
    let e = (-lambda * h).exp();
    let mut g = vec![Complex64::new(0.0, 0.0); n + 1];
    for i in (1..=n).rev() {
        g[i - 1] = e * g[i] + 0.5 * h * (psi1[i - 1] + e * psi1[i]);
    }
    let phi1_0 = ((lambda + k2) * d_of(&g) + f_of(&g) + psi0) / delta;
    let phi1: Vec<Complex64> = (0..=n)
        .map(|i| {
            let theta = if i == n { 0.0 } else { -r + i as f64 * h };
            (lambda * theta).exp() * phi1_0 + g[i]
        })
        .collect();
    let segment_residual = (1..n)
        .map(|i| {
            let deriv = (phi1[i + 1] - phi1[i - 1]) / (2.0 * h);
            (lambda * phi1[i] - deriv - psi1[i]).norm()
        })
        .fold(0.0, f64::max);
    let phi0 = phi1[n] - d_of(&phi1);
    let head_residual = (lambda * phi0 + k2 * phi0 - f_of(&phi1) - psi0).norm();
    Ok(ResolventResidual {
        grid: n,
        phi1_at_zero: phi1_0,
        phi0,
        segment_residual,
        head_residual,
        residual: segment_residual + head_residual,
    })
}

/// Least-squares slope of `log residual` against `log(1/grid step)`.
pub fn fitted_order(grids: &[usize], residuals: &[f64]) -> f64 {
    let xs: Vec<f64> = grids.iter().map(|&g| (g as f64).ln()).collect();
    let ys: Vec<f64> = residuals.iter().map(|r| -r.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::DelayKernel;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn zero_sys(modes: usize) -> NeutralSystem {
        let z = DelayKernel::zero(1.0).unwrap();
        NeutralSystem::deterministic(z.clone(), z, modes).unwrap()
    }

    fn example(modes: usize) -> NeutralSystem {
        NeutralSystem::new(
            DelayKernel::exponential(1.0, 0.1, 0.0).unwrap(),
            DelayKernel::constant(1.0, 0.2).unwrap(),
            0.0,
            0.0,
            vec![0.0; modes],
        )
        .unwrap()
    }

    #[test]
    fn window_size_examples() {
        assert_eq!(window_size(&zero_sys(1), 1), 1.0);
        // ‖γ‖₂ = ‖β‖₂ = 0.5 with constant kernels on r = 1
        let sys = NeutralSystem::deterministic(
            DelayKernel::constant(1.0, 0.5).unwrap(),
            DelayKernel::constant(1.0, 0.5).unwrap(),
            1,
        )
        .unwrap();
        assert_relative_eq!(window_size(&sys, 1), 0.381966011, epsilon = 1e-9);
        assert_relative_eq!(contraction_factor(&sys, 1, window_size(&sys, 1)), 0.5, epsilon = 1e-14);
        // large k: t0 ≈ 1/(2k²‖β‖)
        let sys = NeutralSystem::deterministic(
            DelayKernel::zero(1.0).unwrap(),
            DelayKernel::constant(1.0, 0.5).unwrap(),
            100,
        )
        .unwrap();
        assert_relative_eq!(window_size(&sys, 100), 1.0 / (2.0 * 1e4 * 0.5), epsilon = 1e-12);
    }

    #[test]
    fn exp_weights_match_quadrature() {
        // composite Simpson with 20000 panels as the oracle
        let simpson = |f: &dyn Fn(f64) -> f64, h: f64| {
            let n = 20000;
            let d = h / n as f64;
            (0..=n)
                .map(|i| {
                    let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                    w * f(i as f64 * d)
                })
                .sum::<f64>()
                * d
                / 3.0
        };
        for &(a, h) in &[(0.0, 0.1), (1e-3, 0.1), (2.0, 0.05), (64.0, 0.01), (500.0, 0.1)] {
            let (w0, w1) = exp_weights(a, h);
            let one = simpson(&|s| (-a * (h - s)).exp(), h);
            let lin = simpson(&|s| (-a * (h - s)).exp() * s, h);
            assert_relative_eq!(w0 + w1, one, max_relative = 1e-9);
            assert_relative_eq!(w1 * h, lin, max_relative = 1e-9);
        }
    }

    #[test]
    fn zero_kernels_give_exponential_decay() {
        let sys = zero_sys(2);
        let sol = picard_solve(&sys, &InitialData::constant(vec![1.0]), 2.0, 1e-13, 0.01).unwrap();
        for k in 1..=2 {
            for &t in &[0.0, 0.5, 1.3, 2.0] {
                let exact = (-((k * k) as f64) * t).exp();
                assert!((sol.value(k, t).unwrap() - exact).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn iterates_contract() {
        let sys = NeutralSystem::new(
            DelayKernel::exponential(1.0, 0.4, -1.0).unwrap(),
            DelayKernel::constant(1.0, 0.3).unwrap(),
            0.2,
            0.1,
            vec![0.0; 3],
        )
        .unwrap();
        let sol = picard_solve(&sys, &InitialData::constant(vec![1.0]), 3.0, 1e-12, 0.005).unwrap();
        for w in sol.windows.iter().flatten() {
            assert!(w.delta <= 0.5 + 1e-12);
            assert!(w.max_contraction <= w.delta + 0.1, "{w:?}");
        }
    }

    #[test]
    fn agrees_with_stepper_at_first_order() {
        let sys = example(2);
        let init = InitialData::constant(vec![1.0]);
        let a = stepper_agreement(&sys, &init, 3.0, 0.01, Scheme::SemiImplicit, 1e-12).unwrap();
        let b = stepper_agreement(&sys, &init, 3.0, 0.005, Scheme::SemiImplicit, 1e-12).unwrap();
        let ratio = a.max_relative_error / b.max_relative_error;
        assert!(a.max_relative_error < 0.05);
        assert!((ratio - 2.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn resolvent_of_pure_exponential() {
        let sys = example(2);
        let lambda = Complex64::new(1.0, 1.0);
        let mut prev = f64::INFINITY;
        for n in [64, 128, 256] {
            let delta = sys.delta_mode(2, lambda).unwrap();
            let psi1 = vec![Complex64::new(0.0, 0.0); n + 1];
            let res = resolvent_check(&sys, 2, lambda, delta, &psi1).unwrap();
            assert!((res.phi1_at_zero - 1.0).norm() < 1e-12);
            assert!(res.residual < prev / 3.0);
            prev = res.residual;
        }
    }

    #[test]
    fn resolvent_at_root_is_rejected() {
        // no delay: Δ_1(λ) = λ + 1 vanishes at −1
        let sys = zero_sys(1);
        let psi1 = vec![Complex64::new(0.0, 0.0); 33];
        let err = resolvent_check(&sys, 1, Complex64::new(-1.0 + 1e-14, 0.0), Complex64::new(1.0, 0.0), &psi1);
        assert!(matches!(err, Err(Error::Precondition(_))));
    }

    #[test]
    fn order_fit_recovers_slope() {
        let g = [128, 256, 512];
        let r: Vec<f64> = g.iter().map(|&n| 3.0 / (n as f64).powi(2)).collect();
        assert_relative_eq!(fitted_order(&g, &r), 2.0, epsilon = 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn resolvent_residual_is_second_order(seed in prop::collection::vec(-1.0f64..1.0, 6)) {
            let sys = NeutralSystem::new(
                DelayKernel::exponential(1.0, 0.3, -0.5).unwrap(),
                DelayKernel::constant(1.0, 0.2).unwrap(),
                0.1,
                0.05,
                vec![0.0],
            ).unwrap();
            let lambda = Complex64::new(1.0, 1.0);
            let psi = |th: f64| Complex64::new(seed[0] + seed[1] * (2.0 * th).sin(), seed[2] * th.cos() + seed[3] * th * th);
            let psi0 = Complex64::new(seed[4], seed[5]);
            let residuals: Vec<f64> = [128usize, 256, 512].iter().map(|&n| {
                let h = 1.0 / n as f64;
                let psi1: Vec<Complex64> = (0..=n).map(|i| psi(-1.0 + i as f64 * h)).collect();
                resolvent_check(&sys, 1, lambda, psi0, &psi1).unwrap().residual
            }).collect();
            prop_assert!(fitted_order(&[128, 256, 512], &residuals) >= 1.8);
        }
    }
}
