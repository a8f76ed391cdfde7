//! Second moments of the stationary law.
//!
//! Mode `k` is the output of a stable linear filter with frequency response
//! `T_k(iω) = 1/Δ_k(iω)` driven by `b_k dW`, all modes sharing `W`. The
//! stationary covariance is therefore
//!
//! ```text
//! C_jk = (1/2π) ∫ b_j b_k Re[T_j(iω) conj T_k(iω)] dω
//! ```
//!
//! and `v_k = C_kk`. The integrand is even in `ω`, so only `[0, ∞)` is
//! integrated. Beyond the cutoff `Ω` the bound `|Δ_k(iω)| ≥ cω − d_k`, with
//! `c = 1 − ‖γ‖₁ − |α₁|` and `d_k = k²(1 + ‖γ‖₁ + |α₁| + |α₂| + ‖β‖₁)`,
//! bounds the tail by `|b_j b_k| / (π c (cΩ − d))`.
//!
//! The empirical side splits a post-burn-in series into two windows and
//! compares mean, variance and lag-`r` autocovariance with batch-means
//! standard errors.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::certify::{check_prop43, NUMERIC_THRESHOLD};
use crate::charfn::NeutralSystem;
use crate::error::{Error, Result};
use crate::simulate::{SegmentState, SimConfig, Stepper, Trajectory};
use crate::spectrum::{mode_abscissa, AbscissaOptions};

pub const BATCHES: usize = 20;
/// Statistics must agree within this many combined standard errors.
pub const Z_LIMIT: f64 = 3.0;
/// Each window must span at least this many delay horizons.
pub const MIN_WINDOW_HORIZONS: f64 = 10.0;

const MAX_DEPTH: u32 = 48;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub tol: f64,
    /// Explicit frequency cutoff; required when the tail bound is unavailable.
    pub omega_cutoff: Option<f64>,
    /// Skip the stability precondition (the caller has certified already).
    pub assume_stable: bool,
}

impl OracleOptions {
    pub fn new(tol: f64) -> Self {
        Self {
            tol,
            omega_cutoff: None,
            assume_stable: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleValue {
    pub value: f64,
    /// Estimated error of the finite-range quadrature.
    pub quadrature_error: f64,
    /// Rigorous bound on the truncated tail, when available.
    pub tail_bound: Option<f64>,
    pub omega_cutoff: f64,
}

impl OracleValue {
    pub fn error_bound(&self) -> f64 {
        self.quadrature_error + self.tail_bound.unwrap_or(f64::INFINITY)
    }
}

/// Fails unless mode `k` is certified stable, analytically or numerically.
pub fn ensure_mode_stable(sys: &NeutralSystem, k: usize) -> Result<()> {
    sys.check_mode(k)?;
    if check_prop43(sys).holds {
        return Ok(());
    }
    let report = mode_abscissa(sys, k, &AbscissaOptions::default()).map_err(|e| {
        Error::Precondition(format!("stability of mode {k} could not be certified: {e}"))
    })?;
    if report.abscissa < -NUMERIC_THRESHOLD {
        Ok(())
    } else {
        Err(Error::Precondition(format!(
            "mode {k} is not certified stable (abscissa {})",
            report.abscissa
        )))
    }
}

fn growth_constant(sys: &NeutralSystem, k: usize) -> f64 {
    let k2 = (k * k) as f64;
    k2 * (1.0
        + sys.gamma().l1_norm()
        + sys.alpha1().abs()
        + sys.alpha2().abs()
        + sys.beta().l1_norm())
}

fn simpson(fa: f64, fm: f64, fb: f64, len: f64) -> f64 {
    len / 6.0 * (fa + 4.0 * fm + fb)
}

/// Adaptive Simpson on `[a, b]` to absolute tolerance `tol`; returns the
/// value and the accumulated error estimate. Every interval is split at
/// least `min_depth` times before the stopping test applies.
pub fn adaptive_simpson(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    tol: f64,
    min_depth: u32,
) -> (f64, f64) {
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(fa, fm, fb, b - a);
    let mut stack = vec![(a, b, fa, fm, fb, whole, tol, 0u32)];
    let mut total = 0.0;
    let mut err = 0.0;
    while let Some((a, b, fa, fm, fb, whole, tol, depth)) = stack.pop() {
        let m = 0.5 * (a + b);
        let lm = f(0.5 * (a + m));
        let rm = f(0.5 * (m + b));
        let left = simpson(fa, lm, fm, m - a);
        let right = simpson(fm, rm, fb, b - m);
        let delta = left + right - whole;
        if (depth >= min_depth && delta.abs() <= 15.0 * tol) || depth >= MAX_DEPTH {
            total += left + right + delta / 15.0;
            err += delta.abs() / 15.0;
        } else {
            stack.push((a, m, fa, lm, fm, left, 0.5 * tol, depth + 1));
            stack.push((m, b, fm, rm, fb, right, 0.5 * tol, depth + 1));
        }
    }
    (total, err)
}

/// `C_jk` with full control over cutoff and stability checking.
pub fn oracle_cross_cov_with(
    sys: &NeutralSystem,
    j: usize,
    k: usize,
    opts: &OracleOptions,
) -> Result<OracleValue> {
    sys.check_mode(j)?;
    sys.check_mode(k)?;
    if !(opts.tol > 0.0) {
        return Err(Error::Config(format!("tol must be positive, got {}", opts.tol)));
    }
    let bj = sys.noise()[j - 1];
    let bk = sys.noise()[k - 1];
    if bj == 0.0 || bk == 0.0 {
        return Ok(OracleValue {
            value: 0.0,
            quadrature_error: 0.0,
            tail_bound: Some(0.0),
            omega_cutoff: 0.0,
        });
    }
    if !opts.assume_stable {
        ensure_mode_stable(sys, j)?;
        if k != j {
            ensure_mode_stable(sys, k)?;
        }
    }
    let c = sys.neutral_margin();
    let d = growth_constant(sys, j.max(k));
    let bb = (bj * bk).abs();
    let tail = |omega: f64| -> Option<f64> {
        (c > 0.0 && c * omega > d).then(|| bb / (std::f64::consts::PI * c * (c * omega - d)))
    };
    let omega = match opts.omega_cutoff {
        Some(w) if w > 0.0 => w,
        Some(w) => return Err(Error::Config(format!("omega_cutoff must be positive, got {w}"))),
        None => {
            if c <= 0.0 {
                return Err(Error::TailBoundUnavailable(format!(
                    "1 - |gamma|_1 - |alpha1| = {c} <= 0; supply omega_cutoff"
                )));
            }
            1.01 * (d + 2.0 * bb / (std::f64::consts::PI * c * opts.tol)) / c
        }
    };

    let singular = std::sync::Mutex::new(None);
    let integrand = |w: f64| -> f64 {
        let lam = Complex64::new(0.0, w);
        let dj = sys.delta_unchecked(j, lam);
        let dk = if k == j { dj } else { sys.delta_unchecked(k, lam) };
        let m = dj.norm().min(dk.norm());
        if m < 1e-12 {
            singular.lock().unwrap().get_or_insert((w, m));
            return 0.0;
        }
        // T_j conj T_k = Δ_k conj Δ_j / (|Δ_j|² |Δ_k|²)
        let num = (dk * dj.conj()).re;
        bj * bk * num / (dj.norm_sqr() * dk.norm_sqr())
    };

    let pieces = partition(omega, j.max(k), sys.horizon());
    let piece_tol = 0.5 * opts.tol / pieces.len() as f64;
    let (mut value, mut err) = (0.0, 0.0);
    for (a, b, min_depth) in pieces {
        let (v, e) = adaptive_simpson(&integrand, a, b, piece_tol, min_depth);
        value += v;
        err += e;
    }
    if let Some((omega, modulus)) = *singular.lock().unwrap() {
        return Err(Error::SingularTransfer { omega, modulus });
    }
    Ok(OracleValue {
        value: value / std::f64::consts::PI,
        quadrature_error: err / std::f64::consts::PI,
        tail_bound: tail(omega),
        omega_cutoff: omega,
    })
}

/// Uniform pieces of length `π/(2r)` over the resonant range, then
/// geometrically growing pieces out to `omega`.
fn partition(omega: f64, k: usize, r: f64) -> Vec<(f64, f64, u32)> {
    let resonant = (16.0 * (k * k) as f64).max(64.0 * std::f64::consts::PI / r).min(omega);
    let step = std::f64::consts::FRAC_PI_2 / r;
    let n = (resonant / step).ceil().max(1.0) as usize;
    let step = resonant / n as f64;
    let mut pieces: Vec<(f64, f64, u32)> =
        (0..n).map(|i| (i as f64 * step, (i + 1) as f64 * step, 2)).collect();
    let mut a = resonant;
    while a < omega {
        let b = (2.0 * a).min(omega);
        pieces.push((a, b, 6));
        a = b;
    }
    pieces
}

pub fn oracle_cross_cov(sys: &NeutralSystem, j: usize, k: usize, tol: f64) -> Result<f64> {
    Ok(oracle_cross_cov_with(sys, j, k, &OracleOptions::new(tol))?.value)
}

/// `v_k = (1/2π) ∫ b_k² / |Δ_k(iω)|² dω`.
pub fn oracle_variance(sys: &NeutralSystem, k: usize, tol: f64) -> Result<f64> {
    oracle_cross_cov(sys, k, k, tol)
}

/// Full `K × K` covariance, pairs computed in parallel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCovariance {
    pub variances: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    /// Largest quadrature-plus-tail error bound over all entries.
    pub error_bound: f64,
    pub tol: f64,
}

pub fn oracle_covariance(sys: &NeutralSystem, opts: &OracleOptions) -> Result<OracleCovariance> {
    let modes = sys.modes();
    if !opts.assume_stable {
        (1..=modes)
            .into_par_iter()
            .map(|k| ensure_mode_stable(sys, k))
            .collect::<Result<Vec<()>>>()?;
    }
    let checked = OracleOptions {
        assume_stable: true,
        ..*opts
    };
    let pairs: Vec<(usize, usize)> = (1..=modes)
        .flat_map(|j| (j..=modes).map(move |k| (j, k)))
        .collect();
    let values = pairs
        .par_iter()
        .map(|&(j, k)| oracle_cross_cov_with(sys, j, k, &checked))
        .collect::<Result<Vec<_>>>()?;
    let mut cov = vec![vec![0.0; modes]; modes];
    let mut bound: f64 = 0.0;
    for (&(j, k), v) in pairs.iter().zip(&values) {
        cov[j - 1][k - 1] = v.value;
        cov[k - 1][j - 1] = v.value;
        bound = bound.max(v.error_bound());
    }
    Ok(OracleCovariance {
        variances: (0..modes).map(|i| cov[i][i]).collect(),
        covariance: cov,
        error_bound: bound,
        tol: opts.tol,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TestVerdict {
    Pass,
    Fail,
}

impl TestVerdict {
    fn from_bool(ok: bool) -> Self {
        if ok {
            TestVerdict::Pass
        } else {
            TestVerdict::Fail
        }
    }

    pub fn passed(&self) -> bool {
        *self == TestVerdict::Pass
    }
}

/// A statistic with its batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowStats {
    pub start: f64,
    pub end: f64,
    pub mean: Estimate,
    pub variance: Estimate,
    pub lag_autocov: Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Comparison {
    pub difference: f64,
    pub combined_stderr: f64,
    pub z: f64,
    pub verdict: TestVerdict,
}

impl Comparison {
    pub fn new(a: Estimate, b: Estimate) -> Self {
        let difference = a.value - b.value;
        let combined_stderr = a.stderr.hypot(b.stderr);
        let z = if combined_stderr > 0.0 {
            difference.abs() / combined_stderr
        } else if difference == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        Self {
            difference,
            combined_stderr,
            z,
            verdict: TestVerdict::from_bool(z < Z_LIMIT),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeStationarity {
    pub k: usize,
    pub windows: [WindowStats; 2],
    pub mean: Comparison,
    pub variance: Comparison,
    pub lag_autocov: Comparison,
    pub pooled_variance: Estimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<Comparison>,
    pub verdict: TestVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarityReport {
    pub burn_in: f64,
    pub window_length: f64,
    pub lag: f64,
    pub batches: usize,
    pub modes: Vec<ModeStationarity>,
    /// Two-window verdict over all modes.
    pub verdict: TestVerdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_verdict: Option<TestVerdict>,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Statistic over the whole slice plus the standard error from the spread
/// of its values over `BATCHES` contiguous batches.
fn batch_estimate(series: &[f64], stat: impl Fn(&[f64]) -> f64) -> Estimate {
    let value = stat(series);
    let len = series.len() / BATCHES;
    let batch: Vec<f64> = (0..BATCHES)
        .map(|b| stat(&series[b * len..(b + 1) * len]))
        .collect();
    let m = mean(&batch);
    let var = batch.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
    Estimate {
        value,
        stderr: (var / BATCHES as f64).sqrt(),
    }
}

fn window_stats(x: &[f64], lag: usize, start: f64, end: f64) -> WindowStats {
    let m = mean(x);
    let centered: Vec<f64> = x.iter().map(|v| v - m).collect();
    let squares: Vec<f64> = centered.iter().map(|v| v * v).collect();
    let products: Vec<f64> = centered
        .iter()
        .zip(&centered[lag..])
        .map(|(a, b)| a * b)
        .collect();
    WindowStats {
        start,
        end,
        mean: batch_estimate(x, mean),
        variance: batch_estimate(&squares, mean),
        lag_autocov: batch_estimate(&products, mean),
    }
}

/// Two-window stationarity test on per-mode series sampled every `dt`,
/// starting at time 0.
pub fn empirical_report_series(
    series: &[Vec<f64>],
    dt: f64,
    burn_in: f64,
    horizon: f64,
    oracle: Option<&[f64]>,
) -> Result<StationarityReport> {
    if series.is_empty() {
        return Err(Error::InsufficientLength("no modes".into()));
    }
    if !(dt > 0.0) || !(horizon > 0.0) || burn_in < 0.0 {
        return Err(Error::Config(format!(
            "need dt > 0, horizon > 0 and burn_in >= 0 (got {dt}, {horizon}, {burn_in})"
        )));
    }
    if let Some(o) = oracle {
        if o.len() != series.len() {
            return Err(Error::Config(format!(
                "{} oracle variances for {} modes",
                o.len(),
                series.len()
            )));
        }
    }
    let len = series[0].len();
    let first = (burn_in / dt).ceil() as usize;
    let available = len.saturating_sub(first);
    let per_window = available / 2;
    let window_length = per_window as f64 * dt;
    let lag = (horizon / dt).round().max(1.0) as usize;
    if window_length < MIN_WINDOW_HORIZONS * horizon || per_window < lag + BATCHES * 2 {
        return Err(Error::InsufficientLength(format!(
            "{available} samples after burn-in {burn_in} give windows of {window_length}, \
             need two windows of at least {} (= {MIN_WINDOW_HORIZONS} r)",
            MIN_WINDOW_HORIZONS * horizon
        )));
    }
    let mut modes = Vec::with_capacity(series.len());
    for (i, x) in series.iter().enumerate() {
        if x.len() != len {
            return Err(Error::Config("mode series differ in length".into()));
        }
        let w: Vec<&[f64]> = (0..2)
            .map(|n| &x[first + n * per_window..first + (n + 1) * per_window])
            .collect();
        let t = |idx: usize| idx as f64 * dt;
        let stats = [
            window_stats(w[0], lag, t(first), t(first + per_window)),
            window_stats(w[1], lag, t(first + per_window), t(first + 2 * per_window)),
        ];
        let mean_cmp = Comparison::new(stats[0].mean, stats[1].mean);
        let var_cmp = Comparison::new(stats[0].variance, stats[1].variance);
        let lag_cmp = Comparison::new(stats[0].lag_autocov, stats[1].lag_autocov);
        let pooled_slice = &x[first..first + 2 * per_window];
        let pm = mean(pooled_slice);
        let squares: Vec<f64> = pooled_slice.iter().map(|v| (v - pm).powi(2)).collect();
        let pooled = batch_estimate(&squares, mean);
        let oracle_variance = oracle.map(|o| o[i]);
        let oracle_cmp = oracle_variance.map(|v| {
            Comparison::new(
                pooled,
                Estimate {
                    value: v,
                    stderr: 0.0,
                },
            )
        });
        let verdict = TestVerdict::from_bool(
            mean_cmp.verdict.passed() && var_cmp.verdict.passed() && lag_cmp.verdict.passed(),
        );
        modes.push(ModeStationarity {
            k: i + 1,
            windows: stats,
            mean: mean_cmp,
            variance: var_cmp,
            lag_autocov: lag_cmp,
            pooled_variance: pooled,
            oracle_variance,
            oracle: oracle_cmp,
            verdict,
        });
    }
    let verdict = TestVerdict::from_bool(modes.iter().all(|m| m.verdict.passed()));
    let oracle_verdict = oracle.map(|_| {
        TestVerdict::from_bool(
            modes
                .iter()
                .all(|m| m.oracle.is_some_and(|c| c.verdict.passed())),
        )
    });
    Ok(StationarityReport {
        burn_in,
        window_length,
        lag: lag as f64 * dt,
        batches: BATCHES,
        modes,
        verdict,
        oracle_verdict,
    })
}

/// [`empirical_report_series`] on a recorded trajectory starting at `t = 0`.
pub fn empirical_report(
    traj: &Trajectory,
    burn_in: f64,
    horizon: f64,
    oracle: Option<&[f64]>,
) -> Result<StationarityReport> {
    let dt = traj
        .dt()
        .ok_or_else(|| Error::InsufficientLength("trajectory has fewer than two samples".into()))?;
    let series: Vec<Vec<f64>> = (0..traj.modes()).map(|i| traj.mode_series(i)).collect();
    empirical_report_series(&series, dt, burn_in, horizon, oracle)
}

/// Per-mode pooled variance over `[burn_in, T]`, averaged over independent
/// replicas.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloMode {
    pub k: usize,
    /// Mean over replicas of the time-averaged `y_k²` after burn-in.
    pub variance: Estimate,
    /// Mean over replicas of `y_k(T)`.
    pub terminal_mean: Estimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<Comparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub replicas: usize,
    pub burn_in: f64,
    pub t_end: f64,
    pub modes: Vec<MonteCarloMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_verdict: Option<TestVerdict>,
}

fn across(values: &[f64]) -> Estimate {
    let n = values.len() as f64;
    let m = mean(values);
    let stderr = if values.len() > 1 {
        (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        f64::NAN
    };
    Estimate { value: m, stderr }
}

/// Runs `cfg.replicas` replicas in parallel without storing trajectories.
///
/// The stationary mean is zero, so each replica's variance estimate is the
/// time average of `y_k²` over the steps after `cfg.burn_in`.
pub fn monte_carlo(
    sys: &NeutralSystem,
    cfg: &SimConfig,
    init: &SegmentState,
    oracle: Option<&[f64]>,
) -> Result<MonteCarloReport> {
    let stepper = Stepper::from_config(sys, cfg)?;
    let modes = sys.modes();
    if oracle.is_some_and(|o| o.len() != modes) {
        return Err(Error::Config("oracle length differs from mode count".into()));
    }
    let steps = cfg.steps()?;
    let first = init.step_index() + (cfg.burn_in / cfg.h).ceil() as u64;
    let per_replica = (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|p| {
            let mut state = init.clone();
            let mut sums = vec![0.0; modes];
            let mut count = 0u64;
            stepper.evolve(&mut state, steps, cfg.seed, p, |s| {
                if s.step_index() > first {
                    for (i, acc) in sums.iter_mut().enumerate() {
                        let y = *s.history(i).last().unwrap();
                        *acc += y * y;
                    }
                    count += 1;
                }
            })?;
            let averages: Vec<f64> = sums.iter().map(|s| s / count.max(1) as f64).collect();
            Ok((averages, state.current()))
        })
        .collect::<Result<Vec<_>>>()?;
    if per_replica.len() < 2 {
        return Err(Error::InsufficientLength("Monte Carlo needs at least two replicas".into()));
    }
    let mode_reports: Vec<MonteCarloMode> = (0..modes)
        .map(|i| {
            let vars: Vec<f64> = per_replica.iter().map(|(v, _)| v[i]).collect();
            let ends: Vec<f64> = per_replica.iter().map(|(_, e)| e[i]).collect();
            let variance = across(&vars);
            let oracle_variance = oracle.map(|o| o[i]);
            MonteCarloMode {
                k: i + 1,
                variance,
                terminal_mean: across(&ends),
                oracle_variance,
                oracle: oracle_variance.map(|v| {
                    Comparison::new(
                        variance,
                        Estimate {
                            value: v,
                            stderr: 0.0,
                        },
                    )
                }),
            }
        })
        .collect();
    let oracle_verdict = oracle.map(|_| {
        TestVerdict::from_bool(
            mode_reports
                .iter()
                .all(|m| m.oracle.is_some_and(|c| c.verdict.passed())),
        )
    });
    Ok(MonteCarloReport {
        replicas: cfg.replicas,
        burn_in: cfg.burn_in,
        t_end: cfg.t_end,
        modes: mode_reports,
        oracle_verdict,
    })
}

/// Burn-in giving `e^{-50}` decay at the given (negative) abscissa.
pub fn default_burn_in(abscissa: f64) -> Option<f64> {
    (abscissa < 0.0).then(|| 50.0 / abscissa.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::DelayKernel;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn no_delay(noise: Vec<f64>) -> NeutralSystem {
        let z = DelayKernel::zero(1.0).unwrap();
        NeutralSystem::new(z.clone(), z, 0.0, 0.0, noise).unwrap()
    }

    fn example(noise: Vec<f64>) -> NeutralSystem {
        NeutralSystem::new(
            DelayKernel::exponential(1.0, 0.1, 0.0).unwrap(),
            DelayKernel::constant(1.0, 0.2).unwrap(),
            0.0,
            0.0,
            noise,
        )
        .unwrap()
    }

    #[test]
    fn simpson_polynomial_and_exp() {
        let (v, _) = adaptive_simpson(&|x| x * x * x, 0.0, 2.0, 1e-12, 0);
        assert_relative_eq!(v, 4.0, epsilon = 1e-13);
        let (v, e) = adaptive_simpson(&|x: f64| x.exp(), 0.0, 1.0, 1e-12, 0);
        assert_relative_eq!(v, std::f64::consts::E - 1.0, epsilon = 1e-11);
        assert!(e < 1e-11);
    }

    #[test]
    fn ou_variances() {
        let sys = no_delay(vec![1.0, 3.0]);
        assert_relative_eq!(oracle_variance(&sys, 1, 1e-8).unwrap(), 0.5, epsilon = 1e-8);
        assert_relative_eq!(oracle_variance(&sys, 2, 1e-8).unwrap(), 9.0 / 8.0, epsilon = 1e-8);
    }

    #[test]
    fn ou_cross_covariance_closed_form() {
        // shared noise: E[x_j x_k] = b_j b_k / (j² + k²)
        let sys = no_delay(vec![1.0; 4]);
        let c = oracle_covariance(&sys, &OracleOptions::new(1e-8)).unwrap();
        for j in 1..=4 {
            for k in 1..=4 {
                let exact = 1.0 / (j * j + k * k) as f64;
                assert!((c.covariance[j - 1][k - 1] - exact).abs() < 1e-8, "{j} {k}");
            }
        }
        assert_relative_eq!(oracle_cross_cov(&sys, 1, 2, 1e-8).unwrap(), 0.2, epsilon = 1e-8);
    }

    #[test]
    fn zero_noise_gives_zero() {
        let sys = no_delay(vec![1.0, 0.0]);
        assert_eq!(oracle_cross_cov(&sys, 1, 2, 1e-8).unwrap(), 0.0);
    }

    #[test]
    fn diagonal_matches_variance() {
        let sys = example(vec![1.0, 0.5]);
        let a = oracle_cross_cov(&sys, 2, 2, 1e-8).unwrap();
        let b = oracle_variance(&sys, 2, 1e-8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn delayed_covariance_is_symmetric_psd() {
        let sys = example(vec![1.0, 0.5, -0.3]);
        let c = oracle_covariance(&sys, &OracleOptions::new(1e-9)).unwrap();
        let ab = oracle_cross_cov(&sys, 1, 3, 1e-9).unwrap();
        let ba = oracle_cross_cov(&sys, 3, 1, 1e-9).unwrap();
        assert!((ab - ba).abs() < 1e-9);
        // 3×3 PSD: principal minors
        let m = &c.covariance;
        assert!(m[0][0] > 0.0);
        assert!(m[0][0] * m[1][1] - m[0][1] * m[1][0] >= -1e-9);
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        assert!(det >= -1e-9);
    }

    #[test]
    fn halving_tol_moves_value_less_than_tol() {
        let sys = example(vec![1.0]);
        let mut tol = 1e-5;
        let mut prev = oracle_variance(&sys, 1, tol).unwrap();
        for _ in 0..3 {
            tol /= 2.0;
            let v = oracle_variance(&sys, 1, tol).unwrap();
            assert!((v - prev).abs() <= 2.0 * tol);
            prev = v;
        }
    }

    #[test]
    fn unstable_system_is_rejected() {
        // γ ≡ 0, β ≡ -2: Δ_1(0) = 1 + L_β(0) = -1 < 0, a real root crosses
        let sys = NeutralSystem::new(
            DelayKernel::zero(1.0).unwrap(),
            DelayKernel::constant(1.0, -2.0).unwrap(),
            0.0,
            0.0,
            vec![1.0],
        )
        .unwrap();
        assert!(matches!(oracle_variance(&sys, 1, 1e-6), Err(Error::Precondition(_))));
    }

    #[test]
    fn non_contractive_neutral_part_needs_cutoff() {
        let sys = NeutralSystem::new(
            DelayKernel::zero(1.0).unwrap(),
            DelayKernel::zero(1.0).unwrap(),
            1.0,
            0.0,
            vec![1.0],
        )
        .unwrap();
        let opts = OracleOptions {
            assume_stable: true,
            ..OracleOptions::new(1e-6)
        };
        assert!(matches!(
            oracle_cross_cov_with(&sys, 1, 1, &opts),
            Err(Error::TailBoundUnavailable(_))
        ));
    }

    #[test]
    fn white_noise_passes() {
        use rand_chacha::ChaCha8Rng;
        use rand_core::{RngCore, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..40_000)
            .map(|_| (rng.next_u32() as f64 / u32::MAX as f64) - 0.5)
            .collect();
        let rep = empirical_report_series(&[x.clone()], 1.0, 0.0, 1.0, None).unwrap();
        assert_eq!(rep.verdict, TestVerdict::Pass);
        let m = mean(&x);
        let sample_var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64;
        assert!((rep.modes[0].pooled_variance.value - sample_var).abs() < 1e-12);
        assert_relative_eq!(sample_var, 1.0 / 12.0, epsilon = 2e-3);
    }

    #[test]
    fn drift_fails_mean_test() {
        let x: Vec<f64> = (0..40_000).map(|i| (i as f64 * 0.7).sin() * 0.1 + i as f64 * 1e-4).collect();
        let rep = empirical_report_series(&[x], 1.0, 0.0, 1.0, None).unwrap();
        assert_eq!(rep.modes[0].mean.verdict, TestVerdict::Fail);
        assert_eq!(rep.verdict, TestVerdict::Fail);
    }

    #[test]
    fn short_series_is_rejected() {
        let x = vec![0.0; 100];
        assert!(matches!(
            empirical_report_series(&[x], 0.1, 0.0, 1.0, None),
            Err(Error::InsufficientLength(_))
        ));
    }

    #[test]
    fn burn_in_default() {
        assert_eq!(default_burn_in(-0.5), Some(100.0));
        assert_eq!(default_burn_in(0.1), None);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn oracle_scales_quadratically(c in 0.1f64..5.0) {
            let base = example(vec![1.0, 0.5]);
            let scaled = example(vec![c, 0.5 * c]);
            let tol = 1e-9;
            for (j, k) in [(1, 1), (1, 2), (2, 2)] {
                let a = oracle_cross_cov(&base, j, k, tol).unwrap();
                let b = oracle_cross_cov(&scaled, j, k, tol * c * c).unwrap();
                prop_assert!((b - c * c * a).abs() <= 2.0 * tol * c * c);
            }
        }

        #[test]
        fn zero_delay_variance_closed_form(k in 1usize..=6, b in -3.0f64..3.0) {
            prop_assume!(b.abs() > 1e-3);
            let mut noise = vec![1.0; 6];
            noise[k - 1] = b;
            let sys = no_delay(noise);
            let v = oracle_variance(&sys, k, 1e-8).unwrap();
            prop_assert!((v - b * b / (2.0 * (k * k) as f64)).abs() <= 1e-8);
        }
    }
}
