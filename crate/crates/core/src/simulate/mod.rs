//! Spectral-Galerkin time stepping of the neutral system.
//!
//! Each mode `k` carries the neutral bracket `z_k = y_k(t) − α₁y_k(t−r) − Q_γ[y_k,t]`
//! (the head) and the history segment of `y_k` on the grid `{−Nh, …, 0}`.
//! The head obeys
//!
//! ```text
//! dz_k = (−k²y_k + k²(α₁−α₂)y_k(t−r) − k²Q_{β−γ}[y_k,t]) dt + b_k dW
//! ```
//!
//! with one scalar Brownian motion shared by all modes. `Q` is the
//! composite trapezoid rule on the step grid, so the newest history value
//! enters the recovery of `y_k(t+h)` through the endpoint weight `h/2·γ(0)`.

mod noise;

pub use noise::NoisePath;

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charfn::NeutralSystem;
use crate::error::{Error, Result};

/// Steps whose linear solve has a denominator below this are rejected.
pub const SINGULAR_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Explicit,
    #[default]
    SemiImplicit,
    /// `θ = 1/2` on the `−k²y` term; reproduces the OU stationary variance
    /// `b²/(2k²)` exactly for every `h`.
    Trapezoidal,
}

impl Scheme {
    fn theta(self) -> f64 {
        match self {
            Scheme::Explicit => 0.0,
            Scheme::SemiImplicit => 1.0,
            Scheme::Trapezoidal => 0.5,
        }
    }
}

fn default_replicas() -> usize {
    1
}

fn default_record_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub h: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    #[serde(default)]
    pub burn_in: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    /// Keep every `record_every`-th step in the returned trajectory.
    #[serde(default = "default_record_every")]
    pub record_every: usize,
}

impl SimConfig {
    pub fn new(h: f64, t_end: f64) -> Self {
        Self {
            h,
            t_end,
            burn_in: 0.0,
            scheme: Scheme::default(),
            seed: 0,
            replicas: 1,
            record_every: 1,
        }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_replicas(mut self, replicas: usize) -> Self {
        self.replicas = replicas;
        self
    }

    pub fn with_burn_in(mut self, burn_in: f64) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn with_record_every(mut self, every: usize) -> Self {
        self.record_every = every;
        self
    }

    /// Number of steps covering `T`.
    pub fn steps(&self) -> Result<u64> {
        steps_for(self.t_end, self.h, "T")
    }

    /// Checks the invariants against the delay horizon and returns `N = r/h`.
    pub fn validate(&self, r: f64) -> Result<usize> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::Config(format!("sim.h must be positive, got {}", self.h)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config(format!("sim.T must be non-negative, got {}", self.t_end)));
        }
        if self.burn_in < 0.0 || (self.burn_in >= self.t_end && self.burn_in > 0.0) {
            return Err(Error::Config(format!(
                "sim.burn_in = {} must lie in [0, T)",
                self.burn_in
            )));
        }
        if self.replicas == 0 {
            return Err(Error::Config("sim.replicas must be positive".into()));
        }
        if self.record_every == 0 {
            return Err(Error::Config("sim.record_every must be positive".into()));
        }
        self.steps()?;
        grid_intervals(r, self.h)
    }
}

fn steps_for(span: f64, h: f64, what: &str) -> Result<u64> {
    let n = (span / h).round();
    if (n * h - span).abs() > 1e-9 * span.max(h) {
        return Err(Error::Config(format!(
            "{what} = {span} is not a multiple of h = {h}"
        )));
    }
    Ok(n as u64)
}

/// `N` with `N h = r`, or a config error when `h` does not divide `r`.
pub fn grid_intervals(r: f64, h: f64) -> Result<usize> {
    let n = steps_for(r, h, "delay horizon r")?;
    if n == 0 {
        return Err(Error::Config(format!("h = {h} exceeds the delay horizon r = {r}")));
    }
    Ok(n as usize)
}

/// Ring buffer over the `N + 1` history samples. Values are written twice so
/// that the window is always one contiguous slice, oldest first.
#[derive(Debug, Clone, PartialEq)]
struct History {
    buf: Vec<f64>,
    start: usize,
    len: usize,
}

impl History {
    fn new(samples: &[f64]) -> Self {
        let len = samples.len();
        let mut buf = Vec::with_capacity(2 * len);
        buf.extend_from_slice(samples);
        buf.extend_from_slice(samples);
        Self { buf, start: 0, len }
    }

    fn window(&self) -> &[f64] {
        &self.buf[self.start..self.start + self.len]
    }

    /// Drops the oldest sample and appends `v` as the newest.
    fn push(&mut self, v: f64) {
        let slot = self.start;
        self.buf[slot] = v;
        self.buf[slot + self.len] = v;
        self.start = (self.start + 1) % self.len;
    }

    fn set_newest(&mut self, v: f64) {
        let slot = (self.start + self.len - 1) % self.len;
        self.buf[slot] = v;
        self.buf[slot + self.len] = v;
    }
}

/// State of the lifted system: per-mode head and history segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentState {
    t: f64,
    step: u64,
    h: f64,
    head: Vec<f64>,
    history: Vec<History>,
}

impl SegmentState {
    pub fn time(&self) -> f64 {
        self.t
    }

    /// Index of the next step; the noise counter.
    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn modes(&self) -> usize {
        self.head.len()
    }

    /// `N`, the number of grid intervals in the history segment.
    pub fn intervals(&self) -> usize {
        self.history[0].len - 1
    }

    /// Heads `z_k`; index `i` is mode `k = i + 1`.
    pub fn head(&self) -> &[f64] {
        &self.head
    }

    /// History of mode `i + 1` on `{−Nh, …, 0}`, oldest first.
    pub fn history(&self, i: usize) -> &[f64] {
        self.history[i].window()
    }

    /// Current values `y_k(t)`.
    pub fn current(&self) -> Vec<f64> {
        self.history.iter().map(|h| *h.window().last().unwrap()).collect()
    }

    /// Sup-norm distance over heads and histories.
    pub fn distance(&self, other: &SegmentState) -> f64 {
        let heads = self
            .head
            .iter()
            .zip(&other.head)
            .map(|(a, b)| (a - b).abs());
        let hist = self.history.iter().zip(&other.history).flat_map(|(a, b)| {
            a.window()
                .iter()
                .zip(b.window())
                .map(|(x, y)| (x - y).abs())
        });
        heads.chain(hist).fold(0.0, f64::max)
    }
}

/// Initial history segment per mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HistorySpec {
    Zero,
    /// `y_k(θ) = c_k`; a single value is broadcast to every mode.
    Constant { values: Vec<f64> },
    /// `y_k(θ) = c_k + s_k θ`.
    Linear { values: Vec<f64>, slopes: Vec<f64> },
    /// Grid samples per mode, oldest first; must have `N + 1` entries.
    Samples { values: Vec<Vec<f64>> },
}

fn per_mode(v: &[f64], modes: usize, what: &str) -> Result<Vec<f64>> {
    match v.len() {
        1 => Ok(vec![v[0]; modes]),
        n if n == modes => Ok(v.to_vec()),
        n => Err(Error::Config(format!(
            "history.{what} has {n} entries, expected 1 or {modes}"
        ))),
    }
}

impl HistorySpec {
    /// Samples on the grid `θ_j = −r + jh`, `j = 0..=N`.
    pub fn samples(&self, modes: usize, intervals: usize, h: f64) -> Result<Vec<Vec<f64>>> {
        let grid = |f: &dyn Fn(f64) -> f64| -> Vec<f64> {
            (0..=intervals)
                .map(|j| f(-((intervals - j) as f64) * h))
                .collect()
        };
        match self {
            HistorySpec::Zero => Ok(vec![vec![0.0; intervals + 1]; modes]),
            HistorySpec::Constant { values } => Ok(per_mode(values, modes, "values")?
                .into_iter()
                .map(|c| vec![c; intervals + 1])
                .collect()),
            HistorySpec::Linear { values, slopes } => {
                let c = per_mode(values, modes, "values")?;
                let s = per_mode(slopes, modes, "slopes")?;
                Ok(c.iter().zip(&s).map(|(&c, &s)| grid(&|th| c + s * th)).collect())
            }
            HistorySpec::Samples { values } => {
                if values.len() != modes {
                    return Err(Error::Config(format!(
                        "history.values has {} modes, expected {modes}",
                        values.len()
                    )));
                }
                for (i, v) in values.iter().enumerate() {
                    if v.len() != intervals + 1 {
                        return Err(Error::Config(format!(
                            "history.values[{i}] has {} samples, the grid needs {}",
                            v.len(),
                            intervals + 1
                        )));
                    }
                }
                Ok(values.clone())
            }
        }
    }
}

/// Initial datum `φ = (φ₀, φ₁)`; `φ₀` defaults to the compatible value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialData {
    pub history: HistorySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<Vec<f64>>,
}

impl InitialData {
    pub fn zero() -> Self {
        Self {
            history: HistorySpec::Zero,
            head: None,
        }
    }

    pub fn constant(values: Vec<f64>) -> Self {
        Self {
            history: HistorySpec::Constant { values },
            head: None,
        }
    }
}

/// Discrete neutral functional `D = α₁·shift(−r) + Q_γ` on the step grid.
#[derive(Debug, Clone)]
struct NeutralPart {
    alpha1: f64,
    w_gamma: Vec<f64>,
    gamma_zero: bool,
}

impl NeutralPart {
    fn new(sys: &NeutralSystem, intervals: usize) -> Self {
        Self {
            alpha1: sys.alpha1(),
            w_gamma: sys.gamma().trapezoid_weights(intervals),
            gamma_zero: sys.gamma().is_zero(),
        }
    }

    /// `1 − w_N γ(0)`: coefficient of the newest sample in `y − Dy`.
    fn lead(&self) -> f64 {
        1.0 - self.w_gamma.last().unwrap()
    }

    /// Part of `D[window]` not involving the newest sample.
    fn older(&self, window: &[f64]) -> f64 {
        let n = window.len() - 1;
        let mut p = self.alpha1 * window[0];
        if !self.gamma_zero {
            p += dot(&self.w_gamma[..n], &window[..n]);
        }
        p
    }

    fn head_of(&self, window: &[f64]) -> f64 {
        self.lead() * window[window.len() - 1] - self.older(window)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..a.len() {
        s += a[j] * b[j];
    }
    s
}

/// Builds the state at `t = 0` from `φ₁` samples and optional `φ₀`.
///
/// With `φ₀` supplied the head starts from it and `y(0)` is re-derived from
/// the recovery relation; otherwise the head is the compatible value
/// `φ₁(0) − Dφ₁`.
pub fn init_history(sys: &NeutralSystem, init: &InitialData, h: f64) -> Result<SegmentState> {
    let intervals = grid_intervals(sys.horizon(), h)?;
    let modes = sys.modes();
    let samples = init.history.samples(modes, intervals, h)?;
    if samples.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Config("history samples must be finite".into()));
    }
    let d = NeutralPart::new(sys, intervals);
    let mut history: Vec<History> = samples.iter().map(|s| History::new(s)).collect();
    let head = match &init.head {
        None => samples.iter().map(|s| d.head_of(s)).collect(),
        Some(phi0) => {
            let phi0 = per_mode(phi0, modes, "head")?;
            let lead = d.lead();
            if lead.abs() < SINGULAR_EPS {
                return Err(Error::StepSingular {
                    t: 0.0,
                    reason: format!("1 - h/2 gamma(0) = {lead:e}; reduce h"),
                });
            }
            for (hist, &z) in history.iter_mut().zip(&phi0) {
                let y0 = (z + d.older(hist.window())) / lead;
                hist.set_newest(y0);
            }
            phi0
        }
    };
    Ok(SegmentState {
        t: 0.0,
        step: 0,
        h,
        head,
        history,
    })
}

/// One-step map for a fixed system, step and scheme.
#[derive(Debug, Clone)]
pub struct Stepper {
    h: f64,
    intervals: usize,
    theta: f64,
    d: NeutralPart,
    delay_coeff: f64,
    w_drift: Vec<f64>,
    drift_zero: bool,
    k2: Vec<f64>,
    noise: Vec<f64>,
    denom: Vec<f64>,
}

impl Stepper {
    pub fn new(sys: &NeutralSystem, scheme: Scheme, h: f64) -> Result<Self> {
        let intervals = grid_intervals(sys.horizon(), h)?;
        let d = NeutralPart::new(sys, intervals);
        let w_beta = sys.beta().trapezoid_weights(intervals);
        let w_drift: Vec<f64> = w_beta.iter().zip(&d.w_gamma).map(|(b, g)| b - g).collect();
        let drift_zero = w_drift.iter().all(|&w| w == 0.0);
        let theta = scheme.theta();
        let k2: Vec<f64> = (1..=sys.modes()).map(|k| (k * k) as f64).collect();
        let denom: Vec<f64> = k2.iter().map(|&k2| d.lead() + theta * h * k2).collect();
        for (i, &den) in denom.iter().enumerate() {
            if den.abs() < SINGULAR_EPS {
                return Err(Error::StepSingular {
                    t: 0.0,
                    reason: format!("mode {}: step denominator {den:e}; reduce h", i + 1),
                });
            }
        }
        Ok(Self {
            h,
            intervals,
            theta,
            delay_coeff: sys.alpha1() - sys.alpha2(),
            d,
            w_drift,
            drift_zero,
            k2,
            noise: sys.noise().to_vec(),
            denom,
        })
    }

    pub fn from_config(sys: &NeutralSystem, cfg: &SimConfig) -> Result<Self> {
        cfg.validate(sys.horizon())?;
        Self::new(sys, cfg.scheme, cfg.h)
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    fn check_state(&self, state: &SegmentState) -> Result<()> {
        if state.modes() != self.k2.len()
            || state.intervals() != self.intervals
            || state.h != self.h
        {
            return Err(Error::Config(format!(
                "state has {} modes on {} intervals with h = {}, stepper expects {} on {} with h = {}",
                state.modes(),
                state.intervals(),
                state.h,
                self.k2.len(),
                self.intervals,
                self.h
            )));
        }
        Ok(())
    }

    /// Advances every mode by one step with the shared increment `dw`.
    pub fn step(&self, state: &mut SegmentState, dw: f64) -> Result<()> {
        let h = self.h;
        for i in 0..self.k2.len() {
            let k2 = self.k2[i];
            let hist = &mut state.history[i];
            let w = hist.window();
            let n = w.len() - 1;
            let y = w[n];
            let mut drift = k2 * self.delay_coeff * w[0] - k2 * (1.0 - self.theta) * y;
            if !self.drift_zero {
                drift -= k2 * dot(&self.w_drift, w);
            }
            let explicit = state.head[i] + h * drift + self.noise[i] * dw;
            // D at t+h without its newest sample: the window shifted by one
            let mut p = self.d.alpha1 * w[1];
            if !self.d.gamma_zero {
                p += dot(&self.d.w_gamma[..n], &w[1..]);
            }
            let y_new = (p + explicit) / self.denom[i];
            if !y_new.is_finite() {
                return Err(Error::StepSingular {
                    t: state.t,
                    reason: format!("mode {} became non-finite", i + 1),
                });
            }
            state.head[i] = self.d.lead() * y_new - p;
            hist.push(y_new);
        }
        state.step += 1;
        state.t = state.step as f64 * h;
        Ok(())
    }

    /// `max_k |z_k − (y_k − Dy_k)| / (1 + |y_k|)`.
    pub fn recovery_residual(&self, state: &SegmentState) -> f64 {
        (0..state.modes())
            .map(|i| {
                let w = state.history(i);
                let y = w[w.len() - 1];
                (state.head[i] - self.d.head_of(w)).abs() / (1.0 + y.abs())
            })
            .fold(0.0, f64::max)
    }

    /// Runs `steps` steps of replica `replica`, calling `visit` after each.
    pub fn evolve(
        &self,
        state: &mut SegmentState,
        steps: u64,
        seed: u64,
        replica: u64,
        mut visit: impl FnMut(&SegmentState),
    ) -> Result<()> {
        self.check_state(state)?;
        let mut noise = NoisePath::new(seed, replica, self.h);
        let noisy = self.noise.iter().any(|&b| b != 0.0);
        for _ in 0..steps {
            let dw = if noisy { noise.increment(state.step) } else { 0.0 };
            self.step(state, dw)?;
            visit(state);
        }
        Ok(())
    }
}

/// Sampled modal time series.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    modes: usize,
    times: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
}

impl Trajectory {
    fn new(modes: usize) -> Self {
        Self {
            modes,
            times: Vec::new(),
            y: Vec::new(),
            z: Vec::new(),
        }
    }

    fn record(&mut self, s: &SegmentState) {
        self.times.push(s.t);
        self.y.extend(s.history.iter().map(|h| *h.window().last().unwrap()));
        self.z.extend_from_slice(&s.head);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `y_k` at sample `n` for all modes.
    pub fn y_row(&self, n: usize) -> &[f64] {
        &self.y[n * self.modes..(n + 1) * self.modes]
    }

    pub fn z_row(&self, n: usize) -> &[f64] {
        &self.z[n * self.modes..(n + 1) * self.modes]
    }

    /// Time series of mode `i + 1`.
    pub fn mode_series(&self, i: usize) -> Vec<f64> {
        self.y.iter().skip(i).step_by(self.modes).copied().collect()
    }

    /// Sampling interval, or `None` for fewer than two samples.
    pub fn dt(&self) -> Option<f64> {
        (self.times.len() >= 2).then(|| self.times[1] - self.times[0])
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    /// CSV with header `t,y_1..y_K,z_1..z_K`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.modes).map(|k| format!("y_{k}")));
        header.extend((1..=self.modes).map(|k| format!("z_{k}")));
        writeln!(out, "{}", header.join(","))?;
        for n in 0..self.len() {
            write!(out, "{}", self.times[n])?;
            for v in self.y_row(n).iter().chain(self.z_row(n)) {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Trajectory of replica `replica`, recording the initial state and every
/// `record_every`-th step.
pub fn run_replica(
    sys: &NeutralSystem,
    cfg: &SimConfig,
    init: &SegmentState,
    replica: u64,
) -> Result<Trajectory> {
    let stepper = Stepper::from_config(sys, cfg)?;
    let mut state = init.clone();
    let mut traj = Trajectory::new(sys.modes());
    traj.record(&state);
    let every = cfg.record_every as u64;
    let start = state.step;
    stepper.evolve(&mut state, cfg.steps()?, cfg.seed, replica, |s| {
        if (s.step - start) % every == 0 {
            traj.record(s);
        }
    })?;
    Ok(traj)
}

pub fn run(sys: &NeutralSystem, cfg: &SimConfig, init: &SegmentState) -> Result<Trajectory> {
    run_replica(sys, cfg, init, 0)
}

/// All `cfg.replicas` trajectories, computed in parallel, in replica order.
pub fn run_replicas(
    sys: &NeutralSystem,
    cfg: &SimConfig,
    init: &SegmentState,
) -> Result<Vec<Trajectory>> {
    (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|p| run_replica(sys, cfg, init, p))
        .collect()
}

/// `y(t, ξ) = Σ_k y_k √(2/π) sin(kξ)`.
pub fn reconstruct_field(modal: &[f64], xi: &[f64]) -> Vec<f64> {
    let scale = (2.0 / std::f64::consts::PI).sqrt();
    xi.iter()
        .map(|&x| {
            if x == 0.0 || x == std::f64::consts::PI {
                return 0.0;
            }
            modal
                .iter()
                .enumerate()
                .map(|(i, y)| y * ((i + 1) as f64 * x).sin())
                .sum::<f64>()
                * scale
        })
        .collect()
}

/// Sup-norm gap between evolving `s + t` at once and evolving `s`,
/// rebuilding the state from its `(head, history)` pair, then evolving `t`.
pub fn restart_check(
    sys: &NeutralSystem,
    cfg: &SimConfig,
    init: &SegmentState,
    s: f64,
    t: f64,
) -> Result<f64> {
    let stepper = Stepper::new(sys, cfg.scheme, cfg.h)?;
    let ns = steps_for(s, cfg.h, "s")?;
    let nt = steps_for(t, cfg.h, "t")?;

    let mut direct = init.clone();
    stepper.evolve(&mut direct, ns + nt, cfg.seed, 0, |_| {})?;

    let mut first = init.clone();
    stepper.evolve(&mut first, ns, cfg.seed, 0, |_| {})?;
    let samples: Vec<Vec<f64>> = (0..first.modes()).map(|i| first.history(i).to_vec()).collect();
    let mut restarted = init_history(
        sys,
        &InitialData {
            history: HistorySpec::Samples { values: samples },
            head: Some(first.head().to_vec()),
        },
        cfg.h,
    )?;
    restarted.step = first.step;
    restarted.t = first.t;
    stepper.evolve(&mut restarted, nt, cfg.seed, 0, |_| {})?;
    Ok(direct.distance(&restarted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::DelayKernel;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn no_delay(modes: usize, b: f64) -> NeutralSystem {
        let z = DelayKernel::zero(1.0).unwrap();
        NeutralSystem::new(z.clone(), z, 0.0, 0.0, vec![b; modes]).unwrap()
    }

    fn example(kappa: f64, alpha: f64, b: f64, modes: usize) -> NeutralSystem {
        NeutralSystem::new(
            DelayKernel::exponential(1.0, kappa, 0.0).unwrap(),
            DelayKernel::constant(1.0, alpha).unwrap(),
            0.0,
            0.0,
            vec![b; modes],
        )
        .unwrap()
    }

    fn delayed(modes: usize) -> NeutralSystem {
        NeutralSystem::new(
            DelayKernel::exponential(1.0, 0.3, -0.5).unwrap(),
            DelayKernel::constant(1.0, 0.2).unwrap(),
            0.15,
            -0.1,
            vec![0.7; modes],
        )
        .unwrap()
    }

    #[test]
    fn zero_history_gives_zero_head() {
        let s = init_history(&example(0.1, 0.2, 1.0, 3), &InitialData::zero(), 0.01).unwrap();
        assert!(s.head().iter().all(|&z| z == 0.0));
        assert_eq!(s.intervals(), 100);
        assert_eq!(s.history(0).len(), 101);
    }

    #[test]
    fn constant_history_head() {
        let g = 0.3;
        let sys = NeutralSystem::new(
            DelayKernel::constant(1.0, g).unwrap(),
            DelayKernel::zero(1.0).unwrap(),
            0.0,
            0.0,
            vec![1.0],
        )
        .unwrap();
        let s = init_history(&sys, &InitialData::constant(vec![2.0]), 0.05).unwrap();
        assert_relative_eq!(s.head()[0], 2.0 * (1.0 - g), epsilon = 1e-14);
    }

    #[test]
    fn grid_mismatch_is_config_error() {
        let sys = no_delay(1, 0.0);
        assert!(matches!(
            init_history(&sys, &InitialData::zero(), 0.3),
            Err(Error::Config(_))
        ));
        let bad = InitialData {
            history: HistorySpec::Samples {
                values: vec![vec![0.0; 5]],
            },
            head: None,
        };
        assert!(matches!(init_history(&sys, &bad, 0.1), Err(Error::Config(_))));
    }

    #[test]
    fn supplied_head_is_honored() {
        let sys = delayed(2);
        let init = InitialData {
            history: HistorySpec::Constant { values: vec![1.0] },
            head: Some(vec![0.25, -0.5]),
        };
        let s = init_history(&sys, &init, 0.01).unwrap();
        assert_eq!(s.head(), &[0.25, -0.5]);
        let st = Stepper::new(&sys, Scheme::SemiImplicit, 0.01).unwrap();
        assert!(st.recovery_residual(&s) < 1e-14);
    }

    #[test]
    fn euler_steps_without_delay() {
        let sys = no_delay(3, 0.0);
        let h = 0.01;
        let init = InitialData::constant(vec![1.0]);
        for (scheme, factor) in [
            (Scheme::Explicit, Box::new(move |k2: f64| 1.0 - k2 * h) as Box<dyn Fn(f64) -> f64>),
            (Scheme::SemiImplicit, Box::new(move |k2: f64| 1.0 / (1.0 + k2 * h))),
        ] {
            let mut s = init_history(&sys, &init, h).unwrap();
            let st = Stepper::new(&sys, scheme, h).unwrap();
            st.step(&mut s, 0.0).unwrap();
            for (i, y) in s.current().iter().enumerate() {
                let k2 = ((i + 1) * (i + 1)) as f64;
                assert_relative_eq!(*y, factor(k2), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn singular_step_is_rejected() {
        // 1 - h/2 γ(0) = 0 with h = 0.5, γ ≡ 4
        let sys = NeutralSystem::new(
            DelayKernel::constant(1.0, 4.0).unwrap(),
            DelayKernel::zero(1.0).unwrap(),
            0.0,
            0.0,
            vec![0.0],
        )
        .unwrap();
        assert!(matches!(
            Stepper::new(&sys, Scheme::Explicit, 0.5),
            Err(Error::StepSingular { .. })
        ));
    }

    #[test]
    fn empty_horizon_returns_initial_state() {
        let sys = example(0.1, 0.2, 1.0, 2);
        let init = init_history(&sys, &InitialData::constant(vec![1.0]), 0.01).unwrap();
        let traj = run(&sys, &SimConfig::new(0.01, 0.0), &init).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.y_row(0), &[1.0, 1.0]);
    }

    #[test]
    fn zero_noise_zero_data_stays_zero() {
        let sys = example(0.1, 0.2, 0.0, 3);
        let init = init_history(&sys, &InitialData::zero(), 0.01).unwrap();
        let traj = run(&sys, &SimConfig::new(0.01, 2.0), &init).unwrap();
        assert_eq!(traj.len(), 201);
        assert!((0..traj.len()).all(|n| traj.y_row(n).iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn seeds_are_reproducible() {
        let sys = delayed(3);
        let init = init_history(&sys, &InitialData::zero(), 0.01).unwrap();
        let cfg = SimConfig::new(0.01, 3.0).with_seed(11).with_replicas(4);
        let a = run_replicas(&sys, &cfg, &init).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_replicas(&sys, &cfg, &init).unwrap());
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn record_every_subsamples() {
        let sys = delayed(1);
        let init = init_history(&sys, &InitialData::constant(vec![1.0]), 0.01).unwrap();
        let full = run(&sys, &SimConfig::new(0.01, 1.0), &init).unwrap();
        let sub = run(&sys, &SimConfig::new(0.01, 1.0).with_record_every(10), &init).unwrap();
        assert_eq!(sub.len(), 11);
        assert_eq!(sub.y_row(3), full.y_row(30));
        assert_relative_eq!(sub.dt().unwrap(), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn csv_header_and_rows() {
        let sys = no_delay(2, 0.0);
        let init = init_history(&sys, &InitialData::constant(vec![1.0]), 0.5).unwrap();
        let traj = run(&sys, &SimConfig::new(0.5, 0.5), &init).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,y_1,y_2,z_1,z_2");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn field_reconstruction() {
        let f = reconstruct_field(&[1.0, 0.0], &[std::f64::consts::FRAC_PI_2]);
        assert_relative_eq!(f[0], 0.797884561, epsilon = 1e-9);
        assert_eq!(reconstruct_field(&[0.0; 4], &[0.3, 1.0]), vec![0.0, 0.0]);
        assert_eq!(
            reconstruct_field(&[1.0, 2.0, 3.0], &[0.0, std::f64::consts::PI]),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn restart_trivial_and_one_horizon() {
        let sys = delayed(3).with_noise(vec![0.0; 3]).unwrap();
        let cfg = SimConfig::new(0.01, 1.0);
        let init = init_history(&sys, &InitialData::constant(vec![1.0, -0.5, 0.2]), 0.01).unwrap();
        assert_eq!(restart_check(&sys, &cfg, &init, 0.0, 1.0).unwrap(), 0.0);
        assert!(restart_check(&sys, &cfg, &init, 1.0, 1.0).unwrap() <= 1e-12);
    }

    #[test]
    fn mean_of_noisy_runs_vanishes() {
        let sys = example(0.1, 0.2, 1.0, 2);
        let init = init_history(&sys, &InitialData::zero(), 0.01).unwrap();
        let cfg = SimConfig::new(0.01, 2.0).with_seed(5).with_replicas(200);
        let ends: Vec<f64> = run_replicas(&sys, &cfg, &init)
            .unwrap()
            .iter()
            .map(|t| t.y_row(t.len() - 1)[0])
            .collect();
        let n = ends.len() as f64;
        let mean = ends.iter().sum::<f64>() / n;
        let sd = (ends.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() <= 3.0 * sd / n.sqrt());
    }

    #[test]
    fn independent_seeds_decorrelate() {
        let sys = example(0.1, 0.2, 1.0, 1);
        let init = init_history(&sys, &InitialData::zero(), 0.01).unwrap();
        let ends = |seed| -> Vec<f64> {
            let cfg = SimConfig::new(0.01, 1.0).with_seed(seed).with_replicas(100);
            run_replicas(&sys, &cfg, &init)
                .unwrap()
                .iter()
                .map(|t| t.y_row(t.len() - 1)[0])
                .collect()
        };
        let (a, b) = (ends(1), ends(2));
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        let corr = cov / (va * vb).sqrt();
        assert!(corr.abs() <= 3.0 / n.sqrt());
    }

    fn history_strategy(modes: usize, len: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-2.0f64..2.0, len), modes)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn recovery_invariant_holds(hist in history_strategy(3, 21), seed in any::<u64>(),
                                    explicit in any::<bool>()) {
            let sys = delayed(3);
            let h = 0.05;
            let init = InitialData { history: HistorySpec::Samples { values: hist }, head: None };
            let mut s = init_history(&sys, &init, h).unwrap();
            let scheme = if explicit { Scheme::Explicit } else { Scheme::SemiImplicit };
            let st = Stepper::new(&sys, scheme, h).unwrap();
            prop_assert!(st.recovery_residual(&s) <= 1e-12);
            let mut worst: f64 = 0.0;
            st.evolve(&mut s, 100, seed, 0, |s| worst = worst.max(st.recovery_residual(s))).unwrap();
            prop_assert!(worst <= 1e-12);
        }

        #[test]
        fn deterministic_runs_are_linear(a in history_strategy(2, 11), b in history_strategy(2, 11)) {
            let sys = delayed(2).with_noise(vec![0.0; 2]).unwrap();
            let h = 0.1;
            let sum: Vec<Vec<f64>> = a.iter().zip(&b)
                .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect();
            let go = |v: Vec<Vec<f64>>| {
                let init = InitialData { history: HistorySpec::Samples { values: v }, head: None };
                let s = init_history(&sys, &init, h).unwrap();
                run(&sys, &SimConfig::new(h, 3.0), &s).unwrap()
            };
            let (ta, tb, ts) = (go(a), go(b), go(sum));
            for n in 0..ts.len() {
                for i in 0..2 {
                    let lhs = ts.y_row(n)[i];
                    let rhs = ta.y_row(n)[i] + tb.y_row(n)[i];
                    let scale = ta.y_row(n)[i].abs() + tb.y_row(n)[i].abs() + 1e-300;
                    prop_assert!((lhs - rhs).abs() <= 1e-10 * scale.max(1e-3));
                }
            }
        }

        #[test]
        fn restart_is_exact(s in 0usize..200, t in 0usize..200, seed in any::<u64>()) {
            let sys = delayed(2);
            let cfg = SimConfig::new(0.01, 1.0).with_seed(seed);
            let init = init_history(&sys, &InitialData::constant(vec![1.0, -1.0]), 0.01).unwrap();
            let d = restart_check(&sys, &cfg, &init, s as f64 * 0.01, t as f64 * 0.01).unwrap();
            prop_assert!(d <= 1e-12);
        }
    }
}
