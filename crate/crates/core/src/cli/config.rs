//! JSON run configuration.
//!
//! ```json
//! {
//!   "system": {
//!     "form": "abstract",
//!     "r": 1.0,
//!     "gamma": {"kind": "exponential", "kappa": 0.1, "mu": 0.0},
//!     "beta": {"kind": "constant", "a": 0.2},
//!     "noise": [1.0, 0.0, 0.0, 0.0]
//!   },
//!   "sim": {"h": 0.002, "T": 500.0, "scheme": "trapezoidal", "seed": 7}
//! }
//! ```
//!
//! Every section except `system` is optional. Unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crate::charfn::NeutralSystem;
use crate::error::{Error, Result};
use crate::kernels::DelayKernel;
use crate::simulate::{InitialData, SimConfig};
use crate::spectrum::{AbscissaOptions, SearchBox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Zero,
    Constant { a: f64 },
    Exponential { kappa: f64, mu: f64 },
    /// Values on a uniform grid of `[−r, 0]`, oldest first.
    Table { values: Vec<f64> },
    Sum { terms: Vec<KernelSpec> },
}

impl KernelSpec {
    pub fn build(&self, r: f64) -> Result<DelayKernel> {
        match self {
            KernelSpec::Zero => DelayKernel::zero(r),
            KernelSpec::Constant { a } => DelayKernel::constant(r, *a),
            KernelSpec::Exponential { kappa, mu } => DelayKernel::exponential(r, *kappa, *mu),
            KernelSpec::Table { values } => DelayKernel::table(r, values.clone()),
            KernelSpec::Sum { terms } => {
                let built = terms.iter().map(|t| t.build(r)).collect::<Result<Vec<_>>>()?;
                DelayKernel::sum_all(built)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    /// Kernels enter the abstract neutral equation directly.
    #[default]
    Abstract,
    /// Kernels of the heat equation `d[y − ∫γy] = Δy + ∫βΔy + b dw`.
    Concrete,
}

fn zero_kernel() -> KernelSpec {
    KernelSpec::Zero
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(default)]
    pub form: Form,
    pub r: f64,
    #[serde(default = "zero_kernel")]
    pub gamma: KernelSpec,
    #[serde(default = "zero_kernel")]
    pub beta: KernelSpec,
    #[serde(default)]
    pub alpha1: f64,
    #[serde(default)]
    pub alpha2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<usize>,
    /// Modal coefficients `b_k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<Vec<f64>>,
    /// `b(ξ)` on the interior grid `ξ_i = iπ/(M+1)`, projected onto `modes`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_samples: Option<Vec<f64>>,
}

/// `b_k = ∫₀^π b(ξ) √(2/π) sin(kξ) dξ` by the trapezoid rule on the
/// interior grid `ξ_i = iπ/(M+1)`, `i = 1..=M` (the endpoint terms vanish).
pub fn project_noise(samples: &[f64], modes: usize) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Config("system.noise_samples is empty".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("system.noise_samples must be finite".into()));
    }
    let m = samples.len();
    let dx = std::f64::consts::PI / (m + 1) as f64;
    let scale = (2.0 / std::f64::consts::PI).sqrt() * dx;
    Ok((1..=modes)
        .map(|k| {
            samples
                .iter()
                .enumerate()
                .map(|(i, b)| b * (k as f64 * (i + 1) as f64 * dx).sin())
                .sum::<f64>()
                * scale
        })
        .collect())
}

impl SystemConfig {
    /// Fills `modes` from whichever noise description is present.
    pub fn resolve(&mut self) -> Result<()> {
        match (&self.noise, &self.noise_samples, self.modes) {
            (Some(_), Some(_), _) => Err(Error::Config(
                "system.noise and system.noise_samples are mutually exclusive".into(),
            )),
            (Some(b), None, Some(k)) if b.len() != k => Err(Error::Config(format!(
                "system.modes = {k} but system.noise has {} entries",
                b.len()
            ))),
            (Some(b), None, _) => {
                self.modes = Some(b.len());
                Ok(())
            }
            (None, _, None) => Err(Error::Config(
                "system.modes is required unless system.noise lists the coefficients".into(),
            )),
            (None, _, Some(0)) => Err(Error::Config("system.modes must be positive".into())),
            (None, _, Some(_)) => Ok(()),
        }
    }

    pub fn build(&self) -> Result<NeutralSystem> {
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::Config(format!("system.r must be positive, got {}", self.r)));
        }
        let gamma = self.gamma.build(self.r).map_err(|e| key_error("system.gamma", e))?;
        let beta = self.beta.build(self.r).map_err(|e| key_error("system.beta", e))?;
        let mut cfg = self.clone();
        cfg.resolve()?;
        let modes = cfg.modes.unwrap();
        let noise = match (&cfg.noise, &cfg.noise_samples) {
            (Some(b), _) => b.clone(),
            (None, Some(s)) => project_noise(s, modes)?,
            (None, None) => vec![0.0; modes],
        };
        match self.form {
            Form::Abstract => NeutralSystem::new(gamma, beta, self.alpha1, self.alpha2, noise),
            Form::Concrete => {
                if self.alpha1 != 0.0 || self.alpha2 != 0.0 {
                    return Err(Error::Config(
                        "system.alpha1/alpha2 are not part of the concrete form".into(),
                    ));
                }
                NeutralSystem::from_concrete(gamma, beta, noise)
            }
        }
    }
}

fn key_error(key: &str, e: Error) -> Error {
    Error::Config(format!("{key}: {e}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub re_min: f64,
    pub re_max: f64,
    pub im_max: f64,
}

fn default_contour_points() -> usize {
    256
}

fn default_widenings() -> usize {
    6
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_max: Option<f64>,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub search_box: Option<BoxSpec>,
    #[serde(default = "default_contour_points")]
    pub contour_points: usize,
    #[serde(default = "default_widenings")]
    pub max_widenings: usize,
    #[serde(default = "yes")]
    pub include_gamma0: bool,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            a_max: None,
            search_box: None,
            contour_points: default_contour_points(),
            max_widenings: default_widenings(),
            include_gamma0: true,
        }
    }
}

impl SpectrumConfig {
    pub fn options(&self) -> Result<AbscissaOptions> {
        let user_box = match self.search_box {
            Some(b) => {
                let sb = SearchBox::new(b.re_min, b.re_max, b.im_max)
                    .map_err(|e| key_error("spectrum.box", e))?
                    .with_contour_points(self.contour_points);
                Some(sb)
            }
            None => None,
        };
        Ok(AbscissaOptions {
            a_max: self.a_max,
            user_box,
            contour_points: self.contour_points,
            max_widenings: self.max_widenings,
            include_gamma0: self.include_gamma0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyConfig {
    #[serde(default = "yes")]
    pub numeric: bool,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self { numeric: true }
    }
}

fn default_tol() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_cutoff: Option<f64>,
}

impl Default for VarianceConfig {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            omega_cutoff: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationarityConfig {
    /// Defaults to `sim.burn_in` when positive, else `50/|abscissa|`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    #[serde(default = "yes")]
    pub oracle: bool,
}

impl Default for StationarityConfig {
    fn default() -> Self {
        Self {
            burn_in: None,
            oracle: true,
        }
    }
}

fn default_validate_h() -> f64 {
    1e-3
}

fn default_picard_tol() -> f64 {
    1e-12
}

fn default_agreement_modes() -> usize {
    2
}

fn default_agreement_tol() -> f64 {
    1e-3
}

fn default_restart_pairs() -> usize {
    20
}

fn default_grids() -> Vec<usize> {
    vec![128, 256, 512, 1024]
}

fn default_lambda() -> [f64; 2] {
    [1.0, 1.0]
}

fn default_min_order() -> f64 {
    1.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    #[serde(default = "default_validate_h")]
    pub h: f64,
    /// Comparison horizon; `3r` when absent.
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    /// Lowest modes entering the stepper comparison; the first-order error
    /// grows like `k²h`.
    #[serde(default = "default_agreement_modes")]
    pub agreement_modes: usize,
    #[serde(default = "default_agreement_tol")]
    pub agreement_tol: f64,
    #[serde(default = "default_restart_pairs")]
    pub restart_pairs: usize,
    #[serde(default = "default_grids")]
    pub resolvent_grids: Vec<usize>,
    /// `[Re λ, Im λ]` for the resolvent check.
    #[serde(default = "default_lambda")]
    pub lambda: [f64; 2],
    #[serde(default = "default_min_order")]
    pub min_order: f64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            h: default_validate_h(),
            t_end: None,
            picard_tol: default_picard_tol(),
            agreement_modes: default_agreement_modes(),
            agreement_tol: default_agreement_tol(),
            restart_pairs: default_restart_pairs(),
            resolvent_grids: default_grids(),
            lambda: default_lambda(),
            min_order: default_min_order(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub certify: CertifyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimConfig>,
    #[serde(default = "InitialData::zero")]
    pub initial: InitialData,
    #[serde(default)]
    pub variance: VarianceConfig,
    #[serde(default)]
    pub stationarity: StationarityConfig,
    #[serde(default)]
    pub validate: ValidateConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve()?;
        Ok(cfg)
    }

    /// Records every defaulted value so the emitted config reproduces the run.
    pub fn resolve(&mut self) -> Result<()> {
        self.system.resolve()?;
        if self.validate.t_end.is_none() {
            self.validate.t_end = Some(3.0 * self.system.r);
        }
        Ok(())
    }

    pub fn sim(&self) -> Result<&SimConfig> {
        self.sim
            .as_ref()
            .ok_or_else(|| Error::Config("missing section `sim`".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn projection_examples() {
        let m = 999;
        let xi = |i: usize| (i + 1) as f64 * std::f64::consts::PI / (m + 1) as f64;
        let s: Vec<f64> = (0..m)
            .map(|i| (2.0 / std::f64::consts::PI).sqrt() * xi(i).sin())
            .collect();
        let b = project_noise(&s, 4).unwrap();
        assert_relative_eq!(b[0], 1.0, epsilon = 1e-12);
        assert!(b[1..].iter().all(|v| v.abs() < 1e-12));

        assert_eq!(project_noise(&vec![0.0; 10], 3).unwrap(), vec![0.0; 3]);

        let b = project_noise(&vec![1.0; m], 4).unwrap();
        for (i, v) in b.iter().enumerate() {
            let k = (i + 1) as f64;
            let exact = (2.0 / std::f64::consts::PI).sqrt() * (1.0 - (-1.0f64).powi(i as i32 + 1)) / k;
            assert!((v - exact).abs() < 1e-5, "k = {k}: {v} vs {exact}");
        }
        assert_relative_eq!(b[0], 1.595769122, epsilon = 1e-5);
        assert!(matches!(project_noise(&[], 2), Err(Error::Config(_))));
    }

    #[test]
    fn minimal_config_resolves() {
        let cfg = RunConfig::from_json(r#"{"system": {"r": 2.0, "modes": 3}}"#).unwrap();
        assert_eq!(cfg.validate.t_end, Some(6.0));
        let sys = cfg.system.build().unwrap();
        assert_eq!(sys.modes(), 3);
        assert!(sys.gamma().is_zero());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_json(r#"{"system": {"r": 1.0, "modes": 1, "gamma_typo": 1}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("gamma_typo"), "{err}");
        let err = RunConfig::from_json(r#"{"system": {"r": 1.0, "modes": 1}, "simm": {}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("simm"), "{err}");
    }

    #[test]
    fn kernel_grammar() {
        let k: KernelSpec = serde_json::from_str(
            r#"{"kind": "sum", "terms": [{"kind": "constant", "a": 0.1},
                {"kind": "exponential", "kappa": 0.2, "mu": -1.0},
                {"kind": "table", "values": [0.0, 1.0]}]}"#,
        )
        .unwrap();
        let kern = k.build(1.0).unwrap();
        assert_relative_eq!(kern.evaluate(0.0).unwrap(), 0.1 + 0.2 + 1.0, epsilon = 1e-15);
    }

    #[test]
    fn noise_descriptions_conflict() {
        let err = RunConfig::from_json(
            r#"{"system": {"r": 1.0, "noise": [1.0], "noise_samples": [1.0]}}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = RunConfig::from_json(r#"{"system": {"r": 1.0, "modes": 2, "noise": [1.0]}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("system.modes"));
    }

    #[test]
    fn concrete_form_rewrites_beta() {
        let cfg = RunConfig::from_json(
            r#"{"system": {"form": "concrete", "r": 1.0, "modes": 1,
                "gamma": {"kind": "constant", "a": 0.2},
                "beta": {"kind": "constant", "a": 0.1}}}"#,
        )
        .unwrap();
        let sys = cfg.system.build().unwrap();
        assert!(sys.concrete().is_some());
        assert_relative_eq!(sys.beta().l1_norm(), 0.3, epsilon = 1e-15);
    }
}
