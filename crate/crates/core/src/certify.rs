//! Sufficient stability conditions and the combined stability certificate.

use serde::Serialize;

use crate::charfn::NeutralSystem;
use crate::error::Result;
use crate::kernels::KernelShape;
use crate::spectrum::{system_abscissa, AbscissaOptions};

/// Strict inequalities are reported true only with at least this margin.
pub const MARGIN_EPS: f64 = 1e-12;
/// Numerical abscissae must lie below `-NUMERIC_THRESHOLD` to certify.
pub const NUMERIC_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Condition {
    pub holds: bool,
    pub margin: f64,
}

impl Condition {
    fn from_margin(margin: f64) -> Self {
        Self {
            holds: margin > MARGIN_EPS,
            margin,
        }
    }
}

/// The L¹ smallness condition `‖γ‖₁ + ‖β‖₁ < 1` on the abstract kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prop43Check {
    /// False when point delays (`α₁`, `α₂`) are present.
    pub applicable: bool,
    pub holds: bool,
    pub margin: f64,
}

pub fn check_prop43(sys: &NeutralSystem) -> Prop43Check {
    let margin = 1.0 - sys.gamma().l1_norm() - sys.beta().l1_norm();
    let applicable = !sys.has_point_delays();
    Prop43Check {
        applicable,
        holds: applicable && margin > MARGIN_EPS,
        margin,
    }
}

/// `2‖γ‖₁ + ‖β‖₁ < 1` for systems built from the concrete heat equation.
pub fn check_intro(sys: &NeutralSystem) -> Option<Condition> {
    sys.concrete()
        .map(|c| Condition::from_margin(1.0 - 2.0 * c.gamma.l1_norm() - c.beta.l1_norm()))
}

/// Largest admissible `|κ|` for `γ(θ) = κe^{μθ}`, `β ≡ α`, or `None` when
/// `|α| ≥ 1/r`.
pub fn example_kappa_bound(r: f64, mu: f64, alpha: f64) -> Option<f64> {
    if alpha.abs() >= 1.0 / r {
        return None;
    }
    let base = (1.0 - alpha.abs() * r) / r;
    Some(if mu <= 0.0 { (r * mu).exp() * base } else { base })
}

/// Closed-form stability region for exponential `γ` and constant `β`.
pub fn check_example_bounds(r: f64, kappa: f64, mu: f64, alpha: f64) -> bool {
    example_kappa_bound(r, mu, alpha).is_some_and(|b| kappa.abs() <= b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    CertifiedAnalytic,
    CertifiedNumericOnly,
    NotCertified,
}

impl Verdict {
    /// Process exit code of the `certify` command.
    pub fn exit_code(&self) -> i32 {
        match self {
            Verdict::CertifiedAnalytic => 0,
            Verdict::CertifiedNumericOnly => 10,
            Verdict::NotCertified => 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExampleCondition {
    pub holds: bool,
    pub kappa: f64,
    pub mu: f64,
    pub alpha: f64,
    pub kappa_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub cond_prop43: Prop43Check,
    pub cond_intro: Option<Condition>,
    pub cond_example: Option<ExampleCondition>,
    pub numerical_abscissa: Option<f64>,
    pub verdict: Verdict,
    pub notes: Vec<String>,
}

fn example_condition(sys: &NeutralSystem) -> Option<ExampleCondition> {
    if sys.has_point_delays() {
        return None;
    }
    match (sys.gamma().shape(), sys.beta().shape()) {
        (KernelShape::Exponential { kappa, mu }, KernelShape::Constant { a }) => {
            let r = sys.horizon();
            Some(ExampleCondition {
                holds: check_example_bounds(r, *kappa, *mu, *a),
                kappa: *kappa,
                mu: *mu,
                alpha: *a,
                kappa_bound: example_kappa_bound(r, *mu, *a),
            })
        }
        _ => None,
    }
}

/// Assembles every applicable condition and, when `use_numeric`, the
/// numerical spectral abscissa. Precedence: analytic > numeric > none.
pub fn certify(sys: &NeutralSystem, use_numeric: bool, opts: &AbscissaOptions) -> Result<Certificate> {
    let prop = check_prop43(sys);
    let mut notes = Vec::new();
    if !prop.applicable {
        notes.push("point delays present: the L1 condition is not applicable".to_string());
    }
    let mut numerical_abscissa = None;
    if use_numeric {
        match system_abscissa(sys, opts) {
            Ok(rep) => numerical_abscissa = Some(rep.system_abscissa),
            Err(e) => notes.push(format!("numeric scan failed ({e}); analytic conditions only")),
        }
    }
    let verdict = if prop.holds {
        Verdict::CertifiedAnalytic
    } else {
        match numerical_abscissa {
            Some(a) if a < -NUMERIC_THRESHOLD => Verdict::CertifiedNumericOnly,
            Some(a) => {
                if a.abs() <= NUMERIC_THRESHOLD {
                    notes.push(format!(
                        "INCONCLUSIVE: numerical abscissa {a:e} within {NUMERIC_THRESHOLD:e} of zero"
                    ));
                } else {
                    notes.push(format!(
                        "numerical abscissa {a} is positive (evidence of instability, not a proof)"
                    ));
                }
                Verdict::NotCertified
            }
            None => Verdict::NotCertified,
        }
    };
    Ok(Certificate {
        cond_prop43: prop,
        cond_intro: check_intro(sys),
        cond_example: example_condition(sys),
        numerical_abscissa,
        verdict,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::DelayKernel;
    use approx::assert_relative_eq;

    fn zero() -> DelayKernel {
        DelayKernel::zero(1.0).unwrap()
    }

    #[test]
    fn prop43_examples() {
        let s = NeutralSystem::deterministic(zero(), zero(), 1).unwrap();
        let p = check_prop43(&s);
        assert!(p.applicable && p.holds);
        assert_eq!(p.margin, 1.0);

        let g = DelayKernel::constant(1.0, 0.2).unwrap();
        let b = DelayKernel::constant(1.0, 0.1).unwrap();
        let s = NeutralSystem::from_concrete(g, b, vec![1.0]).unwrap();
        let p = check_prop43(&s);
        assert!(p.holds);
        assert_relative_eq!(p.margin, 0.5, epsilon = 1e-15);
        let intro = check_intro(&s).unwrap();
        assert_relative_eq!(intro.margin, 0.5, epsilon = 1e-15);

        let g = DelayKernel::constant(1.0, 0.6).unwrap();
        let b = DelayKernel::constant(1.0, 0.5).unwrap();
        let s = NeutralSystem::from_concrete(g, b, vec![1.0]).unwrap();
        let p = check_prop43(&s);
        assert!(!p.holds);
        assert_relative_eq!(p.margin, -0.7, epsilon = 1e-15);
    }

    #[test]
    fn prop43_not_applicable_with_point_delays() {
        let s = NeutralSystem::new(zero(), zero(), 0.1, 0.0, vec![1.0]).unwrap();
        let p = check_prop43(&s);
        assert!(!p.applicable && !p.holds);
    }

    #[test]
    fn boundary_margin_is_not_strict_enough() {
        let g = DelayKernel::constant(1.0, 0.5).unwrap();
        let b = DelayKernel::constant(1.0, 0.5).unwrap();
        let s = NeutralSystem::deterministic(g, b, 1).unwrap();
        assert!(!check_prop43(&s).holds);
    }

    #[test]
    fn example_bound_examples() {
        assert!(check_example_bounds(1.0, 0.5, 0.0, 0.3));
        assert!(!check_example_bounds(1.0, 0.75, 0.0, 0.3));
        assert_relative_eq!(
            example_kappa_bound(2.0, -1.0, 0.4).unwrap(),
            0.013533528,
            epsilon = 1e-9
        );
        assert!(example_kappa_bound(1.0, 0.0, 1.0).is_none());
        assert!(!check_example_bounds(1.0, 0.0, 0.0, -1.2));
        // μ > 0 branch ignores μ
        assert_relative_eq!(example_kappa_bound(1.0, 3.0, 0.3).unwrap(), 0.7);
    }

    #[test]
    fn zero_kernels_certified_analytic() {
        let s = NeutralSystem::deterministic(zero(), zero(), 2).unwrap();
        let c = certify(&s, true, &AbscissaOptions::default()).unwrap();
        assert_eq!(c.verdict, Verdict::CertifiedAnalytic);
        assert!((c.numerical_abscissa.unwrap() + 1.0).abs() < 1e-10);
        assert!(c.cond_intro.is_none());
        assert!(c.cond_example.is_none());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(Verdict::CertifiedAnalytic.exit_code(), 0);
        assert_eq!(Verdict::CertifiedNumericOnly.exit_code(), 10);
        assert_eq!(Verdict::NotCertified.exit_code(), 20);
    }
}
