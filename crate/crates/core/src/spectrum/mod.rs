//! Characteristic roots and spectral abscissa.
//!
//! Roots of `Δ_k` are counted with the argument principle on rectangles and
//! isolated by bisection plus Newton refinement, so every reported root list
//! is consistent with the winding number of its box. The spectral abscissa
//! of the lifted generator is the supremum of the real parts over all modes
//! together with the nonzero roots of `n` (the set `Γ₀`).

pub mod contour;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::charfn::{GammaClass, GammaTag, NeutralSystem, DEFAULT_CLASSIFY_TOL};
use crate::error::{Error, Result};
use contour::{Analytic, LocatedRoot, Rect};

/// Right edge of the default search box.
pub const DEFAULT_RE_MAX: f64 = 0.5;
/// `Re(λ) r` is kept above this so that `e^{-λr}` stays finite.
const MIN_RE_TIMES_HORIZON: f64 = -600.0;

/// Rectangle `[re_min, re_max] × [-im_max, im_max]` in the λ-plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchBox {
    pub re_min: f64,
    pub re_max: f64,
    pub im_max: f64,
    pub contour_points: usize,
}

impl SearchBox {
    pub fn new(re_min: f64, re_max: f64, im_max: f64) -> Result<Self> {
        let b = Self {
            re_min,
            re_max,
            im_max,
            contour_points: 256,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn with_contour_points(mut self, n: usize) -> Self {
        self.contour_points = n.max(8);
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.re_min < self.re_max) || !(self.im_max > 0.0) || self.contour_points == 0 {
            return Err(Error::Config(format!(
                "invalid search box [{}, {}] x [-{}, {}]",
                self.re_min, self.re_max, self.im_max, self.im_max
            )));
        }
        Ok(())
    }

    fn rect(&self) -> Rect {
        Rect {
            re_min: self.re_min,
            re_max: self.re_max,
            im_min: -self.im_max,
            im_max: self.im_max,
        }
    }

    fn from_rect(r: &Rect, contour_points: usize) -> Self {
        Self {
            re_min: r.re_min,
            re_max: r.re_max,
            im_max: r.im_max.max(-r.im_min),
            contour_points,
        }
    }
}

/// A refined characteristic root.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Root {
    pub re: f64,
    pub im: f64,
    #[serde(flatten)]
    pub class: GammaTag,
    pub residual: f64,
    pub multiplicity: usize,
    pub possibly_multiple: bool,
}

impl Root {
    pub fn z(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }

    fn from_located(r: &LocatedRoot, class: GammaClass) -> Self {
        Self {
            re: r.z.re,
            im: r.z.im,
            class: class.tag,
            residual: r.residual,
            multiplicity: r.multiplicity,
            possibly_multiple: r.possibly_multiple,
        }
    }
}

fn delta_fn(sys: &NeutralSystem, k: usize) -> (impl Fn(Complex64) -> Complex64 + Sync + '_, impl Fn(Complex64) -> Complex64 + Sync + '_) {
    (
        move |z| sys.delta_unchecked(k, z),
        move |z| sys.delta_prime_unchecked(k, z),
    )
}

/// Number of roots of `Δ_k` inside `search` counted with multiplicity.
/// A contour that meets a root is expanded by 1%, at most five times.
pub fn count_roots(sys: &NeutralSystem, k: usize, search: &SearchBox) -> Result<usize> {
    sys.check_mode(k)?;
    search.validate()?;
    let (v, d) = delta_fn(sys, k);
    let f = Analytic {
        value: &v,
        derivative: &d,
        horizon: sys.horizon(),
    };
    let mut rect = search.rect();
    for _ in 0..=5 {
        match contour::winding_number(&f, &rect, search.contour_points) {
            Err(Error::RootOnContour(_)) => rect = rect.expanded(0.01),
            other => return other,
        }
    }
    Err(Error::RootOnContour(5))
}

/// Newton refinement of a root of `Δ_k` from `seed`.
pub fn refine_root(sys: &NeutralSystem, k: usize, seed: Complex64) -> Result<Complex64> {
    sys.check_mode(k)?;
    let (v, d) = delta_fn(sys, k);
    let f = Analytic {
        value: &v,
        derivative: &d,
        horizon: sys.horizon(),
    };
    contour::newton(&f, seed, None)
}

/// All roots of `Δ_k` in `search`, together with the (possibly nudged)
/// box and its argument-principle count.
pub fn roots_in_box(
    sys: &NeutralSystem,
    k: usize,
    search: &SearchBox,
) -> Result<(SearchBox, usize, Vec<Root>)> {
    sys.check_mode(k)?;
    search.validate()?;
    let (v, d) = delta_fn(sys, k);
    let f = Analytic {
        value: &v,
        derivative: &d,
        horizon: sys.horizon(),
    };
    let (rect, count, located) =
        contour::locate_with_nudge(&f, &search.rect(), search.contour_points)?;
    let roots = located
        .iter()
        .map(|r| Root::from_located(r, sys.classify(r.z, DEFAULT_CLASSIFY_TOL)))
        .collect();
    Ok((SearchBox::from_rect(&rect, search.contour_points), count, roots))
}

/// Controls for the adaptive abscissa search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AbscissaOptions {
    /// Left extent of the initial box; defaults to `5k²`.
    pub a_max: Option<f64>,
    /// Overrides the automatic box (required when `1 - ‖γ‖₁ - |α₁| ≤ 0`).
    pub user_box: Option<SearchBox>,
    pub contour_points: usize,
    /// Upper bound on box doublings.
    pub max_widenings: usize,
    /// Search for `Γ₀` roots (nonzero roots of `n`).
    pub include_gamma0: bool,
}

impl Default for AbscissaOptions {
    fn default() -> Self {
        Self {
            a_max: None,
            user_box: None,
            contour_points: 256,
            max_widenings: 6,
            include_gamma0: true,
        }
    }
}

/// Result of the adaptive search for one mode (or for `Γ₀`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeReport {
    pub k: usize,
    pub roots: Vec<Root>,
    pub count: usize,
    pub abscissa: f64,
    #[serde(rename = "box")]
    pub search_box: SearchBox,
    pub widenings: usize,
    pub widening_capped: bool,
}

/// Working imaginary bound `Ω` beyond which `|m(λ)|` dominates `k²|n(λ)|`
/// on the closed right half-plane.
pub fn imaginary_bound(sys: &NeutralSystem, k: usize) -> Option<f64> {
    let margin = sys.neutral_margin();
    if margin <= 0.0 {
        return None;
    }
    let k2 = (k * k) as f64;
    let n_bound = 1.0
        + sys.gamma().l1_norm()
        + sys.alpha1().abs()
        + sys.alpha2().abs()
        + sys.beta().l1_norm();
    Some((k2 * n_bound + 1.0) / margin)
}

fn left_limit(sys: &NeutralSystem) -> f64 {
    MIN_RE_TIMES_HORIZON / sys.horizon()
}

fn initial_box(sys: &NeutralSystem, k: usize, opts: &AbscissaOptions) -> Result<SearchBox> {
    if let Some(b) = opts.user_box {
        b.validate()?;
        return Ok(b);
    }
    let omega = imaginary_bound(sys, k).ok_or_else(|| {
        Error::CertificateUnavailable(format!(
            "1 - |gamma|_1 - |alpha1| = {} <= 0 and no search box supplied",
            sys.neutral_margin()
        ))
    })?;
    let a_max = opts.a_max.unwrap_or(5.0 * (k * k) as f64);
    // every root with Re λ ≥ 0 satisfies |λ| < Ω, so the box covers them all
    Ok(SearchBox {
        re_min: (-a_max).max(left_limit(sys)),
        re_max: DEFAULT_RE_MAX.max(omega),
        im_max: omega,
        contour_points: opts.contour_points,
    })
}

/// Roots in the L-shaped region between `current` and the widened box.
fn widen_once(
    f: &Analytic<'_>,
    current: &Rect,
    new_re_min: f64,
    new_im: f64,
    grow_left: bool,
    min_points: usize,
) -> Result<(usize, Vec<LocatedRoot>)> {
    let mut strips = vec![
        Rect {
            re_min: current.re_min,
            re_max: current.re_max,
            im_min: current.im_max,
            im_max: new_im,
        },
        Rect {
            re_min: current.re_min,
            re_max: current.re_max,
            im_min: -new_im,
            im_max: current.im_min,
        },
    ];
    if grow_left {
        strips.push(Rect {
            re_min: new_re_min,
            re_max: current.re_min,
            im_min: -new_im,
            im_max: new_im,
        });
    }
    let mut count = 0;
    let mut roots = Vec::new();
    for s in &strips {
        let (c, located) = contour::locate_roots(f, s, min_points)?;
        count += c;
        roots.extend(located);
    }
    Ok((count, roots))
}

fn max_re(roots: &[Root]) -> f64 {
    roots.iter().map(|r| r.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Adaptive search shared by `Δ_k` and `n`: the box is doubled leftwards and
/// upwards until two consecutive widenings add no root to the right of
/// `max(re_min/2, abscissa - 1)`.
fn adaptive_search(
    f: &Analytic<'_>,
    start: SearchBox,
    left_cap: f64,
    max_widenings: usize,
    classify: &dyn Fn(Complex64) -> GammaClass,
) -> Result<(SearchBox, usize, Vec<Root>, usize, bool)> {
    let to_roots = |located: Vec<LocatedRoot>| -> Vec<Root> {
        located
            .iter()
            .map(|r| Root::from_located(r, classify(r.z)))
            .collect()
    };
    let (rect, mut count, located) =
        contour::locate_with_nudge(f, &start.rect(), start.contour_points)?;
    let mut roots = to_roots(located);
    let mut current = rect;
    let mut quiet = 0;
    let mut widenings = 0;
    while quiet < 2 && widenings < max_widenings {
        let abscissa = max_re(&roots);
        let threshold = (0.5 * current.re_min).max(abscissa - 1.0);
        let mut new_re_min = (current.re_min * 2.0).min(current.re_min - 1.0).max(left_cap);
        let mut new_im = current.im_max * 2.0;
        let mut attempt = 0;
        let (grow_left, c, added) = loop {
            let grow_left = new_re_min < current.re_min;
            match widen_once(f, &current, new_re_min, new_im, grow_left, start.contour_points) {
                Ok((c, located)) => break (grow_left, c, to_roots(located)),
                Err(Error::RootOnContour(_)) if attempt < 5 => {
                    attempt += 1;
                    new_im *= 1.01;
                    new_re_min = (new_re_min * 1.01).max(left_cap);
                }
                Err(e) => return Err(e),
            }
        };
        count += c;
        widenings += 1;
        let significant = added.iter().any(|r| r.re > threshold);
        roots.extend(added);
        current = Rect {
            re_min: if grow_left { new_re_min } else { current.re_min },
            re_max: current.re_max,
            im_min: -new_im,
            im_max: new_im,
        };
        if significant {
            quiet = 0;
        } else {
            quiet += 1;
        }
    }
    let capped = quiet < 2;
    Ok((
        SearchBox::from_rect(&current, start.contour_points),
        count,
        roots,
        widenings,
        capped,
    ))
}

/// Largest real part among the roots of `Δ_k` found by the adaptive search.
pub fn mode_abscissa(sys: &NeutralSystem, k: usize, opts: &AbscissaOptions) -> Result<ModeReport> {
    sys.check_mode(k)?;
    let start = initial_box(sys, k, opts)?;
    let (v, d) = delta_fn(sys, k);
    let f = Analytic {
        value: &v,
        derivative: &d,
        horizon: sys.horizon(),
    };
    let classify = |z| sys.classify(z, DEFAULT_CLASSIFY_TOL);
    let (search_box, count, mut roots, widenings, capped) = adaptive_search(
        &f,
        start,
        left_limit(sys),
        if opts.user_box.is_some() { 0 } else { opts.max_widenings },
        &classify,
    )?;
    sort_roots(&mut roots);
    Ok(ModeReport {
        k,
        abscissa: max_re(&roots),
        roots,
        count,
        search_box,
        widenings,
        widening_capped: capped,
    })
}

fn sort_roots(roots: &mut [Root]) {
    roots.sort_by(|a, b| b.re.total_cmp(&a.re).then(a.im.total_cmp(&b.im)));
}

/// Nonzero roots of `n` inside `search` (the set `Γ₀`).
pub fn gamma0_roots(sys: &NeutralSystem, search: &SearchBox) -> Result<(usize, Vec<Root>)> {
    if n_is_constant(sys) {
        return Ok((0, Vec::new()));
    }
    let v = |z| sys.n_of(z);
    let d = |z| sys.n_prime(z);
    let f = Analytic {
        value: &v,
        derivative: &d,
        horizon: sys.horizon(),
    };
    let (_, count, located) =
        contour::locate_with_nudge(&f, &search.rect(), search.contour_points)?;
    let mut roots: Vec<Root> = located
        .iter()
        .filter(|r| r.z.norm() > 1e-8)
        .map(|r| Root::from_located(r, sys.classify(r.z, DEFAULT_CLASSIFY_TOL)))
        .collect();
    // The origin is never in Γ₀; drop it from the count as well.
    let origin: usize = located
        .iter()
        .filter(|r| r.z.norm() <= 1e-8)
        .map(|r| r.multiplicity)
        .sum();
    sort_roots(&mut roots);
    Ok((count - origin, roots))
}

fn n_is_constant(sys: &NeutralSystem) -> bool {
    sys.gamma().is_zero() && sys.beta().is_zero() && sys.alpha1() == sys.alpha2()
}

/// Spectral report over all configured modes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RootReport {
    pub modes: Vec<ModeReport>,
    pub gamma0: Vec<Root>,
    pub gamma0_count: usize,
    pub system_abscissa: f64,
    pub gamma0_dominates: bool,
    pub modes_scanned: usize,
    pub tail_note: String,
}

/// Spectral abscissa `sup Re σ(𝒜)` estimated over modes `1..=K` and `Γ₀`.
pub fn system_abscissa(sys: &NeutralSystem, opts: &AbscissaOptions) -> Result<RootReport> {
    let modes: Vec<ModeReport> = (1..=sys.modes())
        .into_par_iter()
        .map(|k| mode_abscissa(sys, k, opts).map_err(|e| e.in_mode(k)))
        .collect::<Result<_>>()?;
    let mode_max = modes
        .iter()
        .map(|m| m.abscissa)
        .fold(f64::NEG_INFINITY, f64::max);

    let (gamma0_count, gamma0) = if opts.include_gamma0 && !n_is_constant(sys) {
        let re_min = modes
            .iter()
            .map(|m| m.search_box.re_min)
            .fold(f64::INFINITY, f64::min);
        let im_max = modes
            .iter()
            .map(|m| m.search_box.im_max)
            .fold(0.0, f64::max);
        let re_max = modes
            .iter()
            .map(|m| m.search_box.re_max)
            .fold(DEFAULT_RE_MAX, f64::max);
        let b = SearchBox {
            re_min,
            re_max,
            im_max,
            contour_points: opts.contour_points,
        };
        gamma0_roots(sys, &b)?
    } else {
        (0, Vec::new())
    };
    let g0_max = max_re(&gamma0);
    let system = mode_max.max(g0_max);
    let gamma0_dominates = g0_max > mode_max;

    let mut notes = Vec::new();
    if modes.len() >= 3 {
        let tail: Vec<f64> = modes[modes.len() - 3..].iter().map(|m| m.abscissa).collect();
        if tail.windows(2).all(|w| w[1] <= w[0] + 1e-12) {
            notes.push(format!(
                "mode abscissae non-increasing over modes {}..={} (heuristic: higher modes unlikely to raise the supremum)",
                modes.len() - 2,
                modes.len()
            ));
        } else {
            notes.push(format!(
                "mode abscissae NOT monotone over the last three modes {tail:?}; consider more modes"
            ));
        }
    } else {
        notes.push(format!(
            "only {} mode(s) scanned; tail behaviour unchecked",
            modes.len()
        ));
    }
    if gamma0_dominates {
        notes.push("a Gamma0 root attains the supremum".into());
    }
    if modes.iter().any(|m| m.widening_capped) {
        notes.push("box widening hit its cap for at least one mode".into());
    }
    Ok(RootReport {
        modes_scanned: modes.len(),
        modes,
        gamma0,
        gamma0_count,
        system_abscissa: system,
        gamma0_dominates,
        tail_note: notes.join("; "),
    })
}
