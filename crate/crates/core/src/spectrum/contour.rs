//! Argument-principle root counting and isolation for entire functions on
//! axis-aligned rectangles.

use std::f64::consts::{FRAC_PI_4, PI};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Samples with `|f| < ROOT_ON_CONTOUR` are treated as roots on the contour.
pub const ROOT_ON_CONTOUR: f64 = 1e-9;
/// Total sample budget for one contour.
pub const MAX_CONTOUR_SAMPLES: usize = 1 << 20;
/// Refined roots closer than this are merged.
pub const MERGE_DISTANCE: f64 = 1e-6;

const MAX_NEWTON_ITERATIONS: usize = 50;

/// An analytic function together with its derivative.
pub struct Analytic<'a> {
    pub value: &'a (dyn Fn(Complex64) -> Complex64 + Sync),
    pub derivative: &'a (dyn Fn(Complex64) -> Complex64 + Sync),
    /// Delay horizon; sets the initial sampling density, since `e^{-λr}`
    /// turns once every `2π/r` along vertical edges.
    pub horizon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl Rect {
    pub fn contains(&self, z: Complex64, slack: f64) -> bool {
        z.re >= self.re_min - slack
            && z.re <= self.re_max + slack
            && z.im >= self.im_min - slack
            && z.im <= self.im_max + slack
    }

    fn center(&self) -> Complex64 {
        Complex64::new(
            0.5 * (self.re_min + self.re_max),
            0.5 * (self.im_min + self.im_max),
        )
    }

    fn width(&self) -> f64 {
        self.re_max - self.re_min
    }

    fn height(&self) -> f64 {
        self.im_max - self.im_min
    }

    fn corners(&self) -> [Complex64; 4] {
        [
            Complex64::new(self.re_min, self.im_min),
            Complex64::new(self.re_max, self.im_min),
            Complex64::new(self.re_max, self.im_max),
            Complex64::new(self.re_min, self.im_max),
        ]
    }

    /// Scales the rectangle about its center by `1 + frac` in each direction.
    pub fn expanded(&self, frac: f64) -> Rect {
        let dw = 0.5 * frac * self.width();
        let dh = 0.5 * frac * self.height();
        Rect {
            re_min: self.re_min - dw,
            re_max: self.re_max + dw,
            im_min: self.im_min - dh,
            im_max: self.im_max + dh,
        }
    }
}

/// Winding number of `f` around 0 along the counter-clockwise boundary of
/// `rect`. Each sampled segment is bisected until the argument change across
/// it is below π/4 and the modulus changes by less than a factor 4.
pub fn winding_number(f: &Analytic<'_>, rect: &Rect, min_points: usize) -> Result<usize> {
    let corners = rect.corners();
    let mut total_arg = 0.0;
    let mut used = 0usize;
    let per_edge_min = (min_points / 4).max(8);
    for e in 0..4 {
        let a = corners[e];
        let b = corners[(e + 1) % 4];
        let len = (b - a).norm();
        let vertical = e % 2 == 1;
        // ~16 samples per turn of e^{-λr} on vertical edges, and per e-fold
        // of |e^{-λr}| on horizontal ones.
        let density = if vertical {
            16.0 * f.horizon / (2.0 * PI)
        } else {
            2.0 * f.horizon
        };
        let n = per_edge_min.max((len * density).ceil() as usize);
        let mut z0 = a;
        let mut f0 = (f.value)(z0);
        check_sample(f0)?;
        used += 1;
        for i in 1..=n {
            let z1 = if i == n {
                b
            } else {
                a + (b - a) * (i as f64 / n as f64)
            };
            let f1 = (f.value)(z1);
            check_sample(f1)?;
            used += 1;
            total_arg += segment_arg(f, z0, f0, z1, f1, &mut used)?;
            z0 = z1;
            f0 = f1;
        }
    }
    let w = total_arg / (2.0 * PI);
    let rounded = w.round();
    if (w - rounded).abs() > 0.25 || rounded < 0.0 {
        return Err(Error::ContourTooCoarse(used));
    }
    Ok(rounded as usize)
}

/// `a / b` without forming `|b|²`, which overflows once `|b|` passes 1e154
/// (far in the left half plane `e^{-λr}` gets that large).
fn scaled_div(a: Complex64, b: Complex64) -> Complex64 {
    let s = b.norm();
    (a / s) / (b / s)
}

fn check_sample(v: Complex64) -> Result<()> {
    if !v.re.is_finite() || !v.im.is_finite() {
        return Err(Error::Domain(
            "non-finite function value on contour (box too far left?)".into(),
        ));
    }
    if v.norm() < ROOT_ON_CONTOUR {
        return Err(Error::RootOnContour(0));
    }
    Ok(())
}

fn segment_arg(
    f: &Analytic<'_>,
    z0: Complex64,
    f0: Complex64,
    z1: Complex64,
    f1: Complex64,
    used: &mut usize,
) -> Result<f64> {
    let mut stack = vec![(z0, f0, z1, f1)];
    let mut acc = 0.0;
    while let Some((a, fa, b, fb)) = stack.pop() {
        let ratio = scaled_div(fb, fa);
        let d = ratio.arg();
        let mag = ratio.norm();
        let coarse = d.abs() >= FRAC_PI_4 || !(0.25..=4.0).contains(&mag);
        if coarse && (b - a).norm() > 1e-13 * (1.0 + a.norm()) {
            if *used >= MAX_CONTOUR_SAMPLES {
                return Err(Error::ContourTooCoarse(*used));
            }
            let m = 0.5 * (a + b);
            let fm = (f.value)(m);
            check_sample(fm)?;
            *used += 1;
            // Process the first half first so the sum is order-stable.
            stack.push((m, fm, b, fb));
            stack.push((a, fa, m, fm));
        } else {
            acc += d;
        }
    }
    Ok(acc)
}

/// Newton iteration from `seed`; converged when
/// `|f| ≤ 1e-10 (1 + |z|²)`, followed by up to two polishing steps.
pub fn newton(f: &Analytic<'_>, seed: Complex64, max_step: Option<f64>) -> Result<Complex64> {
    let fail = || Error::Refine {
        re: seed.re,
        im: seed.im,
    };
    let mut z = seed;
    for _ in 0..MAX_NEWTON_ITERATIONS {
        let fz = (f.value)(z);
        if !fz.re.is_finite() || !fz.im.is_finite() {
            return Err(fail());
        }
        if fz.norm() <= residual_tolerance(z) {
            return Ok(polish(f, z, fz));
        }
        let d = (f.derivative)(z);
        if d.norm() == 0.0 || !d.re.is_finite() || !d.im.is_finite() {
            return Err(fail());
        }
        let step = scaled_div(fz, d);
        if let Some(limit) = max_step {
            if step.norm() > limit {
                return Err(fail());
            }
        }
        z -= step;
    }
    Err(fail())
}

pub fn residual_tolerance(z: Complex64) -> f64 {
    1e-10 * (1.0 + z.norm_sqr())
}

fn polish(f: &Analytic<'_>, mut z: Complex64, mut fz: Complex64) -> Complex64 {
    for _ in 0..2 {
        let d = (f.derivative)(z);
        if d.norm() == 0.0 {
            break;
        }
        let cand = z - scaled_div(fz, d);
        let fc = (f.value)(cand);
        if fc.norm() <= fz.norm() {
            z = cand;
            fz = fc;
        } else {
            break;
        }
    }
    z
}

/// A root located inside a rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocatedRoot {
    pub z: Complex64,
    pub multiplicity: usize,
    pub residual: f64,
    pub possibly_multiple: bool,
}

/// Split fractions tried in turn when a bisection line hits a root.
const SPLITS: [f64; 6] = [0.5173, 0.4791, 0.5419, 0.4613, 0.5297, 0.4457];

/// Counts the roots of `f` in `rect` and isolates every one of them by
/// recursive bisection plus Newton refinement. The returned multiplicities
/// always sum to the winding number of `rect`.
pub fn locate_roots(
    f: &Analytic<'_>,
    rect: &Rect,
    min_points: usize,
) -> Result<(usize, Vec<LocatedRoot>)> {
    let count = winding_number(f, rect, min_points)?;
    let mut out = Vec::new();
    isolate(f, rect, count, min_points, 0, &mut out)?;
    let merged = merge(f, out);
    Ok((count, merged))
}

fn isolate(
    f: &Analytic<'_>,
    rect: &Rect,
    count: usize,
    min_points: usize,
    depth: usize,
    out: &mut Vec<LocatedRoot>,
) -> Result<()> {
    if count == 0 {
        return Ok(());
    }
    let diam = rect.width().max(rect.height());
    let center = rect.center();
    if count == 1 {
        if let Ok(z) = newton(f, center, Some(2.0 * diam)) {
            if rect.contains(z, 1e-9 * (1.0 + z.norm())) {
                out.push(LocatedRoot {
                    z,
                    multiplicity: 1,
                    residual: (f.value)(z).norm(),
                    possibly_multiple: false,
                });
                return Ok(());
            }
        }
    }
    let push_cluster = |out: &mut Vec<LocatedRoot>| {
        let z = newton(f, center, None).unwrap_or(center);
        out.push(LocatedRoot {
            z,
            multiplicity: count,
            residual: (f.value)(z).norm(),
            possibly_multiple: count > 1,
        });
    };
    if diam < 1e-7 * (1.0 + center.norm()) || depth > 200 {
        push_cluster(out);
        return Ok(());
    }
    for frac in SPLITS {
        let (a, b) = split(rect, frac);
        let counts = winding_number(f, &a, min_points)
            .and_then(|ca| winding_number(f, &b, min_points).map(|cb| (ca, cb)));
        match counts {
            Ok((ca, cb)) if ca + cb == count => {
                isolate(f, &a, ca, min_points, depth + 1, out)?;
                return isolate(f, &b, cb, min_points, depth + 1, out);
            }
            Ok(_) | Err(Error::RootOnContour(_)) => {}
            Err(e) => return Err(e),
        }
    }
    // Every split line passes through the cluster (|f| below the contour
    // threshold): report it as one root of multiplicity `count`.
    if diam < 1e-3 * (1.0 + center.norm()) {
        push_cluster(out);
        return Ok(());
    }
    Err(Error::RootOnContour(SPLITS.len()))
}

fn split(rect: &Rect, frac: f64) -> (Rect, Rect) {
    if rect.width() >= rect.height() {
        let x = rect.re_min + frac * rect.width();
        (
            Rect { re_max: x, ..*rect },
            Rect { re_min: x, ..*rect },
        )
    } else {
        let y = rect.im_min + frac * rect.height();
        (
            Rect { im_max: y, ..*rect },
            Rect { im_min: y, ..*rect },
        )
    }
}

fn merge(f: &Analytic<'_>, roots: Vec<LocatedRoot>) -> Vec<LocatedRoot> {
    let mut out: Vec<LocatedRoot> = Vec::with_capacity(roots.len());
    for r in roots {
        if let Some(existing) = out
            .iter_mut()
            .find(|e| (e.z - r.z).norm() < MERGE_DISTANCE)
        {
            existing.multiplicity += r.multiplicity;
            existing.possibly_multiple = true;
            existing.residual = (f.value)(existing.z).norm();
        } else {
            out.push(r);
        }
    }
    out
}

/// Winding number with the nudging policy: a contour that meets a root is
/// expanded by 1% (up to five times).
pub fn locate_with_nudge(
    f: &Analytic<'_>,
    rect: &Rect,
    min_points: usize,
) -> Result<(Rect, usize, Vec<LocatedRoot>)> {
    let mut current = *rect;
    for _ in 0..=5 {
        match locate_roots(f, &current, min_points) {
            Ok((count, roots)) => return Ok((current, count, roots)),
            Err(Error::RootOnContour(_)) => current = current.expanded(0.01),
            Err(e) => return Err(e),
        }
    }
    Err(Error::RootOnContour(5))
}
