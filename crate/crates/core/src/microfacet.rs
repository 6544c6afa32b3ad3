//! Microsurface statistics: normal distributions, the Smith Lambda function,
//! masking, and visible-normal densities/sampling.
//!
//! Everything here is slope-space based. The two supported families (GGX and
//! Beckmann) have analytic Lambda functions and analytic visible-slope
//! distributions, which is what makes exact visible-normal sampling possible
//! for a view direction on *either* side of the horizon. The latter is needed
//! by the path walkers: mid-path propagation directions may point upwards
//! while the light is still inside the microgeometry.

use crate::geom::Direction;
use crate::{Error, Result};
use statrs::function::erf::{erf, erf_inv, erfc};

const SQRT_PI: f64 = 1.772453850905516;
const COS_CLAMP: f64 = 1e-7;

/// Supported normal distribution families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NdfKind {
    Ggx,
    Beckmann,
}

/// NDF family plus anisotropic slope-space roughness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MicrosurfaceParams {
    pub ndf_kind: NdfKind,
    alpha_x: f64,
    alpha_y: f64,
}

impl MicrosurfaceParams {
    /// Roughness is clamped into `[1e-4, 10]`.
    pub fn new(ndf_kind: NdfKind, alpha_x: f64, alpha_y: f64) -> MicrosurfaceParams {
        MicrosurfaceParams {
            ndf_kind,
            alpha_x: alpha_x.clamp(1e-4, 10.0),
            alpha_y: alpha_y.clamp(1e-4, 10.0),
        }
    }

    pub fn isotropic(ndf_kind: NdfKind, alpha: f64) -> MicrosurfaceParams {
        MicrosurfaceParams::new(ndf_kind, alpha, alpha)
    }

    pub fn alpha_x(&self) -> f64 {
        self.alpha_x
    }

    pub fn alpha_y(&self) -> f64 {
        self.alpha_y
    }

    pub fn is_isotropic(&self) -> bool {
        self.alpha_x == self.alpha_y
    }

    /// Elliptical roughness along the azimuth of `w`.
    fn alpha_for(&self, w: Direction) -> f64 {
        let s2 = w.x * w.x + w.y * w.y;
        if s2 < 1e-30 {
            return self.alpha_x;
        }
        ((self.alpha_x * self.alpha_x * w.x * w.x + self.alpha_y * self.alpha_y * w.y * w.y) / s2)
            .sqrt()
    }
}

/// Normal distribution function `D(m)`. Zero for downward `m`.
///
/// Normalized so that the projected area integrates to one:
/// `integral of D(m) m.z over the upper hemisphere = 1`.
pub fn ndf_eval(m: Direction, p: &MicrosurfaceParams) -> f64 {
    if m.z <= 0.0 {
        return 0.0;
    }
    let (ax, ay) = (p.alpha_x, p.alpha_y);
    match p.ndf_kind {
        NdfKind::Ggx => {
            let e = m.x * m.x / (ax * ax) + m.y * m.y / (ay * ay) + m.z * m.z;
            1.0 / (std::f64::consts::PI * ax * ay * e * e)
        }
        NdfKind::Beckmann => {
            let c2 = (m.z * m.z).max(COS_CLAMP * COS_CLAMP);
            let t = (m.x * m.x / (ax * ax) + m.y * m.y / (ay * ay)) / c2;
            (-t).exp() / (std::f64::consts::PI * ax * ay * c2 * c2)
        }
    }
}

/// Smith Lambda for an upper-hemisphere direction.
pub fn lambda(w: Direction, p: &MicrosurfaceParams) -> Result<f64> {
    if w.z <= 0.0 {
        return Err(Error::Domain(format!(
            "lambda expects an upper-hemisphere direction, got z = {}",
            w.z
        )));
    }
    Ok(lambda_upper(w, p))
}

/// Lambda assuming `w.z > 0`; grazing cosines are clamped.
pub(crate) fn lambda_upper(w: Direction, p: &MicrosurfaceParams) -> f64 {
    let cos_t = w.z.max(COS_CLAMP);
    let sin2 = (1.0 - w.z * w.z).max(0.0);
    let tan_t = sin2.sqrt() / cos_t;
    if tan_t == 0.0 {
        return 0.0;
    }
    let alpha = p.alpha_for(w);
    match p.ndf_kind {
        NdfKind::Ggx => {
            let at = alpha * tan_t;
            (-1.0 + (1.0 + at * at).sqrt()) / 2.0
        }
        NdfKind::Beckmann => {
            // erfc avoids the catastrophic cancellation of erf(a) - 1
            let a = 1.0 / (alpha * tan_t);
            (-a * a).exp() / (2.0 * a * SQRT_PI) - erfc(a) / 2.0
        }
    }
}

/// The derivation's `|Lambda(w)|`, valid on both hemispheres:
/// `Lambda(w)` above the horizon, `1 + Lambda(-w)` below it.
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) fn abs_lambda(w: Direction, p: &MicrosurfaceParams) -> f64 {
    if w.z > 0.0 {
        lambda_upper(w, p)
    } else {
        1.0 + lambda_upper(w.neg(), p)
    }
}

/// Smith masking `G1 = 1 / (1 + Lambda)` for an upper-hemisphere direction.
pub fn g1(w: Direction, p: &MicrosurfaceParams) -> Result<f64> {
    Ok(1.0 / (1.0 + lambda(w, p)?))
}

/// Projected microfacet area towards `v`:
/// `A(v) = integral of max(0, v.m) D(m) dm` over the upper hemisphere.
///
/// `A(v) = cos(theta) (1 + Lambda(v))` above the horizon and
/// `|cos(theta)| Lambda(-v)` below it; the two differ by exactly `v.z`.
pub(crate) fn projected_area(v: Direction, p: &MicrosurfaceParams) -> f64 {
    if v.z > 0.0 {
        v.z * (1.0 + lambda_upper(v, p))
    } else {
        -v.z * lambda_upper(v.neg(), p)
    }
}

/// Visible-normal density `D_{w_incident}(m)`.
///
/// `w_incident` is the propagation direction of the light (downward for a
/// ray entering the microsurface); the density is over microfacet normals
/// visible from `-w_incident` and integrates to one over the hemisphere.
pub fn vndf_eval(m: Direction, w_incident: Direction, p: &MicrosurfaceParams) -> f64 {
    let v = w_incident.neg();
    let vis = v.dot(m);
    if vis <= 0.0 || m.z <= 0.0 {
        return 0.0;
    }
    let area = projected_area(v, p);
    if area <= 0.0 {
        return 0.0;
    }
    vis * ndf_eval(m, p) / area
}

/// Samples a microfacet normal from `vndf_eval(., w_incident, p)`.
///
/// `w_incident.z < 0` always yields a sample; for an upward incident
/// direction the visible set can be empty, hence the crate-internal
/// `sample_visible_normal` returning `Option`.
pub fn vndf_sample(w_incident: Direction, p: &MicrosurfaceParams, u: [f64; 2]) -> Direction {
    debug_assert!(w_incident.z < 0.0);
    sample_visible_normal(w_incident.neg(), p, u)
        .expect("downward incident direction always sees some microfacets")
}

/// Samples `m` proportionally to `max(0, v.m) D(m)` for an arbitrary view
/// direction `v`. Returns `None` when no microfacet is visible from `v`
/// (view at or below the straight-down degenerate limit).
pub(crate) fn sample_visible_normal(
    v: Direction,
    p: &MicrosurfaceParams,
    u: [f64; 2],
) -> Option<Direction> {
    // Stretch: anisotropic visible-slope sampling reduces to the unit-alpha
    // problem for the stretched view direction.
    let vs = Direction::new(p.alpha_x * v.x, p.alpha_y * v.y, v.z)?;
    let st = vs.sin_theta();

    let (a, b) = if st < 1e-7 {
        if vs.z <= 0.0 {
            return None;
        }
        sample_slope_11_normal_incidence(p.ndf_kind, u)
    } else {
        let c = vs.z / st; // cot(theta) of the stretched view, any sign
        sample_visible_slope_11(p.ndf_kind, c, u)?
    };

    // Rotate the slopes into the view azimuth frame, then unstretch.
    let (cp, sp) = if st < 1e-7 { (1.0, 0.0) } else { (vs.x / st, vs.y / st) };
    let slope_x = p.alpha_x * (cp * a - sp * b);
    let slope_y = p.alpha_y * (sp * a + cp * b);
    Direction::new(-slope_x, -slope_y, 1.0)
}

/// Slope sample from the bare unit-alpha P22 (normal-incidence view).
fn sample_slope_11_normal_incidence(kind: NdfKind, u: [f64; 2]) -> (f64, f64) {
    match kind {
        NdfKind::Ggx => {
            // marginal in x: (1 + x^2)^(-3/2) / 2
            let t = (2.0 * u[0] - 1.0).clamp(-1.0 + 1e-15, 1.0 - 1e-15);
            let x = t / (1.0 - t * t).sqrt();
            let y = ggx_conditional_slope((1.0 + x * x).sqrt(), u[1]);
            (x, y)
        }
        NdfKind::Beckmann => (gauss_inv(u[0]), gauss_inv(u[1])),
    }
}

/// Slope sample from the unit-alpha visible-slope distribution
/// `max(0, c - x) P22(x, y)` where `c` is the view cotangent.
fn sample_visible_slope_11(kind: NdfKind, c: f64, u: [f64; 2]) -> Option<(f64, f64)> {
    match kind {
        NdfKind::Ggx => {
            // x-marginal CDF: F(x) = (c x + 1)/sqrt(1 + x^2) + c, on (-inf, c]
            let norm = (1.0 + c * c).sqrt() + c;
            if !(norm > 1e-12) {
                return None;
            }
            let target = u[0].max(1e-12) * norm;
            let x = ggx_marginal_invert(c, target);
            let y = ggx_conditional_slope((1.0 + x * x).sqrt(), u[1]);
            Some((x, y))
        }
        NdfKind::Beckmann => {
            // x-marginal CDF: F(x) = c sqrt(pi) (1 + erf(x))/2 + exp(-x^2)/2
            let norm = beckmann_cdf(c, c);
            if !(norm > 1e-300) {
                return None;
            }
            let target = u[0].max(1e-12) * norm;
            let x = beckmann_marginal_invert(c, target, norm);
            Some((x, gauss_inv(u[1])))
        }
    }
}

/// Inverse of the standard Gaussian slope CDF (up to the erf scaling).
fn gauss_inv(u: f64) -> f64 {
    erf_inv((2.0 * u - 1.0).clamp(-1.0 + 1e-15, 1.0 - 1e-15))
}

fn ggx_marginal_cdf(c: f64, x: f64) -> f64 {
    (c * x + 1.0) / (1.0 + x * x).sqrt() + c
}

/// Solves `(c x + 1)/sqrt(1 + x^2) + c = target` for `x <= c`.
fn ggx_marginal_invert(c: f64, target: f64) -> f64 {
    let k = target - c;
    // (c x + 1) = k sqrt(1 + x^2)  =>  (c^2 - k^2) x^2 + 2 c x + (1 - k^2) = 0
    let qa = c * c - k * k;
    let mut best: Option<f64> = None;
    let mut best_err = f64::INFINITY;
    let mut consider = |x: f64| {
        if x.is_finite() && x <= c + 1e-9 {
            let err = (ggx_marginal_cdf(c, x) - target).abs();
            if err < best_err {
                best_err = err;
                best = Some(x);
            }
        }
    };
    if qa.abs() < 1e-12 * (c * c + k * k).max(1.0) {
        if c.abs() > 1e-12 {
            consider((k * k - 1.0) / (2.0 * c));
        }
    } else {
        let disc = k * k * (1.0 + c * c - k * k);
        if disc >= 0.0 {
            let root = disc.sqrt();
            consider((-c + root) / qa);
            consider((-c - root) / qa);
        }
    }
    match best {
        Some(x) if best_err < 1e-6 * (1.0 + target.abs()) => x.min(c),
        _ => {
            // numeric edge: fall back to a bisection on the monotone CDF
            let mut lo = c - 1.0;
            while ggx_marginal_cdf(c, lo) > target && lo > -1e12 {
                lo = c - 2.0 * (c - lo);
            }
            let mut hi = c;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if ggx_marginal_cdf(c, mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        }
    }
}

/// Samples the GGX conditional slope `y | x`, distributed as
/// `(gamma^2 + y^2)^(-2)` with `gamma^2 = 1 + x^2`.
fn ggx_conditional_slope(gamma: f64, u: f64) -> f64 {
    // substitute y = gamma tan(psi): density cos^2(psi) on (-pi/2, pi/2)
    let rhs = std::f64::consts::PI * (2.0 * u - 1.0);
    let mut lo = -std::f64::consts::FRAC_PI_2;
    let mut hi = std::f64::consts::FRAC_PI_2;
    let mut psi = rhs / 2.0;
    for _ in 0..60 {
        let f = 2.0 * psi + (2.0 * psi).sin() - rhs;
        if f.abs() < 1e-13 {
            break;
        }
        if f > 0.0 {
            hi = psi;
        } else {
            lo = psi;
        }
        let df = 2.0 + 2.0 * (2.0 * psi).cos();
        let step = if df > 1e-9 { f / df } else { 0.0 };
        let next = psi - step;
        psi = if step != 0.0 && next > lo && next < hi { next } else { 0.5 * (lo + hi) };
    }
    gamma * psi.tan()
}

fn beckmann_cdf(c: f64, x: f64) -> f64 {
    c * SQRT_PI * (1.0 + erf(x)) / 2.0 + (-x * x).exp() / 2.0
}

/// Solves `beckmann_cdf(c, x) = target` for `x <= c` (monotone on that range).
fn beckmann_marginal_invert(c: f64, target: f64, norm: f64) -> f64 {
    let mut lo = c - 1.0;
    let mut expand = 1.0;
    while beckmann_cdf(c, lo) > target && lo > -40.0 {
        expand *= 2.0;
        lo = c - expand;
    }
    let mut hi = c;
    let mut x = 0.5 * (lo + hi);
    let tol = 1e-12 * norm.max(1e-300);
    for _ in 0..80 {
        let f = beckmann_cdf(c, x) - target;
        if f.abs() < tol {
            break;
        }
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let df = (c - x) * (-x * x).exp();
        let next = if df > 1e-300 { x - f / df } else { f64::NAN };
        x = if next.is_finite() && next > lo && next < hi { next } else { 0.5 * (lo + hi) };
    }
    x
}
