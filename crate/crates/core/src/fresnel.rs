//! Per-microfacet reflectance models.

use crate::geom::{Direction, Spectrum};
use crate::{Error, Result};

/// Reflectance model evaluated at a microfacet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FresnelSpec {
    /// F = 1 on all channels (white furnace configuration).
    None,
    /// Schlick approximation with per-channel normal-incidence reflectance.
    Schlick { f0: Spectrum },
    /// Exact unpolarized conductor reflectance with complex IOR eta + i kappa.
    Conductor { eta: Spectrum, kappa: Spectrum },
}

impl FresnelSpec {
    pub fn schlick(f0: Spectrum) -> FresnelSpec {
        FresnelSpec::Schlick {
            f0: Spectrum::new(f0.r.clamp(0.0, 1.0), f0.g.clamp(0.0, 1.0), f0.b.clamp(0.0, 1.0)),
        }
    }

    /// True when the reflectance is the same on all channels for every angle.
    pub fn is_scalar(&self) -> bool {
        match self {
            FresnelSpec::None => true,
            FresnelSpec::Schlick { f0 } => f0.is_gray(),
            FresnelSpec::Conductor { eta, kappa } => eta.is_gray() && kappa.is_gray(),
        }
    }
}

/// Fresnel reflectance for an interaction with half/microfacet normal `m`.
///
/// Uses `c = |dot(w_in, m)|` clamped to `[0, 1]`; all channels land in `[0, 1]`.
pub fn fresnel_eval(w_in: Direction, m: Direction, spec: &FresnelSpec) -> Spectrum {
    let c = w_in.dot(m).abs().clamp(0.0, 1.0);
    match spec {
        FresnelSpec::None => Spectrum::ONE,
        FresnelSpec::Schlick { f0 } => {
            let w = (1.0 - c).powi(5);
            Spectrum::new(
                f0.r + (1.0 - f0.r) * w,
                f0.g + (1.0 - f0.g) * w,
                f0.b + (1.0 - f0.b) * w,
            )
        }
        FresnelSpec::Conductor { eta, kappa } => Spectrum::new(
            conductor_channel(c, eta.r, kappa.r),
            conductor_channel(c, eta.g, kappa.g),
            conductor_channel(c, eta.b, kappa.b),
        ),
    }
}

/// Exact unpolarized conductor reflectance (average of s and p polarizations).
fn conductor_channel(cos_i: f64, eta: f64, k: f64) -> f64 {
    let c2 = cos_i * cos_i;
    let s2 = 1.0 - c2;
    let t0 = eta * eta - k * k - s2;
    let a2b2 = (t0 * t0 + 4.0 * eta * eta * k * k).sqrt();
    let t1 = a2b2 + c2;
    let a = ((a2b2 + t0) / 2.0).max(0.0).sqrt();
    let t2 = 2.0 * a * cos_i;
    let rs = (t1 - t2) / (t1 + t2);
    let t3 = c2 * a2b2 + s2 * s2;
    let t4 = t2 * s2;
    let rp = rs * (t3 - t4) / (t3 + t4);
    (0.5 * (rs + rp)).clamp(0.0, 1.0)
}

/// Bundled conductor IORs (approximate, render-plausible RGB values).
const CONDUCTOR_FIXTURE: &str = include_str!("../fixtures/conductors.txt");

/// Parses `name eta_r eta_g eta_b k_r k_g k_b` lines; `#` starts a comment.
pub fn parse_conductor_fixture(text: &str) -> Result<Vec<(String, FresnelSpec)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(Error::Parse(format!(
                "conductor fixture line {}: expected 7 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let mut vals = [0.0f64; 6];
        for (i, f) in fields[1..].iter().enumerate() {
            vals[i] = f.parse::<f64>().map_err(|e| {
                Error::Parse(format!("conductor fixture line {}: {e}", lineno + 1))
            })?;
        }
        if vals.iter().any(|v| *v <= 0.0) {
            return Err(Error::Parse(format!(
                "conductor fixture line {}: eta and kappa must be positive",
                lineno + 1
            )));
        }
        out.push((
            fields[0].to_string(),
            FresnelSpec::Conductor {
                eta: Spectrum::new(vals[0], vals[1], vals[2]),
                kappa: Spectrum::new(vals[3], vals[4], vals[5]),
            },
        ));
    }
    Ok(out)
}

/// Looks up one of the bundled conductors by name (case-insensitive).
pub fn conductor_by_name(name: &str) -> Result<FresnelSpec> {
    let table = parse_conductor_fixture(CONDUCTOR_FIXTURE)?;
    table
        .into_iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|(_, s)| s)
        .ok_or_else(|| Error::Parse(format!("unknown conductor '{name}'")))
}
