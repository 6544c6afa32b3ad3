//! Basic spherical geometry: unit directions in the local shading frame and
//! RGB throughput weights.
//!
//! The shading frame has the geometric normal at `(0, 0, 1)`. Path
//! directions follow the propagation convention: the first direction of a
//! path points downwards (into the surface), the last one upwards.

use std::ops::{Add, AddAssign, Div, Mul};

/// A unit 3-vector in the local shading frame (geometric normal = +z).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Direction {
    pub const UP: Direction = Direction { x: 0.0, y: 0.0, z: 1.0 };
    pub const DOWN: Direction = Direction { x: 0.0, y: 0.0, z: -1.0 };

    /// Builds a direction from raw components, normalizing them.
    ///
    /// Returns `None` when the vector is too short to normalize.
    pub fn new(x: f64, y: f64, z: f64) -> Option<Direction> {
        let len = (x * x + y * y + z * z).sqrt();
        if len < 1e-12 || !len.is_finite() {
            return None;
        }
        Some(Direction { x: x / len, y: y / len, z: z / len })
    }

    /// Direction from spherical angles; `z = cos(theta)`.
    pub fn from_spherical(theta: f64, phi: f64) -> Direction {
        let (st, ct) = (theta.sin(), theta.cos());
        let (sp, cp) = (phi.sin(), phi.cos());
        Direction { x: st * cp, y: st * sp, z: ct }
    }

    pub fn dot(self, other: Direction) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn neg(self) -> Direction {
        Direction { x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn cos_theta(self) -> f64 {
        self.z
    }

    pub fn sin_theta(self) -> f64 {
        (1.0 - self.z * self.z).max(0.0).sqrt()
    }

    pub fn theta(self) -> f64 {
        self.z.clamp(-1.0, 1.0).acos()
    }

    pub fn phi(self) -> f64 {
        let p = self.y.atan2(self.x);
        if p < 0.0 {
            p + 2.0 * std::f64::consts::PI
        } else {
            p
        }
    }

    /// Mirror reflection of the propagation direction `self` about the
    /// microfacet normal `m`.
    pub fn reflect(self, m: Direction) -> Direction {
        let d = 2.0 * self.dot(m);
        // stays unit length up to roundoff
        Direction { x: self.x - d * m.x, y: self.y - d * m.y, z: self.z - d * m.z }
    }

    /// Normalized half vector of the segment `self -> next`, i.e. the
    /// bisector of `-self` and `next`. `None` when the two are antiparallel.
    pub fn half_vector(self, next: Direction) -> Option<Direction> {
        Direction::new(next.x - self.x, next.y - self.y, next.z - self.z)
    }

    pub fn is_unit(self) -> bool {
        (self.x * self.x + self.y * self.y + self.z * self.z - 1.0).abs() < 1e-6
    }
}

/// Nonnegative RGB radiometric weight (carries Fresnel-weighted path
/// throughput).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spectrum {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl Spectrum {
    pub const ZERO: Spectrum = Spectrum { r: 0.0, g: 0.0, b: 0.0 };
    pub const ONE: Spectrum = Spectrum { r: 1.0, g: 1.0, b: 1.0 };

    pub fn new(r: f64, g: f64, b: f64) -> Spectrum {
        Spectrum { r, g, b }
    }

    pub fn splat(v: f64) -> Spectrum {
        Spectrum { r: v, g: v, b: v }
    }

    pub fn max_channel(self) -> f64 {
        self.r.max(self.g).max(self.b)
    }

    pub fn mean(self) -> f64 {
        (self.r + self.g + self.b) / 3.0
    }

    pub fn is_finite(self) -> bool {
        self.r.is_finite() && self.g.is_finite() && self.b.is_finite()
    }

    /// True when all three channels carry the same value.
    pub fn is_gray(self) -> bool {
        self.r == self.g && self.g == self.b
    }

    pub fn sqrt(self) -> Spectrum {
        Spectrum { r: self.r.sqrt(), g: self.g.sqrt(), b: self.b.sqrt() }
    }
}

impl Add for Spectrum {
    type Output = Spectrum;
    fn add(self, o: Spectrum) -> Spectrum {
        Spectrum { r: self.r + o.r, g: self.g + o.g, b: self.b + o.b }
    }
}

impl AddAssign for Spectrum {
    fn add_assign(&mut self, o: Spectrum) {
        self.r += o.r;
        self.g += o.g;
        self.b += o.b;
    }
}

impl Mul for Spectrum {
    type Output = Spectrum;
    fn mul(self, o: Spectrum) -> Spectrum {
        Spectrum { r: self.r * o.r, g: self.g * o.g, b: self.b * o.b }
    }
}

impl Mul<f64> for Spectrum {
    type Output = Spectrum;
    fn mul(self, s: f64) -> Spectrum {
        Spectrum { r: self.r * s, g: self.g * s, b: self.b * s }
    }
}

impl Div<f64> for Spectrum {
    type Output = Spectrum;
    fn div(self, s: f64) -> Spectrum {
        Spectrum { r: self.r / s, g: self.g / s, b: self.b / s }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spherical_constructor_matches_invariants() {
        let d = Direction::from_spherical(0.7, 1.3);
        assert!(d.is_unit());
        assert!((d.z - 0.7f64.cos()).abs() < 1e-12);
        assert!((d.theta() - 0.7).abs() < 1e-12);
        assert!((d.phi() - 1.3).abs() < 1e-12);
    }

    #[test]
    fn reflect_preserves_length_and_flips_about_normal() {
        let d = Direction::from_spherical(2.2, 0.4); // downward-ish
        let m = Direction::from_spherical(0.3, 1.0);
        let r = d.reflect(m);
        assert!(r.is_unit());
        // incident and reflected make equal angles with m
        assert!((d.dot(m) + r.dot(m)).abs() < 1e-12);
    }

    #[test]
    fn half_vector_of_mirror_pair_is_the_normal() {
        let m = Direction::from_spherical(0.5, 0.2);
        let d = Direction::from_spherical(2.7, 1.9);
        let r = d.reflect(m);
        let h = d.half_vector(r).unwrap();
        let aligned = h.dot(m).abs();
        assert!((aligned - 1.0).abs() < 1e-9);
    }
}
