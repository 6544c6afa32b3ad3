//! Path-level shadowing-masking: vertex term, phase function, the recursive
//! segment term, and the full position-free path contribution.
//!
//! A light path is an ordered direction list `(d_0, ..., d_k)`; `d_0` points
//! into the surface and `d_k` away from it for a complete path. The segment
//! term of a window `(d_i, ..., d_j)` follows the recursion
//!
//! `S(i, j) = S1(d_i, d_j) * (S(i, j-1) + S(i+1, j))`
//!
//! with `S1` zero whenever the window's first direction points up or its
//! last points down. Applying the zero rule inside every window makes the
//! valid path configurations emerge without any case enumeration.

use crate::fresnel::{fresnel_eval, FresnelSpec};
use crate::geom::{Direction, Spectrum};
use crate::microfacet::{lambda_upper, ndf_eval, projected_area, MicrosurfaceParams};
use crate::{Error, Result};

/// Ordered direction list defining a position-free light path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathDirections {
    dirs: Vec<Direction>,
}

impl PathDirections {
    /// At least two directions (a single bounce).
    pub fn new(dirs: Vec<Direction>) -> Result<PathDirections> {
        if dirs.len() < 2 {
            return Err(Error::Domain(format!(
                "a path needs at least 2 directions, got {}",
                dirs.len()
            )));
        }
        Ok(PathDirections { dirs })
    }

    pub fn bounces(&self) -> usize {
        self.dirs.len() - 1
    }

    pub fn as_slice(&self) -> &[Direction] {
        &self.dirs
    }

    /// Complete paths enter downwards and leave upwards.
    pub fn is_complete(&self) -> bool {
        self.dirs[0].z < 0.0 && self.dirs[self.dirs.len() - 1].z > 0.0
    }

    /// Reverses the direction order and negates every direction; maps a
    /// complete path onto the complete path traversed the other way.
    pub fn reversed_negated(&self) -> PathDirections {
        PathDirections { dirs: self.dirs.iter().rev().map(|d| d.neg()).collect() }
    }
}

/// Local interaction term of one bounce: `F(-d_in, h) D(h) / (4 |d_in.z|)`
/// with `h` the half vector of the segment. Zero for downward `h`.
pub fn vertex_term(
    d_in: Direction,
    d_out: Direction,
    p: &MicrosurfaceParams,
    fr: &FresnelSpec,
) -> Spectrum {
    let h = match d_in.half_vector(d_out) {
        Some(h) if h.z > 0.0 => h,
        _ => return Spectrum::ZERO,
    };
    let d = ndf_eval(h, p);
    if d == 0.0 {
        return Spectrum::ZERO;
    }
    let denom = 4.0 * d_in.z.abs().max(1e-7);
    fresnel_eval(d_in.neg(), h, fr) * (d / denom)
}

/// Solid-angle density of scattering from propagation direction `d_prev`
/// into `d_next` when the next microfacet normal is drawn from the visible
/// normals of `d_prev`. Valid for `d_prev` on either side of the horizon.
pub(crate) fn transition_pdf(
    d_prev: Direction,
    d_next: Direction,
    p: &MicrosurfaceParams,
) -> f64 {
    let h = match d_prev.half_vector(d_next) {
        Some(h) if h.z > 0.0 => h,
        _ => return 0.0,
    };
    let area = projected_area(d_prev.neg(), p);
    if area <= 0.0 {
        return 0.0;
    }
    // the half-vector Jacobian 1/(4 <-d_prev, h>) cancels against the same
    // factor in the visible-normal density
    ndf_eval(h, p) / (4.0 * area)
}

/// Scattering phase function `F(d_in, h) D_{d_in}(h) / (4 |h . d_in|)`.
///
/// Relates to the vertex term through the extended Lambda:
/// `phase * |Lambda(d_in)| = vertex`, where `|Lambda|` is `1 + Lambda(-d_in)`
/// for a downward `d_in` and `Lambda(d_in)` for an upward one.
pub fn phase_function(
    d_in: Direction,
    d_out: Direction,
    p: &MicrosurfaceParams,
    fr: &FresnelSpec,
) -> Spectrum {
    let q = transition_pdf(d_in, d_out, p);
    if q == 0.0 {
        return Spectrum::ZERO;
    }
    let h = d_in.half_vector(d_out).expect("valid half vector when pdf > 0");
    fresnel_eval(d_in, h, fr) * q
}

/// Single-segment shadowing-masking term.
///
/// Zero when `d0` points up or `d1` points down (the generalized zero rule,
/// applied inside every recursion window); otherwise
/// `1 / (1 + Lambda(-d0) + Lambda(d1))`, the height-correlated Smith G2.
pub fn s1(d0: Direction, d1: Direction, p: &MicrosurfaceParams) -> f64 {
    if d0.z > 0.0 || d1.z < 0.0 {
        return 0.0;
    }
    1.0 / (1.0 + lambda_upper(d0.neg(), p) + lambda_upper(d1, p))
}

/// Memoized window table of segment terms for one growing path.
///
/// `window(i, j)` holds `S_{j-i}(d_i, ..., d_j)`; extending by one direction
/// costs time linear in the current path length.
#[derive(Debug, Clone)]
pub struct SegmentTable {
    dirs: Vec<Direction>,
    // rows[e - 1][i] = S(i, e) for the window ending at index e
    rows: Vec<Vec<f64>>,
}

impl SegmentTable {
    /// Table for the two-direction path `(d0, d1)`.
    pub fn new(d0: Direction, d1: Direction, p: &MicrosurfaceParams) -> SegmentTable {
        SegmentTable { dirs: vec![d0, d1], rows: vec![vec![s1(d0, d1, p)]] }
    }

    pub fn dirs(&self) -> &[Direction] {
        &self.dirs
    }

    /// Stored segment term of the window `(d_i, ..., d_j)`, `i < j`.
    pub fn window(&self, i: usize, j: usize) -> f64 {
        self.rows[j - 1][i]
    }

    /// Segment term of the full path seen so far.
    pub fn full_value(&self) -> f64 {
        self.window(0, self.dirs.len() - 1)
    }

    /// Full-path segment term as if `new_dir` were appended, without
    /// modifying the table. Linear in the current path length.
    pub fn value_if_extended(&self, new_dir: Direction, p: &MicrosurfaceParams) -> f64 {
        let e = self.dirs.len();
        let mut next = s1(self.dirs[e - 1], new_dir, p);
        for i in (0..e - 1).rev() {
            let gate = s1(self.dirs[i], new_dir, p);
            next = gate * (self.window(i, e - 1) + next);
        }
        next
    }

    /// Appends one direction, filling all windows that end at it.
    pub fn push(&mut self, new_dir: Direction, p: &MicrosurfaceParams) {
        let e = self.dirs.len();
        self.dirs.push(new_dir);
        let mut row = vec![0.0; e];
        row[e - 1] = s1(self.dirs[e - 1], new_dir, p);
        for i in (0..e - 1).rev() {
            let gate = s1(self.dirs[i], new_dir, p);
            row[i] = gate * (self.window(i, e - 1) + row[i + 1]);
        }
        self.rows.push(row);
    }
}

/// Recursive path shadowing-masking term `S_k` via the window table.
pub fn path_shadowing(path: &PathDirections, p: &MicrosurfaceParams) -> f64 {
    segment_term(path.as_slice(), p)
}

pub(crate) fn segment_term(dirs: &[Direction], p: &MicrosurfaceParams) -> f64 {
    debug_assert!(dirs.len() >= 2);
    let mut table = SegmentTable::new(dirs[0], dirs[1], p);
    for &d in &dirs[2..] {
        table.push(d, p);
    }
    table.full_value()
}

/// Extends a window table by one direction, consuming it.
///
/// The table must already describe `path`; the extended table describes the
/// path plus `new_dir`, and its full-window value equals a from-scratch
/// [`path_shadowing`] on the longer path.
pub fn path_shadowing_extend(
    mut table: SegmentTable,
    path: &PathDirections,
    new_dir: Direction,
    p: &MicrosurfaceParams,
) -> Result<SegmentTable> {
    if table.dirs() != path.as_slice() {
        return Err(Error::Mismatch(
            "segment table does not describe the given path".to_string(),
        ));
    }
    table.push(new_dir, p);
    Ok(table)
}

/// Full path contribution `f(path) = prod(vertex terms) * S_k`.
pub fn path_contribution(
    path: &PathDirections,
    p: &MicrosurfaceParams,
    fr: &FresnelSpec,
) -> Result<Spectrum> {
    if !path.is_complete() {
        return Err(Error::Domain(
            "path contribution requires a complete path (d_0 down, d_k up)".to_string(),
        ));
    }
    Ok(contribution_unchecked(path.as_slice(), p, fr))
}

pub(crate) fn contribution_unchecked(
    dirs: &[Direction],
    p: &MicrosurfaceParams,
    fr: &FresnelSpec,
) -> Spectrum {
    let mut v = Spectrum::ONE;
    for pair in dirs.windows(2) {
        v = v * vertex_term(pair[0], pair[1], p, fr);
        if v == Spectrum::ZERO {
            return Spectrum::ZERO;
        }
    }
    v * segment_term(dirs, p)
}
