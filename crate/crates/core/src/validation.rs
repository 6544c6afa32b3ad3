//! Independent oracles and measurement procedures: a deterministic
//! fixed-point solution of the invariance-principle integral equation, the
//! white furnace test, reflectance curves, inverse-efficiency comparisons,
//! and MSE convergence studies.
//!
//! The fixed-point solver shares no code with the estimators beyond the
//! elementary vertex/Lambda functions: it discretizes the hemisphere, forms
//! the Picard iteration
//!
//! `rho = (v + int(v(wi,-w) rho(-w,wo) + rho(wi,w) v(w,wo)) dw) / (L(-wi) + L(wo) + 1)`
//!
//! and iterates from the single-scatter term. Agreement between the solved
//! table and the Monte Carlo estimators is the central cross-validation of
//! the whole library.

use crate::estimators::{
    eval_one_sample, sample, EstimatorConfig, RngStream, SegmentModel,
};
use crate::fresnel::FresnelSpec;
use crate::geom::Direction;
use crate::microfacet::{lambda_upper, MicrosurfaceParams};
use crate::pathsm::vertex_term;
use crate::{Error, Result};
use rayon::prelude::*;
use std::f64::consts::PI;
use std::time::Instant;

const TAG_FURNACE: u64 = 0x4655524e4143455f;
const TAG_CURVE: u64 = 0x43555256455f5f5f;
const TAG_MSE: u64 = 0x4d53455f5f5f5f5f;

const TWO_PI: f64 = 2.0 * PI;

/// Estimator selection for the measurement operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Unidirectional walk with per-prefix connection.
    Eval,
    /// Bidirectional walk with MIS over split points.
    Bdpt,
    /// Same walk weighted with per-bounce shadowing-masking (biased).
    IndependentBounce,
}

impl Method {
    fn tag(self) -> u64 {
        match self {
            Method::Eval => 1,
            Method::Bdpt => 2,
            Method::IndependentBounce => 3,
        }
    }
}

/// splitmix64; decorrelates derived seeds.
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

// ---------------------------------------------------------------------------
// Quadrature grid
// ---------------------------------------------------------------------------

/// Product quadrature rule over the upper hemisphere: Gauss-Legendre nodes
/// in cos(theta) crossed with uniform phi nodes. Weights sum to 2 pi.
#[derive(Debug, Clone)]
pub struct DirectionGrid {
    /// Polar node angles, ascending.
    thetas: Vec<f64>,
    /// Gauss-Legendre weights in the cos(theta) variable (sum to 1).
    cos_weights: Vec<f64>,
    n_phi: usize,
}

impl DirectionGrid {
    pub fn new(n_theta: usize, n_phi: usize) -> DirectionGrid {
        assert!(n_theta >= 2 && n_phi >= 2, "grid needs at least 2x2 nodes");
        let (nodes, weights) = gauss_legendre(n_theta);
        // map [-1, 1] onto cos(theta) in [0, 1]; GL nodes ascend in x, so
        // reversing gives ascending theta
        let mut thetas = Vec::with_capacity(n_theta);
        let mut cos_weights = Vec::with_capacity(n_theta);
        for i in (0..n_theta).rev() {
            let c = (nodes[i] + 1.0) / 2.0;
            thetas.push(c.clamp(-1.0, 1.0).acos());
            cos_weights.push(weights[i] / 2.0);
        }
        DirectionGrid { thetas, cos_weights, n_phi }
    }

    pub fn n_theta(&self) -> usize {
        self.thetas.len()
    }

    pub fn n_phi(&self) -> usize {
        self.n_phi
    }

    pub fn theta(&self, j: usize) -> f64 {
        self.thetas[j]
    }

    pub fn phi(&self, m: usize) -> f64 {
        TWO_PI * m as f64 / self.n_phi as f64
    }

    pub fn direction(&self, j: usize, m: usize) -> Direction {
        Direction::from_spherical(self.thetas[j], self.phi(m))
    }

    /// Solid-angle weight of node `(j, m)`.
    pub fn weight(&self, j: usize, _m: usize) -> f64 {
        self.cos_weights[j] * TWO_PI / self.n_phi as f64
    }

    /// Quadrature of `f` over the upper hemisphere.
    pub fn integrate(&self, f: impl Fn(Direction) -> f64) -> f64 {
        let mut total = 0.0;
        for j in 0..self.n_theta() {
            let mut ring = 0.0;
            for m in 0..self.n_phi {
                ring += f(self.direction(j, m));
            }
            total += ring * self.weight(j, 0);
        }
        total
    }
}

/// Gauss-Legendre nodes (ascending) and weights on [-1, 1].
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Newton from the Chebyshev-based initial guess
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence for P_n(x) and P_{n-1}(x)
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

// ---------------------------------------------------------------------------
// Fixed-point oracle
// ---------------------------------------------------------------------------

/// Tabulated `rho(w_i, w_o)` (cosine-weighted BRDF) for an isotropic
/// surface with scalar Fresnel; azimuthal symmetry reduces the table to
/// `(theta_i, theta_o, delta_phi)`.
#[derive(Debug, Clone)]
pub struct RhoTable {
    grid: DirectionGrid,
    /// Flattened `[theta_i][theta_o][delta_phi]`.
    values: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// Directional albedo at each theta_i node after every Picard iterate
    /// (index 0 = the single-scatter initialization).
    pub furnace_history: Vec<Vec<f64>>,
}

impl RhoTable {
    pub fn grid(&self) -> &DirectionGrid {
        &self.grid
    }

    fn idx(&self, a: usize, b: usize, c: usize) -> usize {
        (a * self.grid.n_theta() + b) * self.grid.n_phi() + c
    }

    /// Table entry at incidence node `a`, outgoing node `b`, azimuth
    /// offset node `c`.
    pub fn value(&self, a: usize, b: usize, c: usize) -> f64 {
        self.values[self.idx(a, b, c)]
    }

    /// Interpolated `rho(w_i, w_o)` for arbitrary upper-hemisphere
    /// directions (linear in both thetas and in delta-phi, periodic).
    pub fn lookup(&self, w_i: Direction, w_o: Direction) -> f64 {
        if w_i.z <= 0.0 || w_o.z <= 0.0 {
            return 0.0;
        }
        let (a0, a1, ta) = self.theta_bracket(w_i.theta());
        let (b0, b1, tb) = self.theta_bracket(w_o.theta());
        let dphi = (w_o.phi() - w_i.phi()).rem_euclid(TWO_PI);
        let step = TWO_PI / self.grid.n_phi() as f64;
        let f = dphi / step;
        let c0 = (f.floor() as usize) % self.grid.n_phi();
        let c1 = (c0 + 1) % self.grid.n_phi();
        let tc = f - f.floor();

        let mut out = 0.0;
        for (a, wa) in [(a0, 1.0 - ta), (a1, ta)] {
            for (b, wb) in [(b0, 1.0 - tb), (b1, tb)] {
                for (c, wc) in [(c0, 1.0 - tc), (c1, tc)] {
                    out += wa * wb * wc * self.value(a, b, c);
                }
            }
        }
        out
    }

    /// Bracketing theta nodes and the interpolation fraction, clamped at
    /// the grid boundary.
    fn theta_bracket(&self, theta: f64) -> (usize, usize, f64) {
        let th = &self.grid.thetas;
        if theta <= th[0] {
            return (0, 0, 0.0);
        }
        let last = th.len() - 1;
        if theta >= th[last] {
            return (last, last, 0.0);
        }
        let hi = th.partition_point(|t| *t < theta);
        let lo = hi - 1;
        let t = (theta - th[lo]) / (th[hi] - th[lo]);
        (lo, hi, t)
    }

    /// Quadrature of `rho(w_i, .)` over the outgoing hemisphere at
    /// incidence node `a` (the furnace integrand).
    pub fn albedo(&self, a: usize) -> f64 {
        albedo_of(&self.grid, &self.values, a)
    }

    /// Mean of the interpolated table over an outgoing annulus
    /// `theta_o in [theta_lo, theta_hi]` (uniform solid-angle average).
    pub fn bin_average(&self, theta_i: f64, theta_lo: f64, theta_hi: f64) -> f64 {
        let w_i = Direction::from_spherical(theta_i, 0.0);
        let (c_hi, c_lo) = (theta_hi.cos(), theta_lo.cos());
        let nz = 16;
        let np = 64;
        let mut sum = 0.0;
        for iz in 0..nz {
            let z = c_hi + (c_lo - c_hi) * (iz as f64 + 0.5) / nz as f64;
            let theta = z.clamp(-1.0, 1.0).acos();
            for ip in 0..np {
                let phi = TWO_PI * (ip as f64 + 0.5) / np as f64;
                sum += self.lookup(w_i, Direction::from_spherical(theta, phi));
            }
        }
        sum / (nz * np) as f64
    }
}

fn albedo_of(grid: &DirectionGrid, values: &[f64], a: usize) -> f64 {
    let (nt, np) = (grid.n_theta(), grid.n_phi());
    let mut total = 0.0;
    for b in 0..nt {
        let row = &values[(a * nt + b) * np..(a * nt + b + 1) * np];
        let ring: f64 = row.iter().sum();
        total += ring * grid.weight(b, 0);
    }
    total
}

/// Precomputed discretization of the integral equation.
///
/// Both in-scattering integrands are discontinuous where the vertex's half
/// vector crosses the horizon, i.e. where the intermediate direction's
/// cos(theta) passes the outer node's cos(theta). A quadrature rule shared
/// by all nodes integrates across that jump with percent-level error, so
/// every node index `t` gets a dedicated Gauss-Legendre rule split at
/// `cos(theta_t)`; the iterate is evaluated at the off-grid quadrature
/// nodes by quadratic interpolation in cos(theta).
pub(crate) struct PicardKernel {
    grid: DirectionGrid,
    v0: Vec<f64>,
    denom: Vec<f64>,
    /// Quadrature weights of the split rules, `[t][q]` (panel width folded in).
    q_weights: Vec<Vec<f64>>,
    /// Interpolation stencils onto the grid's theta nodes, `[t][q]`.
    stencils: Vec<Vec<(usize, [f64; 3])>>,
    /// `v(w_i(a), -w(q, m))`, incoming-side scattering: `[a][q * n_phi + m]`.
    v_in: Vec<Vec<f64>>,
    /// `v(w(q), w_o(b, d))`, outgoing-side scattering: `[b][q * n_phi + d]`.
    v_out: Vec<Vec<f64>>,
}

/// Gauss-Legendre points per panel of a split rule.
const PANEL_POINTS: usize = 24;

impl PicardKernel {
    pub(crate) fn new(p: &MicrosurfaceParams, fr: &FresnelSpec, grid: DirectionGrid) -> PicardKernel {
        let (nt, np) = (grid.n_theta(), grid.n_phi());
        let up = |j: usize, m: usize| grid.direction(j, m);
        let scalar_vertex = |d_in: Direction, d_out: Direction| vertex_term(d_in, d_out, p, fr).r;

        let mut v0 = vec![0.0; nt * nt * np];
        for a in 0..nt {
            for b in 0..nt {
                for c in 0..np {
                    v0[(a * nt + b) * np + c] = scalar_vertex(up(a, 0).neg(), up(b, c));
                }
            }
        }
        let mut denom = vec![0.0; nt * nt];
        for a in 0..nt {
            let la = lambda_upper(up(a, 0), p);
            for b in 0..nt {
                denom[a * nt + b] = 1.0 + la + lambda_upper(up(b, 0), p);
            }
        }

        // grid cosines, descending in the node index (theta ascends)
        let grid_cos: Vec<f64> = (0..nt).map(|j| grid.theta(j).cos()).collect();
        let (gl_nodes, gl_weights) = gauss_legendre(PANEL_POINTS);

        let mut q_cos = Vec::with_capacity(nt);
        let mut q_weights = Vec::with_capacity(nt);
        let mut stencils = Vec::with_capacity(nt);
        for t in 0..nt {
            let split = grid_cos[t];
            let mut cs = Vec::with_capacity(2 * PANEL_POINTS);
            let mut ws = Vec::with_capacity(2 * PANEL_POINTS);
            for panel in [[0.0, split], [split, 1.0]] {
                let half = (panel[1] - panel[0]) / 2.0;
                for (x, w) in gl_nodes.iter().zip(&gl_weights) {
                    cs.push(panel[0] + half * (x + 1.0));
                    ws.push(w * half);
                }
            }
            let st: Vec<(usize, [f64; 3])> = cs.iter().map(|c| quadratic_stencil(&grid_cos, *c)).collect();
            q_cos.push(cs);
            q_weights.push(ws);
            stencils.push(st);
        }

        let nq = 2 * PANEL_POINTS;
        let phi = |m: usize| TWO_PI * m as f64 / np as f64;
        let mut v_in = Vec::with_capacity(nt);
        let mut v_out = Vec::with_capacity(nt);
        for t in 0..nt {
            let mut vi = vec![0.0; nq * np];
            let mut vo = vec![0.0; nq * np];
            for q in 0..nq {
                let theta_q = q_cos[t][q].clamp(-1.0, 1.0).acos();
                for m in 0..np {
                    let w_qm = Direction::from_spherical(theta_q, phi(m));
                    vi[q * np + m] = scalar_vertex(up(t, 0).neg(), w_qm.neg());
                    vo[q * np + m] = scalar_vertex(Direction::from_spherical(theta_q, 0.0), up(t, m));
                }
            }
            v_in.push(vi);
            v_out.push(vo);
        }

        PicardKernel { grid, v0, denom, q_weights, stencils, v_in, v_out }
    }

    /// The single-scatter initialization `rho_0 = v * S1`.
    pub(crate) fn initial(&self) -> Vec<f64> {
        let (nt, np) = (self.grid.n_theta(), self.grid.n_phi());
        let mut r = vec![0.0; nt * nt * np];
        for a in 0..nt {
            for b in 0..nt {
                let d = self.denom[a * nt + b];
                for c in 0..np {
                    let i = (a * nt + b) * np + c;
                    r[i] = self.v0[i] / d;
                }
            }
        }
        r
    }

    /// One Picard iterate; returns the new table and the max-norm update.
    pub(crate) fn step(&self, r: &[f64]) -> (Vec<f64>, f64) {
        let (nt, np) = (self.grid.n_theta(), self.grid.n_phi());
        let nq = 2 * PANEL_POINTS;
        let w_phi = TWO_PI / np as f64;

        // incoming-side scattering: integral over the downward intermediate
        // direction, rho looked up with the intermediate as new incidence
        let term1: Vec<Vec<f64>> = (0..nt)
            .into_par_iter()
            .map(|a| {
                // interpolate rho(-w(q,.), w_o(b,.)) onto a's quadrature nodes
                let mut rint = vec![0.0; nq * nt * np];
                for q in 0..nq {
                    let (j0, ws) = self.stencils[a][q];
                    for s in 0..3 {
                        let w = ws[s];
                        if w == 0.0 {
                            continue;
                        }
                        let src = &r[(j0 + s) * nt * np..(j0 + s + 1) * nt * np];
                        let dst = &mut rint[q * nt * np..(q + 1) * nt * np];
                        for (d, x) in dst.iter_mut().zip(src) {
                            *d += w * x;
                        }
                    }
                }
                let mut out = vec![0.0; nt * np];
                for b in 0..nt {
                    for q in 0..nq {
                        let qw = self.q_weights[a][q] * w_phi;
                        let row = &rint[(q * nt + b) * np..(q * nt + b + 1) * np];
                        for m in 0..np {
                            let coef = qw * self.v_in[a][q * np + m];
                            if coef == 0.0 {
                                continue;
                            }
                            let out_b = &mut out[b * np..(b + 1) * np];
                            for (c, o) in out_b.iter_mut().enumerate() {
                                let d = if c >= m { c - m } else { c + np - m };
                                *o += coef * row[d];
                            }
                        }
                    }
                }
                out
            })
            .collect();

        // outgoing-side scattering: integral over the upward intermediate
        // direction, rho looked up with the intermediate as new exit
        let term2: Vec<Vec<f64>> = (0..nt)
            .into_par_iter()
            .map(|b| {
                let mut out = vec![0.0; nt * np];
                let mut rr = vec![0.0; nq * np];
                for a in 0..nt {
                    for x in rr.iter_mut() {
                        *x = 0.0;
                    }
                    for q in 0..nq {
                        let (j0, ws) = self.stencils[b][q];
                        for s in 0..3 {
                            let w = ws[s];
                            if w == 0.0 {
                                continue;
                            }
                            let src = &r[(a * nt + j0 + s) * np..(a * nt + j0 + s + 1) * np];
                            let dst = &mut rr[q * np..(q + 1) * np];
                            for (d, x) in dst.iter_mut().zip(src) {
                                *d += w * x;
                            }
                        }
                    }
                    for q in 0..nq {
                        let qw = self.q_weights[b][q] * w_phi;
                        let vrow = &self.v_out[b][q * np..(q + 1) * np];
                        for m in 0..np {
                            let coef = qw * rr[q * np + m];
                            if coef == 0.0 {
                                continue;
                            }
                            let out_a = &mut out[a * np..(a + 1) * np];
                            for (c, o) in out_a.iter_mut().enumerate() {
                                let d = if c >= m { c - m } else { c + np - m };
                                *o += coef * vrow[d];
                            }
                        }
                    }
                }
                out
            })
            .collect();

        let mut new = vec![0.0; nt * nt * np];
        let mut residual = 0.0f64;
        for a in 0..nt {
            for b in 0..nt {
                let denom = self.denom[a * nt + b];
                for c in 0..np {
                    let i = (a * nt + b) * np + c;
                    let x = (self.v0[i] + term1[a][b * np + c] + term2[b][a * np + c]) / denom;
                    residual = residual.max((x - r[i]).abs());
                    new[i] = x;
                }
            }
        }
        (new, residual)
    }
}

/// Three-point Lagrange interpolation stencil for a value `c` on the grid's
/// descending cosine nodes (clamped extrapolation at the edges).
fn quadratic_stencil(grid_cos: &[f64], c: f64) -> (usize, [f64; 3]) {
    let n = grid_cos.len();
    // nodes descend; find the first index with value <= c
    let mut k = grid_cos.partition_point(|x| *x > c);
    // center a 3-node window on the bracket, clamped to the array
    k = k.saturating_sub(1).min(n - 3);
    let (x0, x1, x2) = (grid_cos[k], grid_cos[k + 1], grid_cos[k + 2]);
    let w0 = (c - x1) * (c - x2) / ((x0 - x1) * (x0 - x2));
    let w1 = (c - x0) * (c - x2) / ((x1 - x0) * (x1 - x2));
    let w2 = (c - x0) * (c - x1) / ((x2 - x0) * (x2 - x1));
    (k, [w0, w1, w2])
}

/// Solves the invariance-principle integral equation by Picard iteration
/// from the single-scatter term, stopping when the max-norm update drops
/// below `tol`.
pub fn solve_rho_fixedpoint(
    p: &MicrosurfaceParams,
    fr: &FresnelSpec,
    grid: DirectionGrid,
    tol: f64,
    max_iter: usize,
) -> Result<RhoTable> {
    if !p.is_isotropic() {
        return Err(Error::Domain("fixed-point solver requires isotropic roughness".into()));
    }
    if !fr.is_scalar() {
        return Err(Error::Domain("fixed-point solver requires a scalar Fresnel".into()));
    }
    if grid.n_theta() < 32 || grid.n_phi() < 64 {
        return Err(Error::Domain(format!(
            "fixed-point grid must be at least 32x64, got {}x{}",
            grid.n_theta(),
            grid.n_phi()
        )));
    }

    let kernel = PicardKernel::new(p, fr, grid);
    let mut values = kernel.initial();
    let nt = kernel.grid.n_theta();
    let snapshot = |v: &[f64]| (0..nt).map(|a| albedo_of(&kernel.grid, v, a)).collect::<Vec<f64>>();
    let mut furnace_history = vec![snapshot(&values)];

    for it in 1..=max_iter {
        let (new, residual) = kernel.step(&values);
        values = new;
        furnace_history.push(snapshot(&values));
        if residual < tol {
            return Ok(RhoTable { grid: kernel.grid, values, iterations: it, residual, furnace_history });
        }
        if it == max_iter {
            return Err(Error::NonConvergence { residual, iterations: it });
        }
    }
    unreachable!("max_iter >= 1 is enforced by the loop")
}

// ---------------------------------------------------------------------------
// Furnace test
// ---------------------------------------------------------------------------

/// Monte Carlo white furnace test: the mean weight of `sample()` draws with
/// F forced to 1 estimates the directional albedo, which must be 1 for a
/// lossless microsurface.
pub fn furnace_test(w_i: Direction, p: &MicrosurfaceParams, cfg: &EstimatorConfig) -> Result<f64> {
    if w_i.z <= 0.0 {
        return Err(Error::Domain(format!("w_i must be above the horizon, got z = {}", w_i.z)));
    }
    let n = cfg.sample_count;
    let chunk = 8192usize;
    let n_chunks = n.div_ceil(chunk);
    let sums: Vec<f64> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut s = 0.0;
            for idx in c * chunk..((c + 1) * chunk).min(n) {
                let mut rng = RngStream::new(cfg.seed ^ TAG_FURNACE, idx as u64);
                s += sample(w_i, p, &FresnelSpec::None, cfg, &mut rng)
                    .expect("w_i checked above")
                    .weight
                    .r;
            }
            s
        })
        .collect();
    Ok(sums.iter().sum::<f64>() / n as f64)
}

// ---------------------------------------------------------------------------
// Reflectance curves and inverse efficiency
// ---------------------------------------------------------------------------

/// One outgoing-angle bin of a reflectance curve.
#[derive(Debug, Clone)]
pub struct CurveBin {
    pub theta_lo: f64,
    pub theta_hi: f64,
    /// Polar angle at the bin's solid-angle midpoint.
    pub theta_center: f64,
    /// Mean of `rho(w_i, w_o)` over the bin's solid angle.
    pub mean: f64,
    /// Variance of the bin mean (sample variance / N).
    pub variance: f64,
    /// Wall time spent on this bin's samples.
    pub time_seconds: f64,
    pub samples: usize,
}

/// Per-theta_o binned reflectance with variance and timing.
#[derive(Debug, Clone)]
pub struct CurveReport {
    pub theta_i: f64,
    pub method: Method,
    pub bins: Vec<CurveBin>,
    /// Worker-thread count active while measuring (timings depend on it).
    pub threads: usize,
}

impl CurveReport {
    /// Solid-angle-weighted integral of the curve: the directional albedo.
    pub fn integral(&self) -> f64 {
        self.bins
            .iter()
            .map(|b| b.mean * TWO_PI * (b.theta_hi.cos() - b.theta_lo.cos()).abs())
            .sum()
    }
}

/// Measures mean reflectance per outgoing bin (equal-solid-angle bins in
/// cos(theta_o)) with `cfg.sample_count` samples per bin. Means and
/// variances are deterministic under a fixed seed; timings are not.
pub fn reflectance_curve(
    theta_i: f64,
    p: &MicrosurfaceParams,
    fr: &FresnelSpec,
    cfg: &EstimatorConfig,
    n_bins: usize,
    method: Method,
) -> Result<CurveReport> {
    if n_bins < 16 {
        return Err(Error::Domain(format!("n_bins must be at least 16, got {n_bins}")));
    }
    if !(0.0..PI / 2.0).contains(&theta_i) {
        return Err(Error::Domain(format!("theta_i must lie in [0, pi/2), got {theta_i}")));
    }
    let w_i = Direction::from_spherical(theta_i, 0.0);
    let n = cfg.sample_count;
    let model = match method {
        Method::Eval | Method::Bdpt => SegmentModel::PathCorrelated,
        Method::IndependentBounce => SegmentModel::IndependentBounce,
    };

    let bins: Vec<CurveBin> = (0..n_bins)
        .into_par_iter()
        .map(|i| {
            // bin i covers cos(theta_o) in [1 - (i+1)/n_bins, 1 - i/n_bins]
            let c_hi = 1.0 - i as f64 / n_bins as f64;
            let c_lo = 1.0 - (i + 1) as f64 / n_bins as f64;
            let start = Instant::now();
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for s in 0..n {
                let mut rng = RngStream::new(
                    cfg.seed ^ TAG_CURVE ^ method.tag(),
                    (i * n + s) as u64,
                );
                let z = c_lo + (c_hi - c_lo) * rng.next_f64();
                let phi = TWO_PI * rng.next_f64();
                let w_o = Direction::from_spherical(z.clamp(-1.0, 1.0).acos(), phi);
                let x = match method {
                    Method::Bdpt => eval_one_sample(w_i, w_o, p, fr, cfg, &mut rng, None),
                    _ => eval_one_sample(w_i, w_o, p, fr, cfg, &mut rng, Some(model)),
                }
                .r;
                sum += x;
                sum_sq += x * x;
            }
            let nf = n as f64;
            let mean = sum / nf;
            let var = if n > 1 { ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0) / nf } else { 0.0 };
            CurveBin {
                theta_lo: c_hi.acos(),
                theta_hi: c_lo.clamp(-1.0, 1.0).acos(),
                theta_center: ((c_lo + c_hi) / 2.0).acos(),
                mean,
                variance: var,
                time_seconds: start.elapsed().as_secs_f64(),
                samples: n,
            }
        })
        .collect();

    Ok(CurveReport { theta_i, method, bins, threads: rayon::current_num_threads() })
}

/// One bin of an inverse-efficiency comparison.
#[derive(Debug, Clone)]
pub struct EfficiencyRow {
    pub theta_center: f64,
    /// variance x time of report a / report b.
    pub inv_eff_a: f64,
    pub inv_eff_b: f64,
    /// `inv_eff_a / inv_eff_b` (lower than 1 means a is more efficient).
    pub ratio: f64,
}

/// Per-bin inverse efficiency (variance x time) of two curve reports with
/// identical binning.
pub fn inverse_efficiency(a: &CurveReport, b: &CurveReport) -> Result<Vec<EfficiencyRow>> {
    if a.bins.len() != b.bins.len() {
        return Err(Error::Mismatch(format!(
            "curve reports have different bin counts: {} vs {}",
            a.bins.len(),
            b.bins.len()
        )));
    }
    if (a.theta_i - b.theta_i).abs() > 1e-12 {
        return Err(Error::Mismatch("curve reports have different incidence angles".into()));
    }
    let mut rows = Vec::with_capacity(a.bins.len());
    for (ba, bb) in a.bins.iter().zip(&b.bins) {
        if (ba.theta_lo - bb.theta_lo).abs() > 1e-12 || (ba.theta_hi - bb.theta_hi).abs() > 1e-12 {
            return Err(Error::Mismatch("curve reports have different bin edges".into()));
        }
        let ia = ba.variance * ba.time_seconds;
        let ib = bb.variance * bb.time_seconds;
        rows.push(EfficiencyRow {
            theta_center: ba.theta_center,
            inv_eff_a: ia,
            inv_eff_b: ib,
            ratio: if ib > 0.0 { ia / ib } else { f64::INFINITY },
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// MSE convergence
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub n_samples: usize,
    /// MSE against the oracle for [Eval, Bdpt, IndependentBounce].
    pub mse: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Log-log slope of MSE vs N for [Eval, Bdpt, IndependentBounce].
    pub slopes: [f64; 3],
}

/// MSE of the three estimators against the fixed-point oracle over a query
/// set, for each sample count of the ladder, plus log-log slope fits.
pub fn mse_convergence(
    queries: &[(Direction, Direction)],
    p: &MicrosurfaceParams,
    fr: &FresnelSpec,
    base_cfg: &EstimatorConfig,
    ladder: &[usize],
    oracle: &RhoTable,
) -> Result<ConvergenceReport> {
    if queries.is_empty() || ladder.is_empty() {
        return Err(Error::Domain("mse_convergence needs queries and a sample ladder".into()));
    }
    if !fr.is_scalar() {
        return Err(Error::Mismatch("oracle comparisons require a scalar Fresnel".into()));
    }
    let truth: Vec<f64> = queries.iter().map(|(wi, wo)| oracle.lookup(*wi, *wo)).collect();
    let methods = [Method::Eval, Method::Bdpt, Method::IndependentBounce];

    let mut rows = Vec::with_capacity(ladder.len());
    for &n in ladder {
        let mut mse = [0.0f64; 3];
        for (mi, method) in methods.iter().enumerate() {
            let mut err2 = 0.0;
            for (qi, (wi, wo)) in queries.iter().enumerate() {
                let cfg = EstimatorConfig {
                    sample_count: n,
                    seed: mix(
                        base_cfg.seed
                            ^ TAG_MSE
                            ^ (n as u64).rotate_left(17)
                            ^ ((qi as u64) << 32)
                            ^ method.tag(),
                    ),
                    ..*base_cfg
                };
                let est = match method {
                    Method::Eval => crate::estimators::eval(*wi, *wo, p, fr, &cfg)?,
                    Method::Bdpt => crate::estimators::eval_bdpt(*wi, *wo, p, fr, &cfg)?,
                    Method::IndependentBounce => {
                        crate::estimators::eval_independent_bounce(*wi, *wo, p, fr, &cfg)?
                    }
                };
                let e = est.value.r - truth[qi];
                err2 += e * e;
            }
            mse[mi] = err2 / queries.len() as f64;
        }
        rows.push(ConvergenceRow { n_samples: n, mse });
    }

    let mut slopes = [0.0f64; 3];
    for mi in 0..3 {
        slopes[mi] = loglog_slope(rows.iter().map(|r| (r.n_samples as f64, r.mse[mi])));
    }
    Ok(ConvergenceReport { rows, slopes })
}

/// Least-squares slope of ln(y) against ln(x), skipping non-positive y.
fn loglog_slope(points: impl Iterator<Item = (f64, f64)>) -> f64 {
    let pts: Vec<(f64, f64)> =
        points.filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Spectrum;
    use crate::microfacet::NdfKind;
    use crate::pathsm::s1;

    #[test]
    fn grid_integrates_constant_to_two_pi() {
        for (nt, np) in [(32, 64), (16, 48), (128, 256)] {
            let grid = DirectionGrid::new(nt, np);
            let one = grid.integrate(|_| 1.0);
            assert!((one - TWO_PI).abs() < 1e-9, "{nt}x{np}: {one}");
        }
    }

    #[test]
    fn grid_integrates_cosine_to_pi() {
        let grid = DirectionGrid::new(32, 64);
        let c = grid.integrate(|w| w.z);
        assert!((c - PI).abs() < 1e-9, "{c}");
    }

    #[test]
    fn gauss_legendre_matches_known_5_point_rule() {
        let (nodes, weights) = gauss_legendre(5);
        assert!((nodes[2]).abs() < 1e-14);
        assert!((nodes[4] - 0.906179845938664).abs() < 1e-12);
        assert!((weights[2] - 128.0 / 225.0).abs() < 1e-12);
        assert!((weights.iter().sum::<f64>() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn picard_initial_is_single_scatter() {
        let p = MicrosurfaceParams::isotropic(NdfKind::Ggx, 1.0);
        let fr = FresnelSpec::None;
        let grid = DirectionGrid::new(32, 64);
        let kernel = PicardKernel::new(&p, &fr, grid);
        let r0 = kernel.initial();
        let g = &kernel.grid;
        for (a, b, c) in [(0, 0, 0), (5, 20, 13), (31, 7, 63), (16, 16, 32)] {
            let wi = g.direction(a, 0);
            let wo = g.direction(b, c);
            let expected = vertex_term(wi.neg(), wo, &p, &fr).r * s1(wi.neg(), wo, &p);
            let got = r0[(a * g.n_theta() + b) * g.n_phi() + c];
            assert_eq!(got, expected, "node ({a},{b},{c})");
        }
    }

    #[test]
    fn solved_table_conserves_energy_and_is_reciprocal() {
        let p = MicrosurfaceParams::isotropic(NdfKind::Ggx, 1.0);
        let table =
            solve_rho_fixedpoint(&p, &FresnelSpec::None, DirectionGrid::new(32, 64), 1e-6, 200)
                .unwrap();
        assert!(table.residual < 1e-6);
        assert!(table.iterations <= 200);

        // furnace at every incidence node
        for a in 0..table.grid().n_theta() {
            let alb = table.albedo(a);
            assert!((alb - 1.0).abs() < 5e-3, "node {a}: albedo {alb}");
        }

        // monotone energy build-up of the Picard iterates
        for a in [0, 10, 20, 31] {
            let mut prev = 0.0;
            for (it, snap) in table.furnace_history.iter().enumerate() {
                assert!(snap[a] >= prev - 1e-12, "iterate {it} decreased at node {a}");
                prev = snap[a];
            }
        }

        // reciprocity: rho(wi,wo)/cos(to) = rho(wo,wi)/cos(ti)
        let mut k = 3u64;
        let mut next = move || {
            k = k.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (k >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..200 {
            let wi = Direction::from_spherical(0.05 + next() * 1.4, next() * TWO_PI);
            let wo = Direction::from_spherical(0.05 + next() * 1.4, next() * TWO_PI);
            let fwd = table.lookup(wi, wo) / wo.z;
            let bwd = table.lookup(wo, wi) / wi.z;
            assert!(
                (fwd - bwd).abs() <= 0.01 * fwd.abs().max(bwd.abs()).max(1e-3),
                "{fwd} vs {bwd}"
            );
        }

        // all entries finite and nonnegative
        assert!(table.values.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn solver_rejects_bad_inputs() {
        let aniso = MicrosurfaceParams::new(NdfKind::Ggx, 0.3, 0.9);
        let grid = DirectionGrid::new(32, 64);
        assert!(solve_rho_fixedpoint(&aniso, &FresnelSpec::None, grid.clone(), 1e-6, 10).is_err());
        let iso = MicrosurfaceParams::isotropic(NdfKind::Ggx, 0.5);
        let rgb = FresnelSpec::schlick(Spectrum::new(0.9, 0.5, 0.1));
        assert!(solve_rho_fixedpoint(&iso, &rgb, grid, 1e-6, 10).is_err());
        let small = DirectionGrid::new(16, 32);
        assert!(solve_rho_fixedpoint(&iso, &FresnelSpec::None, small, 1e-6, 10).is_err());
    }

    #[test]
    fn nonconvergence_is_reported() {
        let p = MicrosurfaceParams::isotropic(NdfKind::Ggx, 1.0);
        let err =
            solve_rho_fixedpoint(&p, &FresnelSpec::None, DirectionGrid::new(32, 64), 1e-12, 2)
                .unwrap_err();
        match err {
            Error::NonConvergence { residual, iterations } => {
                assert!(residual > 0.0);
                assert_eq!(iterations, 2);
            }
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }

    #[test]
    fn furnace_quick_checks() {
        let p = MicrosurfaceParams::isotropic(NdfKind::Ggx, 0.1);
        let cfg = EstimatorConfig::new(100_000, 21);
        let w_i = Direction::from_spherical(30f64.to_radians(), 0.0);
        let alb = furnace_test(w_i, &p, &cfg).unwrap();
        assert!((alb - 1.0).abs() < 0.01, "albedo {alb}");

        // single-bounce truncation loses energy
        let rough = MicrosurfaceParams::isotropic(NdfKind::Ggx, 1.0);
        let cfg1 = EstimatorConfig::new(100_000, 21).with_max_bounces(1);
        let alb1 = furnace_test(w_i, &rough, &cfg1).unwrap();
        assert!(alb1 < 0.95, "truncated albedo {alb1} should be well below 1");
    }

    #[test]
    fn curve_integrates_to_albedo_and_is_deterministic() {
        let p = MicrosurfaceParams::isotropic(NdfKind::Ggx, 1.0);
        let cfg = EstimatorConfig::new(2000, 5);
        let theta_i = 45f64.to_radians();
        let a = reflectance_curve(theta_i, &p, &FresnelSpec::None, &cfg, 16, Method::Eval).unwrap();
        let b = reflectance_curve(theta_i, &p, &FresnelSpec::None, &cfg, 16, Method::Eval).unwrap();
        assert!((a.integral() - 1.0).abs() < 0.03, "integral {}", a.integral());
        for (x, y) in a.bins.iter().zip(&b.bins) {
            assert_eq!(x.mean, y.mean);
            assert_eq!(x.variance, y.variance);
        }
        assert!(reflectance_curve(theta_i, &p, &FresnelSpec::None, &cfg, 8, Method::Eval).is_err());
    }

    #[test]
    fn inverse_efficiency_contract() {
        let p = MicrosurfaceParams::isotropic(NdfKind::Ggx, 0.5);
        let cfg = EstimatorConfig::new(500, 9);
        let theta_i = 30f64.to_radians();
        let a = reflectance_curve(theta_i, &p, &FresnelSpec::None, &cfg, 16, Method::Eval).unwrap();
        let rows = inverse_efficiency(&a, &a).unwrap();
        for r in &rows {
            assert!((r.ratio - 1.0).abs() < 1e-12 || !r.ratio.is_finite());
        }
        let other =
            reflectance_curve(40f64.to_radians(), &p, &FresnelSpec::None, &cfg, 16, Method::Eval)
                .unwrap();
        assert!(inverse_efficiency(&a, &other).is_err());
    }

    #[test]
    fn convergence_report_plumbing() {
        let p = MicrosurfaceParams::isotropic(NdfKind::Ggx, 1.0);
        let oracle =
            solve_rho_fixedpoint(&p, &FresnelSpec::None, DirectionGrid::new(32, 64), 1e-6, 200)
                .unwrap();
        let queries = [(
            Direction::from_spherical(45f64.to_radians(), 0.0),
            Direction::from_spherical(30f64.to_radians(), PI),
        )];
        let cfg = EstimatorConfig::new(1, 77);
        let report =
            mse_convergence(&queries, &p, &FresnelSpec::None, &cfg, &[1, 4, 16], &oracle).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert_eq!(report.rows[0].n_samples, 1);
        for row in &report.rows {
            for m in row.mse {
                assert!(m.is_finite() && m >= 0.0);
            }
        }
    }
}
