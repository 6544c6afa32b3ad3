//! Unbiased Monte Carlo BRDF estimators over the position-free path space.
//!
//! All estimators share the same direction walk: starting from the incident
//! direction, each step draws a microfacet normal from the visible normals
//! of the current propagation direction and mirror-reflects. `eval` connects
//! every walk prefix deterministically to the query outgoing direction (one
//! estimate per bounce order); `eval_bdpt` additionally grows a second
//! subpath from the outgoing side and combines all split points with
//! balance-heuristic MIS; `sample` performs the exit-test walk of the
//! sampling procedure. `eval_independent_bounce` reweights the same walk
//! with per-bounce (uncorrelated) shadowing-masking to reproduce the biased
//! independent-bounce model.

use crate::fresnel::FresnelSpec;
use crate::geom::{Direction, Spectrum};
use crate::microfacet::{
    lambda_upper, ndf_eval, projected_area, sample_visible_normal, MicrosurfaceParams,
};
use crate::pathsm::{contribution_unchecked, transition_pdf, vertex_term, SegmentTable};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const CHUNK: usize = 4096;

// domain separation tags for deriving per-operation rng streams
const TAG_EVAL: u64 = 0x45564c5f50545f31; // "EVL_PT_1"
const TAG_BDPT: u64 = 0x424450545f5f5f31;

/// Deterministic, splittable random stream.
///
/// Identical `(seed, stream index)` pairs yield identical sequences no
/// matter which thread consumes them, which is what makes every estimator
/// reproducible independent of the worker count.
#[derive(Debug, Clone)]
pub struct RngStream(ChaCha8Rng);

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> RngStream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream(rng)
    }

    pub fn next_f64(&mut self) -> f64 {
        self.0.gen::<f64>()
    }
}

/// Sampling and termination knobs shared by the estimators.
#[derive(Debug, Clone, Copy)]
pub struct EstimatorConfig {
    pub sample_count: usize,
    pub max_bounces: usize,
    pub rr_start: usize,
    pub seed: u64,
}

impl EstimatorConfig {
    /// `max_bounces` defaults to 16 and Russian roulette starts at bounce 6.
    pub fn new(sample_count: usize, seed: u64) -> EstimatorConfig {
        EstimatorConfig { sample_count: sample_count.max(1), max_bounces: 16, rr_start: 6, seed }
    }

    pub fn with_max_bounces(mut self, max_bounces: usize) -> EstimatorConfig {
        self.max_bounces = max_bounces.max(1);
        self
    }

    pub fn with_rr_start(mut self, rr_start: usize) -> EstimatorConfig {
        self.rr_start = rr_start.max(2);
        self
    }
}

/// Estimate of `rho(w_i, w_o)` (cosine included) with per-bounce breakdown.
#[derive(Debug, Clone)]
pub struct EvalResult {
    /// Mean estimate; equals the sum of `per_bounce` entries.
    pub value: Spectrum,
    /// Per-channel sample variance of the single-sample estimates.
    pub variance: Spectrum,
    /// Mean contribution of each bounce order, `per_bounce[k-1]` = order k.
    pub per_bounce: Vec<Spectrum>,
    pub sample_count: usize,
}

impl EvalResult {
    /// Standard error of the mean, per channel.
    pub fn std_error(&self) -> Spectrum {
        (self.variance / self.sample_count as f64).sqrt()
    }

    /// Contribution-weighted mean bounce order.
    pub fn mean_bounces(&self) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, s) in self.per_bounce.iter().enumerate() {
            let w = s.mean().abs();
            num += (i + 1) as f64 * w;
            den += w;
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }
}

/// One draw from the BRDF sampling procedure.
#[derive(Debug, Clone, Copy)]
pub struct SampleResult {
    pub w_o: Direction,
    /// Path contribution divided by the full walk PDF (VNDF steps, exit
    /// probabilities); its mean over many draws is the directional albedo.
    pub weight: Spectrum,
    pub bounces: usize,
    /// Set when the walk exceeded `max_bounces` (weight is zero then).
    pub truncated: bool,
}

/// Which path shadowing-masking model weights the walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SegmentModel {
    /// The recursive whole-path segment term.
    PathCorrelated,
    /// Per-bounce height-correlated G2 product (the biased
    /// independent-bounce assumption).
    IndependentBounce,
}

fn check_above_horizon(name: &str, w: Direction) -> Result<()> {
    if w.z <= 0.0 {
        return Err(Error::Domain(format!("{name} must be above the horizon, got z = {}", w.z)));
    }
    Ok(())
}

/// Unbiased estimate of `rho(w_i, w_o)` by unidirectional walking with a
/// deterministic connection of every prefix to `w_o`.
pub fn eval(
    w_i: Direction,
    w_o: Direction,
    p: &MicrosurfaceParams,
    fr: &FresnelSpec,
    cfg: &EstimatorConfig,
) -> Result<EvalResult> {
    eval_with_model(w_i, w_o, p, fr, cfg, SegmentModel::PathCorrelated)
}

/// Same walk as [`eval`] but weighted with per-bounce shadowing-masking.
/// Converges to a different (biased) value for bounce orders >= 2.
pub fn eval_independent_bounce(
    w_i: Direction,
    w_o: Direction,
    p: &MicrosurfaceParams,
    fr: &FresnelSpec,
    cfg: &EstimatorConfig,
) -> Result<EvalResult> {
    eval_with_model(w_i, w_o, p, fr, cfg, SegmentModel::IndependentBounce)
}

pub(crate) fn eval_with_model(
    w_i: Direction,
    w_o: Direction,
    p: &MicrosurfaceParams,
    fr: &FresnelSpec,
    cfg: &EstimatorConfig,
    model: SegmentModel,
) -> Result<EvalResult> {
    check_above_horizon("w_i", w_i)?;
    check_above_horizon("w_o", w_o)?;
    let d0 = w_i.neg();
    let k1 = single_bounce(d0, w_o, p, fr);
    run_sampled(cfg, k1, |idx, acc| {
        let mut rng = RngStream::new(cfg.seed ^ TAG_EVAL, idx as u64);
        walk_connected(d0, w_o, p, fr, cfg, &mut rng, model, acc);
    })
}

/// Single-bounce term, shared (and identical) across all estimators.
fn single_bounce(d0: Direction, w_o: Direction, p: &MicrosurfaceParams, fr: &FresnelSpec) -> Spectrum {
    contribution_unchecked(&[d0, w_o], p, fr)
}

/// Chunked deterministic parallel sample loop. `body` fills `acc[k-1]` with
/// the order-k contribution of one sample (orders >= 2).
fn run_sampled(
    cfg: &EstimatorConfig,
    k1: Spectrum,
    body: impl Fn(usize, &mut [Spectrum]) + Sync,
) -> Result<EvalResult> {
    let n = cfg.sample_count;
    let kmax = cfg.max_bounces;
    let n_chunks = n.div_ceil(CHUNK);

    struct ChunkAcc {
        sum: Spectrum,
        sum_sq: Spectrum,
        per_bounce: Vec<Spectrum>,
    }

    let chunks: Vec<ChunkAcc> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = ((c + 1) * CHUNK).min(n);
            let mut acc = ChunkAcc {
                sum: Spectrum::ZERO,
                sum_sq: Spectrum::ZERO,
                per_bounce: vec![Spectrum::ZERO; kmax],
            };
            let mut scratch = vec![Spectrum::ZERO; kmax];
            for idx in lo..hi {
                for s in scratch.iter_mut() {
                    *s = Spectrum::ZERO;
                }
                body(idx, &mut scratch);
                let mut total = Spectrum::ZERO;
                for (k, s) in scratch.iter().enumerate() {
                    acc.per_bounce[k] += *s;
                    total += *s;
                }
                acc.sum += total;
                acc.sum_sq += total * total;
            }
            acc
        })
        .collect();

    // sequential reduction in chunk order keeps results thread-count independent
    let mut sum = Spectrum::ZERO;
    let mut sum_sq = Spectrum::ZERO;
    let mut per_bounce = vec![Spectrum::ZERO; kmax];
    for c in &chunks {
        sum += c.sum;
        sum_sq += c.sum_sq;
        for (k, s) in c.per_bounce.iter().enumerate() {
            per_bounce[k] += *s;
        }
    }

    let nf = n as f64;
    for s in per_bounce.iter_mut() {
        *s = *s / nf;
    }
    per_bounce[0] = k1;
    let mut value = Spectrum::ZERO;
    for s in &per_bounce {
        value += *s;
    }
    // sample variance of the stochastic part (the k=1 term is deterministic)
    let variance = if n > 1 {
        let mean = sum / nf;
        let var = (sum_sq + (mean * mean) * (-nf)) / (nf - 1.0);
        Spectrum::new(var.r.max(0.0), var.g.max(0.0), var.b.max(0.0))
    } else {
        Spectrum::ZERO
    };
    Ok(EvalResult { value, variance, per_bounce, sample_count: n })
}

/// One direction-walk step: draws a visible normal of the current
/// propagation direction and mirror-reflects. Returns the new direction and
/// its solid-angle transition density.
fn walk_step(
    d_prev: Direction,
    p: &MicrosurfaceParams,
    rng: &mut RngStream,
) -> Option<(Direction, f64)> {
    let m = sample_visible_normal(d_prev.neg(), p, [rng.next_f64(), rng.next_f64()])?;
    let area = projected_area(d_prev.neg(), p);
    if area <= 0.0 {
        return None;
    }
    let q = ndf_eval(m, p) / (4.0 * area);
    if !(q > 0.0) {
        return None;
    }
    Some((d_prev.reflect(m), q))
}

/// Per-bounce height-correlated G2 of the independent-bounce model: each
/// Lambda participates only when its direction crosses the surface.
fn bounce_g2(d_in: Direction, d_out: Direction, p: &MicrosurfaceParams) -> f64 {
    let li = if d_in.z < 0.0 { lambda_upper(d_in.neg(), p) } else { 0.0 };
    let lo = if d_out.z > 0.0 { lambda_upper(d_out, p) } else { 0.0 };
    1.0 / (1.0 + li + lo)
}

#[allow(clippy::too_many_arguments)]
fn walk_connected(
    d0: Direction,
    w_o: Direction,
    p: &MicrosurfaceParams,
    fr: &FresnelSpec,
    cfg: &EstimatorConfig,
    rng: &mut RngStream,
    model: SegmentModel,
    acc: &mut [Spectrum],
) {
    let mut d_prev = d0;
    let mut vert_prod = Spectrum::ONE;
    let mut bounce_prod = 1.0;
    let mut pdf = 1.0;
    let mut table: Option<SegmentTable> = None;

    for j in 1..cfg.max_bounces {
        if j > cfg.rr_start {
            // throughput-proportional survival; unbiased since the pdf keeps the factor
            let survival = (vert_prod.max_channel() / pdf).min(1.0);
            if !(survival > 0.0) || rng.next_f64() >= survival {
                return;
            }
            pdf *= survival;
        }
        let Some((d_j, q)) = walk_step(d_prev, p, rng) else { return };
        pdf *= q;
        vert_prod = vert_prod * vertex_term(d_prev, d_j, p, fr);
        if vert_prod == Spectrum::ZERO {
            return;
        }
        match &mut table {
            None => table = Some(SegmentTable::new(d0, d_j, p)),
            Some(t) => t.push(d_j, p),
        }
        if model == SegmentModel::IndependentBounce {
            bounce_prod *= bounce_g2(d_prev, d_j, p);
        }

        // connect the prefix to w_o: one estimate of bounce order j+1
        let seg = match model {
            SegmentModel::PathCorrelated => {
                table.as_ref().expect("table initialized").value_if_extended(w_o, p)
            }
            SegmentModel::IndependentBounce => bounce_prod * bounce_g2(d_j, w_o, p),
        };
        if seg > 0.0 {
            let f = vert_prod * vertex_term(d_j, w_o, p, fr) * seg;
            acc[j] += f / pdf;
        }
        d_prev = d_j;
    }
}

/// Bidirectional estimate: subpaths are grown from both query directions
/// and every split point of every bounce order is combined with the balance
/// heuristic.
pub fn eval_bdpt(
    w_i: Direction,
    w_o: Direction,
    p: &MicrosurfaceParams,
    fr: &FresnelSpec,
    cfg: &EstimatorConfig,
) -> Result<EvalResult> {
    check_above_horizon("w_i", w_i)?;
    check_above_horizon("w_o", w_o)?;
    let d0 = w_i.neg();
    let k1 = single_bounce(d0, w_o, p, fr);
    let kmax = cfg.max_bounces;
    run_sampled(cfg, k1, |idx, acc| {
        let mut rng = RngStream::new(cfg.seed ^ TAG_BDPT, idx as u64);
        bdpt_walk(d0, w_o, p, fr, kmax, &mut rng, acc);
    })
}

fn bdpt_walk(
    d0: Direction,
    w_o: Direction,
    p: &MicrosurfaceParams,
    fr: &FresnelSpec,
    kmax: usize,
    rng: &mut RngStream,
    acc: &mut [Spectrum],
) {
    // light subpath from the incident side
    let (light, q_light) = grow_subpath(d0, p, kmax - 1, rng);
    // "eye" subpath from the outgoing side (reciprocal walk)
    let (eye, q_eye) = grow_subpath(w_o.neg(), p, kmax - 1, rng);

    let mut dirs: Vec<Direction> = Vec::with_capacity(kmax + 1);
    let mut qf: Vec<f64> = Vec::with_capacity(kmax);
    let mut qb: Vec<f64> = Vec::with_capacity(kmax);
    for k in 2..=kmax {
        for s in 0..k {
            let t = k - 1 - s;
            if s >= light.len() || t >= eye.len() {
                continue;
            }
            // assemble (d_0, l_1..l_s, -e_t..-e_1, w_o)
            dirs.clear();
            dirs.extend_from_slice(&light[..=s]);
            for i in (1..=t).rev() {
                dirs.push(eye[i].neg());
            }
            dirs.push(w_o);
            debug_assert_eq!(dirs.len(), k + 1);

            let f = contribution_unchecked(&dirs, p, fr);
            if f == Spectrum::ZERO {
                continue;
            }
            // balance-heuristic MIS over every split point of this path
            qf.clear();
            qb.clear();
            for i in 1..k {
                qf.push(transition_pdf(dirs[i - 1], dirs[i], p));
                qb.push(transition_pdf(dirs[i + 1].neg(), dirs[i].neg(), p));
            }
            // prefix products: p_{s'} = prod(qf[..s']) * prod(qb[s'..])
            let mut denom = 0.0;
            let mut p_own = 0.0;
            for sp in 0..k {
                let mut prod = 1.0;
                for i in 0..sp {
                    prod *= qf[i];
                }
                for i in sp..k - 1 {
                    prod *= qb[i];
                }
                denom += prod;
                if sp == s {
                    p_own = prod;
                }
            }
            if !(p_own > 0.0) || !(denom > 0.0) {
                continue;
            }
            // the actual sampling density of this realization equals p_own,
            // but rebuild it from the recorded step pdfs for exactness
            let mut p_actual = 1.0;
            for i in 0..s {
                p_actual *= q_light[i];
            }
            for i in 0..t {
                p_actual *= q_eye[i];
            }
            let mis = p_own / denom;
            acc[k - 1] += f * (mis / p_actual);
        }
    }
}

/// Single-sample estimate of rho: the deterministic single-bounce term plus
/// one walk. `model` selects the connected walk variant; `None` runs the
/// bidirectional estimator instead.
pub(crate) fn eval_one_sample(
    w_i: Direction,
    w_o: Direction,
    p: &MicrosurfaceParams,
    fr: &FresnelSpec,
    cfg: &EstimatorConfig,
    rng: &mut RngStream,
    model: Option<SegmentModel>,
) -> Spectrum {
    let d0 = w_i.neg();
    let mut acc = vec![Spectrum::ZERO; cfg.max_bounces];
    match model {
        Some(m) => walk_connected(d0, w_o, p, fr, cfg, rng, m, &mut acc),
        None => bdpt_walk(d0, w_o, p, fr, cfg.max_bounces, rng, &mut acc),
    }
    let mut total = single_bounce(d0, w_o, p, fr);
    for s in &acc {
        total += *s;
    }
    total
}

/// Grows a phase-function walk of up to `max_steps` sampled directions.
/// Returns the direction list (index 0 = start) and per-step densities.
fn grow_subpath(
    start: Direction,
    p: &MicrosurfaceParams,
    max_steps: usize,
    rng: &mut RngStream,
) -> (Vec<Direction>, Vec<f64>) {
    let mut dirs = vec![start];
    let mut qs = Vec::with_capacity(max_steps);
    let mut d_prev = start;
    for _ in 0..max_steps {
        let Some((d, q)) = walk_step(d_prev, p, rng) else { break };
        dirs.push(d);
        qs.push(q);
        d_prev = d;
    }
    (dirs, qs)
}

/// Draws an outgoing direction by the exit-test walk: sample the visible
/// normals, reflect, and leave the microgeometry with probability `G1` once
/// the propagation direction points upwards.
pub fn sample(
    w_i: Direction,
    p: &MicrosurfaceParams,
    fr: &FresnelSpec,
    cfg: &EstimatorConfig,
    rng: &mut RngStream,
) -> Result<SampleResult> {
    check_above_horizon("w_i", w_i)?;
    let mut dirs = vec![w_i.neg()];
    let mut pdf = 1.0;
    let mut d_prev = dirs[0];

    for j in 1..=cfg.max_bounces {
        let Some((d_j, q)) = walk_step(d_prev, p, rng) else {
            break;
        };
        pdf *= q;
        dirs.push(d_j);
        if d_j.z > 0.0 {
            let g = 1.0 / (1.0 + lambda_upper(d_j, p));
            if rng.next_f64() < g {
                pdf *= g;
                let weight = contribution_unchecked(&dirs, p, fr) / pdf;
                return Ok(SampleResult { w_o: d_j, weight, bounces: j, truncated: false });
            }
            pdf *= 1.0 - g;
        }
        d_prev = d_j;
    }
    Ok(SampleResult { w_o: Direction::UP, weight: Spectrum::ZERO, bounces: cfg.max_bounces, truncated: true })
}

/// MIS proxy PDF: an even mixture of the single-bounce visible-normal
/// reflection density and a cosine hemisphere lobe, floored at 1e-6.
///
/// The raw reflection density leaks mass below the horizon, so it is
/// renormalized by its upper-hemisphere mass to keep the mixture a proper
/// density over outgoing directions.
pub fn pdf(w_i: Direction, w_o: Direction, p: &MicrosurfaceParams) -> f64 {
    if w_i.z <= 0.0 || w_o.z <= 0.0 {
        return 0.0;
    }
    let mass = crate::validation::DirectionGrid::new(32, 64)
        .integrate(|w| transition_pdf(w_i.neg(), w, p));
    let single = transition_pdf(w_i.neg(), w_o, p) / mass.max(1e-12);
    let cosine = w_o.z / std::f64::consts::PI;
    (0.5 * single + 0.5 * cosine).max(1e-6)
}
