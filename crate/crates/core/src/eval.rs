//! Ground truth for the mechanism: exhaustive and sampled cut-error sweeps,
//! an independent solver for the capped-simplex projection, KKT checking,
//! exact and finite-difference gradients of `f`, and a reference solver for
//! tiny inner SDPs.

use std::collections::HashSet;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{
    dense_weights, derivative_pairing, pairs, triangle_adjacency, wedge_weights, CutSpec, GraphError,
    PairWeights, WeightedGraph,
};
use crate::sdp::{f_triangle_max, inner_sdp_solve, SaddleContext, SdpError, SdpPoint, SolverOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error("exhaustive sweep over {n} vertices exceeds the budget of {max} vertices")]
    ExhaustiveBudget { n: usize, max: usize },
    #[error("requested {requested} distinct bipartitions but only {available} exist")]
    SampleBudget { requested: u64, available: u64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Largest vertex count accepted by the exhaustive sweep (2^21 cuts).
pub const EXHAUSTIVE_MAX_N: usize = 22;

// =============================================================================
// Cut error
// =============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutMode {
    /// Every bipartition.
    Exhaustive,
    /// `samples` distinct uniform bipartitions drawn with `seed`.
    Sampled { samples: u64, seed: u64 },
}

impl CutMode {
    /// Default number of sampled bipartitions.
    pub const DEFAULT_SAMPLES: u64 = 100_000;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutErrorResult {
    pub max_error: f64,
    pub argmax_cut: CutSpec,
    pub mode: CutMode,
    pub evaluated_cuts: u64,
}

fn check_sizes<A: PairWeights + ?Sized, B: PairWeights + ?Sized>(a: &A, b: &B) -> Result<usize> {
    if a.n() != b.n() {
        return Err(GraphError::SizeMismatch(a.n(), b.n()).into());
    }
    if a.n() < 2 {
        return Err(EvalError::InvalidInput("a bipartition needs at least 2 vertices".into()));
    }
    Ok(a.n())
}

/// Row-major `A(g1) - A(g2)`.
fn difference_matrix<A: PairWeights + ?Sized, B: PairWeights + ?Sized>(g1: &A, g2: &B) -> Vec<f64> {
    let diff = triangle_adjacency(g1).into_matrix() - triangle_adjacency(g2).matrix();
    let n = diff.nrows();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = diff[(i, j)];
        }
    }
    out
}

/// `1/2 sum_{i in S, j notin S} delta_ij` for the bipartition in `mask`.
fn masked_cut(delta: &[f64], n: usize, mask: u64) -> f64 {
    let mut total = 0.0;
    for i in (0..n).filter(|i| mask >> i & 1 == 1) {
        for j in (0..n).filter(|j| mask >> j & 1 == 0) {
            total += delta[i * n + j];
        }
    }
    0.5 * total
}

/// Maximum over bipartitions of the absolute triangle-cut difference of two
/// graphs (either may carry signed weights).
pub fn max_cut_error<A: PairWeights + ?Sized, B: PairWeights + ?Sized>(
    g1: &A,
    g2: &B,
    mode: CutMode,
) -> Result<CutErrorResult> {
    let n = check_sizes(g1, g2)?;
    let delta = difference_matrix(g1, g2);
    let (max_error, mask, evaluated_cuts) = match mode {
        CutMode::Exhaustive => {
            if n > EXHAUSTIVE_MAX_N {
                return Err(EvalError::ExhaustiveBudget { n, max: EXHAUSTIVE_MAX_N });
            }
            let (mask, count) = gray_sweep(&delta, n);
            (masked_cut(&delta, n, mask).abs(), mask, count)
        }
        CutMode::Sampled { samples, seed } => {
            let (value, mask) = sampled_sweep(&delta, n, samples, seed)?;
            (value, mask, samples)
        }
    };
    Ok(CutErrorResult { max_error, argmax_cut: CutSpec::from_mask(n, mask)?, mode, evaluated_cuts })
}

/// Reference sweep evaluating every bipartition from scratch. Same cut order
/// and result as the exhaustive mode of [`max_cut_error`].
pub fn max_cut_error_naive<A: PairWeights + ?Sized, B: PairWeights + ?Sized>(
    g1: &A,
    g2: &B,
) -> Result<CutErrorResult> {
    let n = check_sizes(g1, g2)?;
    if n > EXHAUSTIVE_MAX_N {
        return Err(EvalError::ExhaustiveBudget { n, max: EXHAUSTIVE_MAX_N });
    }
    let delta = difference_matrix(g1, g2);
    let mut best = (f64::NEG_INFINITY, 0u64);
    let half = 1u64 << (n - 1);
    for mask in 1..half {
        let v = masked_cut(&delta, n, mask).abs();
        if v > best.0 {
            best = (v, mask);
        }
    }
    Ok(CutErrorResult {
        max_error: best.0,
        argmax_cut: CutSpec::from_mask(n, best.1)?,
        mode: CutMode::Exhaustive,
        evaluated_cuts: half - 1,
    })
}

fn gray(k: u64) -> u64 {
    k ^ (k >> 1)
}

/// Gray-code sweep over the `2^(n-1) - 1` bipartitions with vertex `n - 1`
/// outside `S`. Each step moves one vertex and updates the cut in `O(n)`.
/// Returns the argmax mask (lowest Gray index on ties) and the cut count.
fn gray_sweep(delta: &[f64], n: usize) -> (u64, u64) {
    let total = 1u64 << (n - 1);
    let rowsum: Vec<f64> = (0..n).map(|v| delta[v * n..(v + 1) * n].iter().sum()).collect();
    const CHUNK: u64 = 1 << 14;
    let chunks: Vec<(u64, u64)> =
        (0..total.div_ceil(CHUNK)).map(|c| ((c * CHUNK).max(1), ((c + 1) * CHUNK).min(total))).collect();

    let best = chunks
        .par_iter()
        .filter(|(lo, hi)| lo < hi)
        .map(|&(lo, hi)| {
            let mut mask = gray(lo - 1);
            let mut into_s = vec![0.0; n];
            for (j, r) in into_s.iter_mut().enumerate() {
                *r = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| delta[j * n + i]).sum();
            }
            let mut cut = masked_cut(delta, n, mask);
            let mut best = (f64::NEG_INFINITY, u64::MAX, 0u64);
            for k in lo..hi {
                let v = k.trailing_zeros() as usize;
                let sign = if mask >> v & 1 == 1 {
                    cut += 0.5 * (2.0 * into_s[v] - rowsum[v]);
                    -1.0
                } else {
                    cut += 0.5 * (rowsum[v] - 2.0 * into_s[v]);
                    1.0
                };
                for (j, r) in into_s.iter_mut().enumerate() {
                    *r += sign * delta[j * n + v];
                }
                mask ^= 1 << v;
                let value = cut.abs();
                if value > best.0 {
                    best = (value, k, mask);
                }
            }
            best
        })
        .reduce(
            || (f64::NEG_INFINITY, u64::MAX, 0),
            |a, b| {
                if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                    b
                } else {
                    a
                }
            },
        );
    (best.2, total - 1)
}

/// `samples` distinct uniform bipartitions: every vertex joins `S` by a fair
/// coin, sides are canonicalized so that vertex `n - 1` lies outside `S`,
/// and trivial splits are rejected.
fn sampled_sweep(delta: &[f64], n: usize, samples: u64, seed: u64) -> Result<(f64, u64)> {
    if n > 64 {
        return Err(EvalError::InvalidInput("sampled mode supports at most 64 vertices".into()));
    }
    let available = if n >= 65 { u64::MAX } else { (1u64 << (n - 1)) - 1 };
    if samples == 0 || samples > available {
        return Err(EvalError::SampleBudget { requested: samples, available });
    }
    let full = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(samples as usize);
    let mut masks = Vec::with_capacity(samples as usize);
    while (masks.len() as u64) < samples {
        let mut mask = rng.random::<u64>() & full;
        if mask >> (n - 1) & 1 == 1 {
            mask = !mask & full;
        }
        if mask != 0 && seen.insert(mask) {
            masks.push(mask);
        }
    }
    let best = masks
        .par_iter()
        .enumerate()
        .map(|(i, &m)| (masked_cut(delta, n, m).abs(), i, m))
        .reduce(
            || (f64::NEG_INFINITY, usize::MAX, 0),
            |a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
        );
    Ok((best.0, best.2))
}

/// Largest change of the maximum bipartition cut difference under a single
/// pair weight change of magnitude one (decreases only where the weight stays
/// nonnegative). Brute force; meant for `n <= 7`.
pub fn brute_force_local_sensitivity(g: &WeightedGraph) -> Result<f64> {
    let mut best: f64 = 0.0;
    for (idx, _) in pairs(g.n()).enumerate() {
        for step in [1.0, -1.0] {
            let mut w = g.weights().to_vec();
            w[idx] += step;
            if w[idx] < 0.0 {
                continue;
            }
            let neighbor = WeightedGraph::new(g.n(), w)?;
            best = best.max(max_cut_error_naive(g, &neighbor)?.max_error);
        }
    }
    Ok(best)
}

// =============================================================================
// Capped-simplex oracle and KKT check
// =============================================================================

/// Minimizer of `sum w ln w - w (1 + ln y)` over `{w >= 0 : sum w = total,
/// w <= caps}` by bisection on the multiplier `mu` of the sum constraint,
/// with `w_e = min(y_e exp(-mu), u_e)`. Infinite caps are allowed.
pub fn brute_force_md_oracle(y: &[f64], total: f64, caps: &[f64]) -> Result<Vec<f64>> {
    if y.len() != caps.len() || y.is_empty() {
        return Err(EvalError::InvalidInput("y and caps must be nonempty and of equal length".into()));
    }
    if y.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(EvalError::InvalidInput("y must be positive and finite".into()));
    }
    if caps.iter().any(|u| u.is_nan() || *u < 0.0) || !(total >= 0.0 && total.is_finite()) {
        return Err(EvalError::InvalidInput("caps and total must be nonnegative".into()));
    }
    let cap_sum: f64 = caps.iter().sum();
    if cap_sum < total * (1.0 - 1e-12) {
        return Err(EvalError::InvalidInput(format!("caps sum {cap_sum} below total {total}")));
    }

    let mass = |mu: f64| -> f64 { y.iter().zip(caps).map(|(yi, ui)| (yi * (-mu).exp()).min(*ui)).sum() };
    let y_sum: f64 = y.iter().sum();
    if total == 0.0 {
        return Ok(vec![0.0; y.len()]);
    }
    // At mu_hi nothing exceeds its uncapped share, so mass(mu_hi) <= total.
    // At mu_lo every finite cap binds and every uncapped coordinate alone
    // carries the total, so mass(mu_lo) >= total.
    let mut hi = (y_sum / total).ln();
    let mut lo = y
        .iter()
        .zip(caps)
        .map(|(yi, ui)| if ui.is_finite() { yi.ln() - ui.ln() } else { yi.ln() - total.ln() })
        .fold(hi, f64::min);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass(mid) >= total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mu = hi;
    // Fix the capped set at the converged multiplier and split the remaining
    // mass exactly among the free coordinates.
    let capped: Vec<bool> = y.iter().zip(caps).map(|(yi, ui)| yi * (-mu).exp() >= *ui).collect();
    let capped_mass: f64 = caps.iter().zip(&capped).filter(|(_, c)| **c).map(|(u, _)| *u).sum();
    let free_y: f64 = y.iter().zip(&capped).filter(|(_, c)| !**c).map(|(v, _)| *v).sum();
    let free_mass = (total - capped_mass).max(0.0);
    Ok(y.iter()
        .zip(caps)
        .zip(&capped)
        .map(|((yi, ui), c)| if *c { *ui } else if free_y > 0.0 { free_mass * yi / free_y } else { 0.0 })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub passed: bool,
    /// Multiplier of the sum constraint; `None` when every coordinate is
    /// capped.
    pub mu: Option<f64>,
    /// Most negative cap multiplier (must be `>= -tol`).
    pub min_cap_multiplier: f64,
    /// `max |lambda_e (w_e - u_e)|`.
    pub complementarity: f64,
    /// `|sum w - total| / total`.
    pub sum_residual: f64,
    /// `max (w_e - u_e)`.
    pub cap_violation: f64,
}

/// Checks the optimality conditions of the capped-simplex Bregman projection
/// of `y`: `w_e = y_e exp(-mu - lambda_e)`, `lambda_e >= 0`,
/// `lambda_e (w_e - u_e) = 0`, `sum w = total`, `w <= u`.
pub fn kkt_check(w: &[f64], y: &[f64], total: f64, caps: &[f64], tol: f64) -> KktReport {
    let sum: f64 = w.iter().sum();
    let sum_residual = if total > 0.0 { (sum - total).abs() / total } else { (sum - total).abs() };
    let cap_violation = w.iter().zip(caps).map(|(wi, ui)| wi - ui).fold(f64::NEG_INFINITY, f64::max);
    let primal_ok = sum_residual <= tol && cap_violation <= tol && w.iter().all(|v| *v >= 0.0);

    // Reference coordinate: the uncapped one with the most slack.
    let reference = w
        .iter()
        .zip(caps)
        .enumerate()
        .filter(|(_, (wi, ui))| **wi < **ui - tol && **wi > 0.0)
        .max_by(|a, b| (a.1 .1 - a.1 .0).total_cmp(&(b.1 .1 - b.1 .0)))
        .map(|(e, _)| e);

    let Some(e0) = reference else {
        let cap_sum: f64 = caps.iter().sum();
        let all_capped = ((cap_sum - total).abs() <= tol * total.max(1.0)) && primal_ok;
        return KktReport {
            passed: all_capped,
            mu: None,
            min_cap_multiplier: 0.0,
            complementarity: 0.0,
            sum_residual,
            cap_violation,
        };
    };
    let mu = (y[e0] / w[e0]).ln();
    let mut min_mult = f64::INFINITY;
    let mut complementarity: f64 = 0.0;
    for ((wi, yi), ui) in w.iter().zip(y).zip(caps) {
        let lambda = (yi / wi).ln() - mu;
        min_mult = min_mult.min(lambda);
        let slack = if ui.is_finite() { wi - ui } else { f64::NEG_INFINITY };
        let prod = if slack.is_finite() { (lambda * slack).abs() } else if lambda.abs() <= tol { 0.0 } else { f64::INFINITY };
        complementarity = complementarity.max(prod);
    }
    let passed = primal_ok && min_mult >= -tol && complementarity <= tol;
    KktReport { passed, mu: Some(mu), min_cap_multiplier: min_mult, complementarity, sum_residual, cap_violation }
}

// =============================================================================
// Gradients of f
// =============================================================================

/// `grad f(w)_e = [[0, D_e], [D_e, 0]] . X* + 2 rho_e (w_e - ref_e)` with
/// `X*` the inner maximizer at `w`.
pub fn exact_gradient(w: &[f64], ctx: &SaddleContext, opts: &SolverOptions) -> Result<Vec<f64>> {
    let (_, outcome) = f_triangle_max(w, ctx, opts, None)?;
    Ok(gradient_at(w, &outcome.point, ctx))
}

/// The envelope gradient at a given maximizer.
pub fn gradient_at(w: &[f64], x: &SdpPoint, ctx: &SaddleContext) -> Vec<f64> {
    let n = ctx.n;
    let xm = x.matrix();
    let dense = dense_weights(n, w);
    let wedges = wedge_weights(n, w);
    let quad = ctx.quadratic_gradient(w);
    pairs(n)
        .enumerate()
        .map(|(idx, (k, l))| 2.0 * derivative_pairing(n, &dense, wedges[idx], k, l, |i, j| xm[(i, n + j)]) + quad[idx])
        .collect()
}

/// Central differences of `f` with step `h`; every evaluation is a full
/// inner solve warm-started at the maximizer for `w`.
pub fn finite_difference_gradient(w: &[f64], ctx: &SaddleContext, opts: &SolverOptions, h: f64) -> Result<Vec<f64>> {
    let (_, base) = f_triangle_max(w, ctx, opts, None)?;
    let mut out = Vec::with_capacity(w.len());
    for e in 0..w.len() {
        let mut plus = w.to_vec();
        plus[e] += h;
        let mut minus = w.to_vec();
        minus[e] -= h;
        let (fp, _) = f_triangle_max(&plus, ctx, opts, Some(&base.point))?;
        let (fm, _) = f_triangle_max(&minus, ctx, opts, Some(&base.point))?;
        out.push((fp - fm) / (2.0 * h));
    }
    Ok(out)
}

// =============================================================================
// Reference inner solver
// =============================================================================

/// Reference maximizer of `M . X + lambda ln det X` over `D`, built to share
/// nothing with the production solver: `X = (1 - 1/n) V^T V + I/n` with unit
/// columns of `V`, so every iterate is in `D` by construction; Riemannian
/// gradient ascent on the product of spheres from `restarts` random starts;
/// `ln det` from an LU determinant. Intended for `n = 2`.
pub fn sdp_oracle_small(m: &DMatrix<f64>, lambda: f64, restarts: usize, seed: u64) -> Result<(SdpPoint, f64)> {
    let dim = m.nrows();
    if !dim.is_multiple_of(2) || m.ncols() != dim || dim == 0 {
        return Err(EvalError::InvalidInput("M must be square with even dimension".into()));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(SdpError::InvalidLambda(lambda).into());
    }
    let n = dim / 2;
    let nf = n as f64;
    let scale = 1.0 - 1.0 / nf;
    let assemble = |v: &DMatrix<f64>| -> DMatrix<f64> {
        let mut x = v.transpose() * v * scale;
        for i in 0..dim {
            x[(i, i)] = 1.0;
        }
        x
    };
    let value = |x: &DMatrix<f64>| -> f64 {
        let det = x.clone().lu().determinant();
        if det <= 0.0 {
            f64::NEG_INFINITY
        } else {
            m.dot(x) + lambda * det.ln()
        }
    };
    let normalize = |v: &mut DMatrix<f64>| {
        for mut c in v.column_iter_mut() {
            let norm = c.norm();
            c /= norm;
        }
    };

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    // The identity corresponds to orthonormal columns; always try it.
    let mut starts: Vec<DMatrix<f64>> = vec![DMatrix::identity(dim, dim)];
    for _ in 1..restarts.max(1) {
        let mut v = DMatrix::from_fn(dim, dim, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        normalize(&mut v);
        starts.push(v);
    }

    let mut best: Option<(DMatrix<f64>, f64)> = None;
    for mut v in starts {
        let mut x = assemble(&v);
        let mut fx = value(&x);
        let mut step = 1e-2;
        for _ in 0..20_000 {
            let Some(inv) = x.clone().try_inverse() else { break };
            let gx = m + inv * lambda;
            // Euclidean gradient in V, projected onto each column's tangent.
            let mut gv = &v * &gx * (2.0 * scale);
            for (mut gc, vc) in gv.column_iter_mut().zip(v.column_iter()) {
                let radial = gc.dot(&vc);
                gc.axpy(-radial, &vc, 1.0);
            }
            let gnorm2 = gv.norm_squared();
            if gnorm2 < 1e-26 * (1.0 + fx.abs()) {
                break;
            }
            let mut accepted = false;
            for _ in 0..60 {
                let mut trial = &v + &gv * step;
                normalize(&mut trial);
                let xt = assemble(&trial);
                let ft = value(&xt);
                if ft >= fx + 1e-4 * step * gnorm2 {
                    v = trial;
                    x = xt;
                    fx = ft;
                    step *= 2.0;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if best.as_ref().is_none_or(|(_, f)| fx > *f) {
            best = Some((x, fx));
        }
    }
    let (x, fx) = best.expect("at least one start");
    Ok((SdpPoint::new(n, x)?, fx))
}

/// Cross-check helper: production solve at `opts` for the same problem.
pub fn production_solve(m: &DMatrix<f64>, lambda: f64, opts: &SolverOptions) -> Result<(SdpPoint, f64)> {
    let out = inner_sdp_solve(m, lambda, opts, None)?;
    Ok((out.point, out.objective))
}
