//! The private release itself: preprocessing of the input into public
//! quantities, the noisy mirror-descent loop with its capped-simplex update,
//! the degenerate-case fallback and the randomized-response baseline.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dp::{
    calibrate, CalibrationInputs, DpError, MechanismParams, NoiseSource, NoiseStream, PrivacyParams,
    TuningConstants,
};
use crate::eval::CutErrorResult;
use crate::graph::{
    dense_weights, derivative_pairing, local_sensitivity_l3, pair_count, pairs, triangle_adjacency_raw,
    u_quantities, wedge_weights, GraphError, NoisyGraph, PairWeights, WeightedGraph,
};
use crate::sdp::{f_triangle_max, sqrt_psd_matrix, SaddleContext, SdpError, SdpPoint, SolverOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechanismError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error("caps sum to {cap_sum}, below the total weight {total}: the feasible set is empty")]
    InfeasibleCaps { cap_sum: f64, total: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("inner solve failed in restart {restart} at step {step}: {source}")]
    Solver {
        restart: usize,
        step: usize,
        #[source]
        source: SdpError,
        /// Steps completed before the failure.
        completed: Vec<StepSummary>,
    },
    #[error("report does not match this input: {0}")]
    ReplayMismatch(String),
}

pub type Result<T> = std::result::Result<T, MechanismError>;

/// Absolute floor applied to mirror-descent outputs so the entropy mirror
/// map stays finite.
pub const WEIGHT_FLOOR: f64 = 1e-300;

// =============================================================================
// Capped-simplex update
// =============================================================================

/// One mirror-descent step: `y = w * exp(-eta g)` followed by the Bregman
/// projection of `y` onto `{x >= 0 : sum x = total, x <= caps}`.
pub fn md_update(w: &[f64], g: &[f64], total: f64, caps: &[f64], eta: f64) -> Result<Vec<f64>> {
    if w.len() != g.len() {
        return Err(MechanismError::InvalidInput(format!(
            "weights have length {}, gradient has length {}",
            w.len(),
            g.len()
        )));
    }
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(MechanismError::InvalidInput(format!("step length {eta} must be finite and nonnegative")));
    }
    let log_y: Vec<f64> = w.iter().zip(g).map(|(wi, gi)| wi.ln() - eta * gi).collect();
    project_capped_simplex_log(&log_y, total, caps)
}

/// Bregman projection of a positive vector `y` onto the capped simplex.
pub fn project_capped_simplex(y: &[f64], total: f64, caps: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = y.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(MechanismError::InvalidInput(format!("projection input {bad} is not positive and finite")));
    }
    let log_y: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    project_capped_simplex_log(&log_y, total, caps)
}

/// The greedy capped-simplex projection, with `y` given by its logarithm so
/// that large `eta * g` cannot overflow.
///
/// Coordinates are visited by decreasing `y_e / u_e`; each takes its
/// proportional share `W_i y_e / S_i` of the remaining mass unless that
/// exceeds its cap. Suffix sums `S_i` are kept in log space.
pub fn project_capped_simplex_log(log_y: &[f64], total: f64, caps: &[f64]) -> Result<Vec<f64>> {
    let len = log_y.len();
    if caps.len() != len {
        return Err(MechanismError::InvalidInput(format!(
            "caps have length {}, expected {len}",
            caps.len()
        )));
    }
    if len == 0 {
        return Err(MechanismError::InvalidInput("empty weight vector".into()));
    }
    if !(total.is_finite() && total >= 0.0) {
        return Err(MechanismError::InvalidInput(format!("total weight {total} must be finite and nonnegative")));
    }
    if caps.iter().any(|u| u.is_nan() || *u < 0.0) {
        return Err(MechanismError::InvalidInput("caps must be nonnegative".into()));
    }
    if log_y.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(MechanismError::InvalidInput("non-finite update direction".into()));
    }
    if log_y.iter().all(|v| *v == f64::NEG_INFINITY) {
        return Err(MechanismError::InvalidInput("all update weights are zero".into()));
    }
    let cap_sum: f64 = caps.iter().sum();
    if cap_sum < total * (1.0 - 1e-12) {
        return Err(MechanismError::InfeasibleCaps { cap_sum, total });
    }

    // ln(y/u); a zero cap sorts first, an infinite cap last.
    let log_ratio: Vec<f64> = log_y
        .iter()
        .zip(caps)
        .map(|(ly, u)| if *u == 0.0 { f64::INFINITY } else { ly - u.ln() })
        .collect();
    let mut order: Vec<usize> = (0..len).collect();
    order.sort_by(|&a, &b| log_ratio[b].total_cmp(&log_ratio[a]).then(a.cmp(&b)));

    // Suffix log-sum-exp: log_suffix[i] = ln sum_{j >= i} y_{order[j]}.
    let mut log_suffix = vec![f64::NEG_INFINITY; len + 1];
    for i in (0..len).rev() {
        log_suffix[i] = log_add_exp(log_y[order[i]], log_suffix[i + 1]);
    }

    // The capped coordinates form a prefix of this order: once a coordinate
    // takes its proportional share, every later one does too. Free
    // coordinates all share the same remaining mass and suffix sum, which
    // avoids cancellation from subtracting large shares one at a time.
    let mut out = vec![0.0; len];
    let mut remaining = total;
    let mut first_free = len;
    for (i, &e) in order.iter().enumerate() {
        let share = if log_suffix[i] == f64::NEG_INFINITY {
            0.0
        } else {
            remaining * (log_y[e] - log_suffix[i]).exp()
        };
        if share < caps[e] {
            first_free = i;
            break;
        }
        out[e] = caps[e];
        remaining = (remaining - caps[e]).max(0.0);
    }
    for &e in &order[first_free.min(len)..] {
        if log_suffix[first_free] != f64::NEG_INFINITY {
            out[e] = (remaining * (log_y[e] - log_suffix[first_free]).exp()).min(caps[e]);
        }
    }
    for (v, u) in out.iter_mut().zip(caps) {
        if *v < WEIGHT_FLOOR {
            *v = WEIGHT_FLOOR.min(*u);
        }
    }
    Ok(out)
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

// =============================================================================
// Preprocessing
// =============================================================================

/// Per-stage privacy budgets of the three preprocessing releases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageBudgets {
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
}

impl StageBudgets {
    /// The even split `eps / 6` used by the mechanism.
    pub fn split(privacy: &PrivacyParams) -> Self {
        let s = privacy.stage_budget();
        Self { eps1: s, eps2: s, eps3: s }
    }
}

/// Every Laplace draw consumed by preprocessing, in draw order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessNoise {
    pub total: f64,
    pub caps: Vec<f64>,
    pub l3: f64,
}

/// The public quantities the optimization runs on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessedInstance {
    pub n: usize,
    /// Released total weight `W`.
    pub total_weight: f64,
    /// Input weights rescaled to sum to `W`.
    pub rescaled: Vec<f64>,
    /// Released per-pair caps `u`.
    pub caps: Vec<f64>,
    /// `l3` of the raw input.
    pub l3_input: f64,
    /// Released sensitivity proxy.
    pub l3_tilde: f64,
    pub u_tri: f64,
    pub u_lam: f64,
    pub degenerate: bool,
    pub degenerate_reason: Option<String>,
    /// Number of caps raised because the noise pushed them below the
    /// rescaled weight or below `W / C(n,2)`.
    pub cap_repairs: usize,
    /// `None` when no noise was drawn (fewer than three vertices).
    pub noise: Option<PreprocessNoise>,
}

/// Releases `W`, the caps `u` and the sensitivity proxy, each with its own
/// stage budget, and flags degenerate inputs.
///
/// The degenerate test compares the raw input total weight and raw `l3`
/// against their thresholds. It is not itself privatized; it selects the
/// branch whose error bound the analysis covers.
pub fn preprocess<N: NoiseSource + ?Sized>(
    g: &WeightedGraph,
    budgets: &StageBudgets,
    beta: f64,
    noise: &mut N,
    constants: &TuningConstants,
) -> Result<PreprocessedInstance> {
    for (name, value) in [("eps1", budgets.eps1), ("eps2", budgets.eps2), ("eps3", budgets.eps3)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(DpError::InvalidParameter { name, value, reason: "must be positive and finite" }.into());
        }
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(DpError::InvalidParameter { name: "beta", value: beta, reason: "must lie in (0, 1)" }.into());
    }
    constants.validate()?;

    let n = g.n();
    let pair_total = pair_count(n);
    let input_sum = g.total_weight();
    let l3_input = local_sensitivity_l3(g);

    if n < 3 {
        return Ok(PreprocessedInstance {
            n,
            total_weight: 0.0,
            rescaled: vec![0.0; pair_total],
            caps: vec![0.0; pair_total],
            l3_input,
            l3_tilde: 0.0,
            u_tri: 0.0,
            u_lam: 0.0,
            degenerate: true,
            degenerate_reason: Some(format!("{n} vertices cannot carry a triangle")),
            cap_repairs: 0,
            noise: None,
        });
    }

    let nf = n as f64;
    let (eps1, eps2, eps3) = (budgets.eps1, budgets.eps2, budgets.eps3);

    // Total weight.
    let total_noise = noise.laplace(1.0 / eps1)?;
    let mut total = input_sum + total_noise + (3.0 / beta).ln() / eps1;
    if total <= 0.0 {
        total = input_sum * 1e-9 + f64::EPSILON;
    }

    // Rescaled weights.
    let rescaled: Vec<f64> = if input_sum > 0.0 {
        let factor = total / input_sum;
        g.weights().iter().map(|w| w * factor).collect()
    } else {
        vec![0.0; pair_total]
    };

    // Caps.
    let uniform = total / pair_total as f64;
    let cap_offset = (6.0 * nf * nf / beta).ln() / eps2;
    let mut caps = Vec::with_capacity(pair_total);
    let mut cap_noise = Vec::with_capacity(pair_total);
    let mut cap_repairs = 0;
    for &wb in &rescaled {
        let draw = noise.laplace(1.0 / eps2)?;
        cap_noise.push(draw);
        let raw = wb + draw + cap_offset + uniform;
        let mut cap = raw;
        if cap < wb {
            cap = wb + uniform;
        }
        cap = cap.max(uniform);
        if cap != raw {
            cap_repairs += 1;
        }
        caps.push(cap);
    }

    // Sensitivity proxy.
    let u_max = caps.iter().copied().fold(0.0, f64::max);
    let l3_noise = noise.laplace(1.0 / eps3)?;
    let l3_tilde = (l3_input + u_max * (l3_noise + (6.0 * nf * nf / beta).ln() / eps3)).max(1e-12);
    let (u_tri, u_lam) = u_quantities(n, &caps);

    // Degenerate thresholds, with eps recovered from the stage budget.
    let eps = 6.0 * eps1;
    let w_threshold = constants.c_deg_w * (1.0 / beta).ln() / eps;
    let l3_threshold = constants.c_deg_l3 * g.max_weight() * (nf / beta).ln().powi(2) / (eps * eps);
    let degenerate_reason = if input_sum < w_threshold {
        Some(format!("input total weight {input_sum} below threshold {w_threshold}"))
    } else if l3_input < l3_threshold {
        Some(format!("input l3 {l3_input} below threshold {l3_threshold}"))
    } else {
        None
    };

    Ok(PreprocessedInstance {
        n,
        total_weight: total,
        rescaled,
        caps,
        l3_input,
        l3_tilde,
        u_tri,
        u_lam,
        degenerate: degenerate_reason.is_some(),
        degenerate_reason,
        cap_repairs,
        noise: Some(PreprocessNoise { total: total_noise, caps: cap_noise, l3: l3_noise }),
    })
}

// =============================================================================
// Gradient estimate
// =============================================================================

/// Stochastic gradient of `f` at `w`:
/// `g_e = v v^T . [[0, D_e], [D_e, 0]] + 2 rho_e (w_e - ref_e)` with
/// `v = X^{1/2} zeta`. The bilinear term is `2 a^T D_e b` for the halves
/// `a, b` of `v`, so no derivative matrix is ever materialized.
pub fn estimate_gradient(w: &[f64], x: &SdpPoint, zeta: &[f64], ctx: &SaddleContext) -> Result<Vec<f64>> {
    let n = ctx.n;
    if w.len() != pair_count(n) || zeta.len() != 2 * n || x.half_dim() != n {
        return Err(MechanismError::InvalidInput(format!(
            "dimension mismatch: {} weights, {} normal draws, {}x{} point for n = {n}",
            w.len(),
            zeta.len(),
            2 * x.half_dim(),
            2 * x.half_dim()
        )));
    }
    let root = sqrt_psd_matrix(x.matrix())?;
    let v = root * nalgebra::DVector::from_column_slice(zeta);
    Ok(gradient_from_sample(w, v.as_slice(), ctx))
}

/// The same estimate with the released vector `v = X^{1/2} zeta` given.
pub fn gradient_from_sample(w: &[f64], v: &[f64], ctx: &SaddleContext) -> Vec<f64> {
    let n = ctx.n;
    let (a, b) = v.split_at(n);
    let dense = dense_weights(n, w);
    let wedges = wedge_weights(n, w);
    let quad = ctx.quadratic_gradient(w);
    pairs(n)
        .enumerate()
        .map(|(idx, (k, l))| {
            let bilinear = derivative_pairing(n, &dense, wedges[idx], k, l, |i, j| a[i] * b[j]);
            2.0 * bilinear + quad[idx]
        })
        .collect()
}

// =============================================================================
// Mechanism run
// =============================================================================

/// Everything that determines a run besides the input graph and the seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismConfig {
    pub privacy: PrivacyParams,
    pub constants: TuningConstants,
    pub solver: SolverOptions,
}

impl MechanismConfig {
    pub fn new(privacy: PrivacyParams) -> Self {
        Self { privacy, constants: TuningConstants::default(), solver: SolverOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSummary {
    pub n: usize,
    pub edge_count: usize,
    pub total_weight: f64,
    pub max_weight: f64,
    /// SHA-256 of the little-endian weight vector.
    pub digest: String,
}

impl InputSummary {
    pub fn of(g: &WeightedGraph) -> Self {
        let mut hasher = Sha256::new();
        hasher.update((g.n() as u64).to_le_bytes());
        for w in g.weights() {
            hasher.update(w.to_le_bytes());
        }
        Self {
            n: g.n(),
            edge_count: g.edge_count(),
            total_weight: g.total_weight(),
            max_weight: g.max_weight(),
            digest: hex::encode(hasher.finalize()),
        }
    }
}

/// Count, mean and extremes of a batch of noise draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSummary {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub max_abs: f64,
}

impl NoiseSummary {
    pub fn of(values: &[f64]) -> Self {
        let count = values.len();
        let mean = if count == 0 { 0.0 } else { values.iter().sum::<f64>() / count as f64 };
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let max_abs = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if count == 0 {
            return Self { count, mean, min: 0.0, max: 0.0, max_abs };
        }
        Self { count, mean, min, max, max_abs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub total_weight: f64,
    pub l3_input: f64,
    pub l3_tilde: f64,
    pub u_tri: f64,
    pub u_lam: f64,
    pub cap_min: f64,
    pub cap_max: f64,
    pub cap_repairs: usize,
    pub total_noise: Option<f64>,
    pub cap_noise: Option<NoiseSummary>,
    pub l3_noise: Option<f64>,
}

impl PreprocessSummary {
    fn of(inst: &PreprocessedInstance) -> Self {
        Self {
            total_weight: inst.total_weight,
            l3_input: inst.l3_input,
            l3_tilde: inst.l3_tilde,
            u_tri: inst.u_tri,
            u_lam: inst.u_lam,
            cap_min: inst.caps.iter().copied().fold(f64::INFINITY, f64::min).min(f64::MAX),
            cap_max: inst.caps.iter().copied().fold(0.0, f64::max),
            cap_repairs: inst.cap_repairs,
            total_noise: inst.noise.as_ref().map(|z| z.total),
            cap_noise: inst.noise.as_ref().map(|z| NoiseSummary::of(&z.caps)),
            l3_noise: inst.noise.as_ref().map(|z| z.l3),
        }
    }
}

/// One mirror-descent step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub t: usize,
    /// `F(w_t, X_t)` at the solver's point, against the restart's noisy
    /// reference weights.
    pub f_value: f64,
    pub solver_steps: usize,
    pub solver_gap: f64,
    pub gradient_max_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartReport {
    pub index: usize,
    pub reference_noise: NoiseSummary,
    pub steps: Vec<StepSummary>,
    /// `f` of the averaged iterate, evaluated with this restart's reference.
    pub candidate_objective: f64,
    pub candidate_solver_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub preprocess_ms: f64,
    pub restarts_ms: Vec<f64>,
    pub total_ms: f64,
}

/// Complete record of one run. Together with the input graph it determines
/// the run exactly: see [`replay`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismReport {
    pub seed: u64,
    pub input: InputSummary,
    pub config: MechanismConfig,
    pub degenerate: bool,
    pub degenerate_reason: Option<String>,
    pub preprocess: PreprocessSummary,
    pub params: Option<MechanismParams>,
    pub restarts: Vec<RestartReport>,
    pub chosen_restart: Option<usize>,
    pub output_total_weight: f64,
    pub output_weights: Vec<f64>,
    /// Filled in by callers that evaluate the release.
    pub cut_error: Option<CutErrorResult>,
    pub timings: Option<Timings>,
}

impl MechanismReport {
    /// The report with wall-clock fields removed; identical across re-runs.
    pub fn without_timings(&self) -> Self {
        Self { timings: None, ..self.clone() }
    }
}

/// Result of one restart of the mirror-descent loop.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartOutcome {
    pub candidate: Vec<f64>,
    pub reference: Vec<f64>,
    pub steps: Vec<StepSummary>,
    /// Every iterate `w^(1) .. w^(T+1)`.
    pub iterates: Vec<Vec<f64>>,
}

/// Run one restart: release the noisy reference, then `T` steps of
/// solve / sample / estimate / update starting from the uniform point.
/// The candidate is the mean of `w^(1) .. w^(T)`.
pub fn run_restart<N: NoiseSource + ?Sized>(
    inst: &PreprocessedInstance,
    params: &MechanismParams,
    solver: &SolverOptions,
    restart: usize,
    noise: &mut N,
) -> Result<RestartOutcome> {
    let n = inst.n;
    let len = pair_count(n);
    let mut reference = Vec::with_capacity(len);
    for &wb in &inst.rescaled {
        reference.push(wb + noise.laplace(1.0 / params.eps4)?);
    }
    let target = triangle_adjacency_raw(n, &inst.rescaled);
    let ctx = SaddleContext::new(target, reference.clone(), inst.caps.clone(), params.lambda)?;

    let mut w = vec![inst.total_weight / len as f64; len];
    let mut iterates = vec![w.clone()];
    let mut sum = vec![0.0; len];
    let mut steps = Vec::with_capacity(params.iterations);
    let mut warm: Option<SdpPoint> = None;

    for t in 1..=params.iterations {
        let (f_value, outcome) = match f_triangle_max(&w, &ctx, solver, warm.as_ref()) {
            Ok(r) => r,
            Err(source) => return Err(MechanismError::Solver { restart, step: t, source, completed: steps }),
        };
        let zeta = noise.gaussian_vector(2 * n)?;
        let g = estimate_gradient(&w, &outcome.point, &zeta, &ctx)?;
        steps.push(StepSummary {
            t,
            f_value,
            solver_steps: outcome.steps,
            solver_gap: outcome.gap_estimate,
            gradient_max_abs: g.iter().map(|v| v.abs()).fold(0.0, f64::max),
        });
        for (s, wi) in sum.iter_mut().zip(&w) {
            *s += wi;
        }
        w = md_update(&w, &g, inst.total_weight, &inst.caps, params.eta)?;
        iterates.push(w.clone());
        warm = Some(outcome.point);
    }

    let tf = params.iterations as f64;
    let candidate = sum.into_iter().map(|s| s / tf).collect();
    Ok(RestartOutcome { candidate, reference, steps, iterates })
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Private release of `g`. Degenerate inputs yield the empty graph.
///
/// Preprocessing draws from substream 0 of `seed`; restart `l` draws from
/// substream `l + 1`, so restarts run in parallel without changing results.
pub fn run_mechanism(
    g: &WeightedGraph,
    config: &MechanismConfig,
    seed: u64,
) -> Result<(WeightedGraph, MechanismReport)> {
    let start = Instant::now();
    let privacy = PrivacyParams::new(config.privacy.epsilon, config.privacy.delta, config.privacy.beta)?;
    let root = NoiseStream::new(seed);
    let n = g.n();

    let mut pre_stream = root.substream(0);
    let inst = preprocess(g, &StageBudgets::split(&privacy), privacy.beta, &mut pre_stream, &config.constants)?;
    let preprocess_ms = elapsed_ms(start);

    let mut report = MechanismReport {
        seed,
        input: InputSummary::of(g),
        config: *config,
        degenerate: inst.degenerate,
        degenerate_reason: inst.degenerate_reason.clone(),
        preprocess: PreprocessSummary::of(&inst),
        params: None,
        restarts: Vec::new(),
        chosen_restart: None,
        output_total_weight: 0.0,
        output_weights: vec![0.0; pair_count(n)],
        cut_error: None,
        timings: None,
    };

    if inst.degenerate {
        report.timings = Some(Timings { preprocess_ms, restarts_ms: Vec::new(), total_ms: elapsed_ms(start) });
        return Ok((WeightedGraph::empty(n), report));
    }

    let params = calibrate(
        &CalibrationInputs {
            epsilon: privacy.epsilon,
            delta: privacy.delta,
            beta: privacy.beta,
            total_weight: inst.total_weight,
            u_tri: inst.u_tri,
            u_lam: inst.u_lam,
            l3_tilde: inst.l3_tilde,
            n,
        },
        &config.constants,
    )?;
    report.params = Some(params);

    let results: Vec<Result<(RestartReport, Vec<f64>, f64)>> = (0..params.restarts)
        .into_par_iter()
        .map(|l| {
            let t0 = Instant::now();
            let mut stream = root.substream(l as u64 + 1);
            let outcome = run_restart(&inst, &params, &config.solver, l, &mut stream)?;
            let target = triangle_adjacency_raw(n, &inst.rescaled);
            let ctx = SaddleContext::new(target, outcome.reference.clone(), inst.caps.clone(), params.lambda)?;
            let (objective, solve) = f_triangle_max(&outcome.candidate, &ctx, &config.solver, None)?;
            let reference_noise: Vec<f64> =
                outcome.reference.iter().zip(&inst.rescaled).map(|(r, wb)| r - wb).collect();
            let rep = RestartReport {
                index: l,
                reference_noise: NoiseSummary::of(&reference_noise),
                steps: outcome.steps,
                candidate_objective: objective,
                candidate_solver_steps: solve.steps,
            };
            Ok((rep, outcome.candidate, elapsed_ms(t0)))
        })
        .collect();

    let mut restarts_ms = Vec::with_capacity(params.restarts);
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    for r in results {
        let (rep, candidate, ms) = r?;
        restarts_ms.push(ms);
        let better = match &best {
            None => true,
            Some((_, obj, _)) => rep.candidate_objective < *obj,
        };
        if better {
            best = Some((rep.index, rep.candidate_objective, candidate));
        }
        report.restarts.push(rep);
    }
    let (chosen, _, weights) = best.expect("at least one restart");
    let output = WeightedGraph::new(n, weights)?;
    report.chosen_restart = Some(chosen);
    report.output_total_weight = output.total_weight();
    report.output_weights = output.weights().to_vec();
    report.timings = Some(Timings { preprocess_ms, restarts_ms, total_ms: elapsed_ms(start) });
    Ok((output, report))
}

/// Re-run the mechanism recorded in `report` on `g`. Fails if `g` is not the
/// graph the report was produced from.
pub fn replay(g: &WeightedGraph, report: &MechanismReport) -> Result<(WeightedGraph, MechanismReport)> {
    let summary = InputSummary::of(g);
    if summary.digest != report.input.digest {
        return Err(MechanismError::ReplayMismatch(format!(
            "input digest {} differs from recorded {}",
            summary.digest, report.input.digest
        )));
    }
    run_mechanism(g, &report.config, report.seed)
}

// =============================================================================
// Baseline
// =============================================================================

/// Independent `Lap(1/eps)` noise on every pair weight. Negative results are
/// kept; use [`NoisyGraph::clipped`] for a valid graph.
pub fn randomized_response<N: NoiseSource + ?Sized>(
    g: &WeightedGraph,
    epsilon: f64,
    noise: &mut N,
) -> Result<NoisyGraph> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(DpError::InvalidParameter { name: "epsilon", value: epsilon, reason: "must be positive and finite" }
            .into());
    }
    let mut out = Vec::with_capacity(g.weights().len());
    for w in g.weights() {
        out.push(w + noise.laplace(1.0 / epsilon)?);
    }
    Ok(NoisyGraph::new(g.n(), out)?)
}

/// Record of one randomized-response run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub seed: u64,
    pub input: InputSummary,
    pub epsilon: f64,
    pub clip_negative: bool,
    pub noise: NoiseSummary,
    pub negative_count: usize,
    pub output_total_weight: f64,
    pub output_weights: Vec<f64>,
    pub cut_error: Option<CutErrorResult>,
    pub timings: Option<Timings>,
}

impl BaselineReport {
    pub fn without_timings(&self) -> Self {
        Self { timings: None, ..self.clone() }
    }
}

/// Randomized response seeded like the mechanism (substream 0 of `seed`).
/// The returned graph is clipped when `clip_negative` is set.
pub fn run_randomized_response(
    g: &WeightedGraph,
    epsilon: f64,
    seed: u64,
    clip_negative: bool,
) -> Result<(NoisyGraph, BaselineReport)> {
    let start = Instant::now();
    let mut stream = NoiseStream::new(seed).substream(0);
    let noisy = randomized_response(g, epsilon, &mut stream)?;
    let noise: Vec<f64> = noisy.weights().iter().zip(g.weights()).map(|(a, b)| a - b).collect();
    let negative_count = noisy.negative_count();
    let released = if clip_negative { NoisyGraph::new(g.n(), noisy.clipped().into_weights())? } else { noisy };
    let report = BaselineReport {
        seed,
        input: InputSummary::of(g),
        epsilon,
        clip_negative,
        noise: NoiseSummary::of(&noise),
        negative_count,
        output_total_weight: released.weights().iter().sum(),
        output_weights: released.weights().to_vec(),
        cut_error: None,
        timings: Some(Timings { preprocess_ms: 0.0, restarts_ms: Vec::new(), total_ms: elapsed_ms(start) }),
    };
    Ok((released, report))
}
