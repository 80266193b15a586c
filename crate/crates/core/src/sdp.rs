//! The inner maximization over the spectrahedron
//! `D = { X symmetric : X_ii = 1, X >= (1/n) I }` (X is `2n x 2n`).
//!
//! The solver is projected gradient ascent on `g(X) = M . X + lambda log det X`
//! with Barzilai-Borwein step proposals, a sufficient-ascent backtracking test,
//! and a projection back onto `D` after every step. Two projections are
//! available: Dykstra's alternating projection (the reference) and a
//! semidefinite dual Newton method, which the solver uses because Dykstra
//! crawls once the spectral floor is active.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{pair_count, pairs, wedge_sums, MotifAdjacency};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("expected a {expected}x{expected} matrix, got {rows}x{cols}")]
    Dimension { expected: usize, rows: usize, cols: usize },
    #[error("point lies outside the domain: diagonal residual {diagonal:.3e}, spectral-floor residual {spectral:.3e}")]
    OutsideDomain { diagonal: f64, spectral: f64 },
    #[error("matrix is not positive semidefinite (smallest eigenvalue {0:.3e})")]
    NotPsd(f64),
    #[error("log-det weight must be positive, got {0}")]
    InvalidLambda(f64),
    #[error("domain projection did not converge after {sweeps} sweeps (diagonal residual {diagonal:.3e})")]
    ProjectionStalled { sweeps: usize, diagonal: f64 },
    #[error("solver hit the {steps}-step cap; stationarity estimate {residual:.3e} above target {target:.3e}")]
    IterationCap { steps: usize, residual: f64, target: f64, last: Box<SdpPoint> },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, SdpError>;

/// A point of the domain `D` for half-dimension `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpPoint {
    n: usize,
    x: DMatrix<f64>,
}

/// Distance of a matrix from `D`, measured separately on the two constraints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainResiduals {
    /// `max_i |X_ii - 1|`.
    pub diagonal: f64,
    /// `max(0, 1/n - lambda_min(X))`.
    pub spectral: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub max_abs_entry: f64,
}

impl DomainResiduals {
    pub fn within(&self, tol: f64) -> bool {
        self.diagonal <= tol && self.spectral <= tol
    }
}

/// Membership tolerance for constructing an [`SdpPoint`].
pub const MEMBERSHIP_TOL: f64 = 1e-9;

impl SdpPoint {
    pub fn identity(n: usize) -> Self {
        Self { n, x: DMatrix::identity(2 * n, 2 * n) }
    }

    /// Wrap `x` after checking membership in `D` to [`MEMBERSHIP_TOL`].
    pub fn new(n: usize, x: DMatrix<f64>) -> Result<Self> {
        check_square(&x, 2 * n)?;
        check_symmetric(&x)?;
        let r = domain_residuals(&x, n);
        if !r.within(MEMBERSHIP_TOL) {
            return Err(SdpError::OutsideDomain { diagonal: r.diagonal, spectral: r.spectral });
        }
        Ok(Self { n, x })
    }

    pub fn half_dim(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.x
    }

    pub fn residuals(&self) -> DomainResiduals {
        domain_residuals(&self.x, self.n)
    }

    /// `ln det X`.
    pub fn log_det(&self) -> f64 {
        eigen(&self.x).eigenvalues.iter().map(|v| v.ln()).sum()
    }
}

pub fn domain_residuals(x: &DMatrix<f64>, n: usize) -> DomainResiduals {
    let diagonal = x.diagonal().iter().map(|d| (d - 1.0).abs()).fold(0.0, f64::max);
    let ev = eigen(x).eigenvalues;
    let min_eigenvalue = ev.min();
    let max_eigenvalue = ev.max();
    DomainResiduals {
        diagonal,
        spectral: (1.0 / n as f64 - min_eigenvalue).max(0.0),
        min_eigenvalue,
        max_eigenvalue,
        max_abs_entry: x.amax(),
    }
}

fn eigen(x: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    x.clone().symmetric_eigen()
}

fn check_square(x: &DMatrix<f64>, expected: usize) -> Result<()> {
    if x.nrows() != expected || x.ncols() != expected {
        return Err(SdpError::Dimension { expected, rows: x.nrows(), cols: x.ncols() });
    }
    Ok(())
}

fn check_symmetric(x: &DMatrix<f64>) -> Result<()> {
    let scale = x.amax().max(1.0);
    let asym = (x - x.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(SdpError::NotSymmetric(asym));
    }
    Ok(())
}

fn symmetrize(x: &mut DMatrix<f64>) {
    let n = x.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (x[(i, j)] + x[(j, i)]);
            x[(i, j)] = v;
            x[(j, i)] = v;
        }
    }
}

// =============================================================================
// Block embedding and the saddle objective
// =============================================================================

/// `[[0, D], [D, 0]]` for a symmetric `n x n` matrix `D`.
pub fn block_embed(d: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(d, d.nrows())?;
    check_symmetric(d)?;
    let n = d.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    out.view_mut((0, n), (n, n)).copy_from(d);
    out.view_mut((n, 0), (n, n)).copy_from(d);
    Ok(out)
}

/// Everything the saddle objective needs besides the iterate `w` and `X`.
#[derive(Debug, Clone)]
pub struct SaddleContext {
    pub n: usize,
    /// Motif adjacency of the (rescaled) input graph.
    pub target: MotifAdjacency,
    /// Reference weights of the quadratic term: the rescaled input weights
    /// for the exact objective, their noisy release inside the mechanism.
    pub reference: Vec<f64>,
    pub caps: Vec<f64>,
    pub lambda: f64,
    /// `rho_e = 3 * sum_{s != i,j} (u_is + u_js)` for `e = (i, j)`.
    pub quadratic_coeffs: Vec<f64>,
}

impl SaddleContext {
    pub fn new(target: MotifAdjacency, reference: Vec<f64>, caps: Vec<f64>, lambda: f64) -> Result<Self> {
        let n = target.n();
        let m = pair_count(n);
        for v in [reference.len(), caps.len()] {
            if v != m {
                return Err(SdpError::Dimension { expected: m, rows: v, cols: 1 });
            }
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(SdpError::InvalidLambda(lambda));
        }
        let quadratic_coeffs = wedge_sums(n, &caps).into_iter().map(|s| 3.0 * s).collect();
        Ok(Self { n, target, reference, caps, lambda, quadratic_coeffs })
    }

    /// Same context with different reference weights.
    pub fn with_reference(&self, reference: Vec<f64>) -> Self {
        assert_eq!(reference.len(), self.reference.len());
        Self { reference, ..self.clone() }
    }

    /// The block matrix `[[0, A(w) - A_target], [A(w) - A_target, 0]]`.
    pub fn difference_block(&self, w: &[f64]) -> DMatrix<f64> {
        let a = crate::graph::triangle_adjacency_raw(self.n, w);
        let diff = a.into_matrix() - self.target.matrix();
        block_embed(&diff).expect("difference of symmetric matrices is symmetric")
    }

    /// `sum_e rho_e (w_e - reference_e)^2`.
    pub fn quadratic_term(&self, w: &[f64]) -> f64 {
        w.iter()
            .zip(&self.reference)
            .zip(&self.quadratic_coeffs)
            .map(|((wi, ri), c)| c * (wi - ri).powi(2))
            .sum()
    }

    /// Gradient of the quadratic term, `2 rho_e (w_e - reference_e)`.
    pub fn quadratic_gradient(&self, w: &[f64]) -> Vec<f64> {
        w.iter()
            .zip(&self.reference)
            .zip(&self.quadratic_coeffs)
            .map(|((wi, ri), c)| 2.0 * c * (wi - ri))
            .collect()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> {
        pairs(self.n)
    }
}

/// `M . X + lambda ln det X`.
pub fn sdp_objective(m: &DMatrix<f64>, lambda: f64, x: &SdpPoint) -> f64 {
    m.dot(x.matrix()) + lambda * x.log_det()
}

/// The saddle objective `F(w, X)`.
pub fn f_triangle(w: &[f64], x: &SdpPoint, ctx: &SaddleContext) -> Result<f64> {
    if x.half_dim() != ctx.n || w.len() != ctx.reference.len() {
        return Err(SdpError::Dimension { expected: 2 * ctx.n, rows: x.matrix().nrows(), cols: w.len() });
    }
    let r = x.residuals();
    if !r.within(MEMBERSHIP_TOL) {
        return Err(SdpError::OutsideDomain { diagonal: r.diagonal, spectral: r.spectral });
    }
    let m = ctx.difference_block(w);
    Ok(sdp_objective(&m, ctx.lambda, x) + ctx.quadratic_term(w))
}

// =============================================================================
// Projection onto D
// =============================================================================

/// Algorithm used for the Frobenius projection onto `D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectionMethod {
    /// Dykstra's alternating projection between the unit-diagonal affine set
    /// and the spectral floor. `max_sweeps` counts alternation sweeps.
    Dykstra,
    /// Semismooth Newton on the dual of the projection (one multiplier per
    /// diagonal entry). `max_sweeps` counts Newton iterations.
    DualNewton,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionOptions {
    pub method: ProjectionMethod,
    /// Target diagonal residual before the final repair.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self { method: ProjectionMethod::Dykstra, tol: 1e-7, max_sweeps: 500 }
    }
}

impl ProjectionOptions {
    /// Dual Newton at a tight tolerance; what the solver uses.
    pub fn newton() -> Self {
        Self { method: ProjectionMethod::DualNewton, tol: 1e-12, max_sweeps: 100 }
    }
}

/// Nearest point of `D` in Frobenius norm.
///
/// Once the chosen method brings the diagonal residual below `opts.tol`, the
/// diagonal is reset to one and the result is pulled toward the identity just
/// far enough to restore the spectral floor, so the returned point is
/// feasible to rounding error.
pub fn project_domain(x: &DMatrix<f64>, n: usize, opts: &ProjectionOptions) -> Result<SdpPoint> {
    check_square(x, 2 * n)?;
    check_symmetric(x)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SdpError::NonFinite("projection input"));
    }
    let mut y = x.clone();
    symmetrize(&mut y);
    let floor = 1.0 / n as f64;
    let projected = match opts.method {
        ProjectionMethod::Dykstra => dykstra(y, floor, opts)?,
        ProjectionMethod::DualNewton => dual_newton(y, floor, opts)?,
    };
    Ok(repair(projected, n))
}

fn diagonal_residual(x: &DMatrix<f64>) -> f64 {
    x.diagonal().iter().map(|d| (d - 1.0).abs()).fold(0.0, f64::max)
}

fn dykstra(start: DMatrix<f64>, floor: f64, opts: &ProjectionOptions) -> Result<DMatrix<f64>> {
    let dim = start.nrows();
    let mut p = DMatrix::<f64>::zeros(dim, dim);
    let mut q = DMatrix::<f64>::zeros(dim, dim);
    let mut current = start;
    for sweep in 0..=opts.max_sweeps {
        // Affine step: unit diagonal.
        let a_in = &current + &p;
        let mut a = a_in.clone();
        a.fill_diagonal(1.0);
        p = &a_in - &a;
        // Spectral step: clamp eigenvalues at the floor.
        let b_in = &a + &q;
        let b = clamp_spectrum(&b_in, floor);
        q = &b_in - &b;
        current = b;

        let diag_res = diagonal_residual(&current);
        if diag_res <= opts.tol {
            return Ok(current);
        }
        if sweep == opts.max_sweeps {
            return Err(SdpError::ProjectionStalled { sweeps: sweep, diagonal: diag_res });
        }
    }
    unreachable!()
}

/// Diagonal residual below which a dual Newton run that can make no further
/// progress is accepted rather than reported as stalled. The repair step
/// then restores exact membership; the result is within this distance of
/// the true projection, which is far below the solver's tolerances.
const NEWTON_ROUNDING_FLOOR: f64 = 1e-7;

/// Shift by the floor and project onto `{Y >= 0, diag(Y) = 1 - floor}` via
/// the dual `theta(y) = 1/2 |(G + Diag y)_+|^2 - b^T y`, whose gradient is
/// `diag((G + Diag y)_+) - b`.
fn dual_newton(start: DMatrix<f64>, floor: f64, opts: &ProjectionOptions) -> Result<DMatrix<f64>> {
    let dim = start.nrows();
    let mut g0 = start;
    for i in 0..dim {
        g0[(i, i)] -= floor;
    }
    let target = 1.0 - floor;

    struct DualState {
        theta: f64,
        grad: nalgebra::DVector<f64>,
        values: nalgebra::DVector<f64>,
        vectors: DMatrix<f64>,
        positive_part: DMatrix<f64>,
    }
    let evaluate = |y: &nalgebra::DVector<f64>| -> DualState {
        let mut shifted = g0.clone();
        for i in 0..dim {
            shifted[(i, i)] += y[i];
        }
        let e = eigen(&shifted);
        let pos = e.eigenvalues.map(|v| v.max(0.0));
        let mut positive_part = &e.eigenvectors * DMatrix::from_diagonal(&pos) * e.eigenvectors.transpose();
        symmetrize(&mut positive_part);
        let theta = 0.5 * pos.norm_squared() - target * y.sum();
        let grad = positive_part.diagonal().map(|d| d - target);
        DualState { theta, grad, values: e.eigenvalues, vectors: e.eigenvectors, positive_part }
    };

    let mut y = g0.diagonal().map(|d| target - d);
    let mut state = evaluate(&y);
    for iter in 0..=opts.max_sweeps {
        let res = state.grad.amax();
        let finish = |positive_part: DMatrix<f64>| {
            let mut out = positive_part;
            for i in 0..dim {
                out[(i, i)] += floor;
            }
            out
        };
        if res <= opts.tol {
            return Ok(finish(state.positive_part));
        }
        if iter == opts.max_sweeps {
            if res <= NEWTON_ROUNDING_FLOOR {
                return Ok(finish(state.positive_part));
            }
            return Err(SdpError::ProjectionStalled { sweeps: iter, diagonal: res });
        }

        // Generalized Hessian: H_kl = sum_ij Omega_ij P_ki P_li P_kj P_lj.
        let lam = &state.values;
        let p = &state.vectors;
        let omega = DMatrix::from_fn(dim, dim, |i, j| {
            let (a, b) = (lam[i], lam[j]);
            match (a > 0.0, b > 0.0) {
                (true, true) => 1.0,
                (false, false) => 0.0,
                _ => (a.max(0.0) - b.max(0.0)) / (a - b),
            }
        });
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        for k in 0..dim {
            for l in k..dim {
                let row: Vec<f64> = (0..dim).map(|i| p[(k, i)] * p[(l, i)]).collect();
                let mut acc = 0.0;
                for i in 0..dim {
                    if row[i] == 0.0 {
                        continue;
                    }
                    let mut inner = 0.0;
                    for j in 0..dim {
                        inner += omega[(i, j)] * row[j];
                    }
                    acc += row[i] * inner;
                }
                h[(k, l)] = acc;
                h[(l, k)] = acc;
            }
        }
        let reg = 1e-10 * (1.0 + state.grad.norm()).min(1.0);
        for i in 0..dim {
            h[(i, i)] += reg;
        }
        let dir = match h.clone().cholesky() {
            Some(ch) => ch.solve(&(-&state.grad)),
            None => -&state.grad,
        };
        let slope = state.grad.dot(&dir);
        let dir = if slope < 0.0 { dir } else { -&state.grad };
        let slope = state.grad.dot(&dir);

        let search = |dir: &nalgebra::DVector<f64>, slope: f64| {
            let mut alpha = 1.0;
            for _ in 0..50 {
                let trial = &y + dir * alpha;
                let s = evaluate(&trial);
                if s.theta <= state.theta + 1e-4 * alpha * slope || s.grad.amax() < res * 1e-3 {
                    return Some((trial, s));
                }
                alpha *= 0.5;
            }
            None
        };
        // Fall back to steepest descent when the Newton direction fails,
        // which happens near eigenvalue crossings where the generalized
        // Hessian is a poor model.
        let next = search(&dir, slope).or_else(|| {
            let steepest = -&state.grad;
            search(&steepest, -state.grad.norm_squared())
        });
        match next {
            Some((ny, ns)) => {
                y = ny;
                state = ns;
            }
            // No decrease possible: the dual is minimized to working
            // precision; the repair step absorbs what is left.
            None if res <= NEWTON_ROUNDING_FLOOR => return Ok(finish(state.positive_part)),
            None => return Err(SdpError::ProjectionStalled { sweeps: iter, diagonal: res }),
        }
    }
    unreachable!()
}

/// Projection onto `{X : lambda_min >= floor}`.
fn clamp_spectrum(x: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let e = eigen(x);
    if e.eigenvalues.min() >= floor {
        return x.clone();
    }
    let clamped = e.eigenvalues.map(|v| v.max(floor));
    let mut out = &e.eigenvectors * DMatrix::from_diagonal(&clamped) * e.eigenvectors.transpose();
    symmetrize(&mut out);
    out
}

/// Unit diagonal exactly, then `(1 - theta) X + theta I` with the smallest
/// `theta` that lifts the spectrum back to `1/n`.
fn repair(mut x: DMatrix<f64>, n: usize) -> SdpPoint {
    let floor = 1.0 / n as f64;
    x.fill_diagonal(1.0);
    symmetrize(&mut x);
    let lmin = eigen(&x).eigenvalues.min();
    let target = floor * (1.0 + 1e-12);
    if lmin < target && lmin < 1.0 {
        let theta = ((target - lmin) / (1.0 - lmin)).min(1.0);
        x *= 1.0 - theta;
        for i in 0..2 * n {
            x[(i, i)] = 1.0;
        }
    }
    SdpPoint { n, x }
}

// =============================================================================
// Solver
// =============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative optimality target: stop once the estimated gap is at most
    /// `tol * (1 + |g|)`.
    pub tol: f64,
    pub max_steps: usize,
    pub projection: ProjectionOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_steps: 2000, projection: ProjectionOptions::newton() }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub point: SdpPoint,
    /// `M . X + lambda ln det X` at the returned point.
    pub objective: f64,
    /// Accepted ascent steps.
    pub steps: usize,
    /// Final optimality-gap estimate.
    pub gap_estimate: f64,
    /// Objective after each accepted step (first entry is the start point).
    pub trajectory: Vec<f64>,
}

/// Cached spectral data of an iterate.
struct Iterate {
    x: SdpPoint,
    eigenvalues: nalgebra::DVector<f64>,
    eigenvectors: DMatrix<f64>,
    objective: f64,
}

impl Iterate {
    fn new(x: SdpPoint, m: &DMatrix<f64>, lambda: f64) -> Result<Self> {
        let e = eigen(x.matrix());
        if e.eigenvalues.min() <= 0.0 {
            return Err(SdpError::NotPsd(e.eigenvalues.min()));
        }
        let log_det: f64 = e.eigenvalues.iter().map(|v| v.ln()).sum();
        let objective = m.dot(x.matrix()) + lambda * log_det;
        if !objective.is_finite() {
            return Err(SdpError::NonFinite("objective"));
        }
        Ok(Self { x, eigenvalues: e.eigenvalues, eigenvectors: e.eigenvectors, objective })
    }

    /// `M + lambda X^{-1}`.
    fn gradient(&self, m: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
        let inv = self.eigenvalues.map(|v| 1.0 / v);
        let mut g = &self.eigenvectors * DMatrix::from_diagonal(&inv) * self.eigenvectors.transpose();
        g *= lambda;
        g += m;
        symmetrize(&mut g);
        g
    }
}

/// Maximize `M . X + lambda ln det X` over `D`.
///
/// `warm` seeds the iteration (the identity otherwise). The stopping rule
/// uses the gradient mapping `G_s = (X+ - X) / s` and the strong-concavity
/// modulus `lambda / (2n)^2` of the objective on `D`: the gap estimate is
/// `|G_s|_F^2 / (2 mu)`.
pub fn inner_sdp_solve(
    m: &DMatrix<f64>,
    lambda: f64,
    opts: &SolverOptions,
    warm: Option<&SdpPoint>,
) -> Result<SolveOutcome> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(SdpError::InvalidLambda(lambda));
    }
    let dim = m.nrows();
    if !dim.is_multiple_of(2) {
        return Err(SdpError::Dimension { expected: dim + 1, rows: dim, cols: m.ncols() });
    }
    let n = dim / 2;
    check_square(m, dim)?;
    check_symmetric(m)?;

    let start = match warm {
        Some(p) if p.half_dim() == n => p.clone(),
        Some(p) => return Err(SdpError::Dimension { expected: dim, rows: 2 * p.half_dim(), cols: 2 * p.half_dim() }),
        None => SdpPoint::identity(n),
    };
    let mut it = Iterate::new(start, m, lambda)?;
    let mu = lambda / (4.0 * (n * n) as f64);
    let mut trajectory = vec![it.objective];
    let mut grad = it.gradient(m, lambda);
    let lmin = it.eigenvalues.min();
    let mut step = lmin * lmin / lambda;
    let mut last_gap = f64::INFINITY;

    for k in 0..opts.max_steps {
        let target = opts.tol * (1.0 + it.objective.abs());
        let mut accepted = None;
        let mut s = step;
        for _ in 0..60 {
            let trial = it.x.matrix() + &grad * s;
            let candidate = project_domain(&trial, n, &opts.projection)?;
            let next = Iterate::new(candidate, m, lambda)?;
            let d = next.x.matrix() - it.x.matrix();
            let dn2 = d.norm_squared();
            let model = it.objective + grad.dot(&d) - dn2 / (2.0 * s);
            let flat = (next.objective - it.objective).abs() <= 4.0 * f64::EPSILON * (1.0 + it.objective.abs());
            // The model test alone can pass a slight decrease because the
            // repaired projection is not exactly the Euclidean one.
            let ascent = next.objective >= it.objective;
            if dn2 == 0.0 || (ascent && (next.objective >= model || flat)) {
                accepted = Some((next, d, s));
                break;
            }
            s *= 0.5;
        }
        let Some((next, d, s_used)) = accepted else {
            // No ascent possible at any step length: the iterate is stationary
            // to working precision. Report the last measured gap.
            let gap = if last_gap.is_finite() { last_gap } else { 0.0 };
            return Ok(finish(it, k, gap, trajectory));
        };

        let gm = d.norm() / s_used;
        last_gap = gm * gm / (2.0 * mu);
        let next_grad = next.gradient(m, lambda);

        // Barzilai-Borwein proposal for the next step length.
        let dg = &next_grad - &grad;
        let curvature = d.dot(&dg).abs();
        step = if curvature > 0.0 { d.norm_squared() / curvature } else { s_used * 2.0 };
        step = step.clamp(s_used * 1e-3, s_used * 1e3);

        debug_assert!(next.objective >= it.objective - 1e-9 * (1.0 + it.objective.abs()));
        it = next;
        grad = next_grad;
        trajectory.push(it.objective);
        if last_gap <= target || d.amax() == 0.0 {
            return Ok(finish(it, k + 1, last_gap, trajectory));
        }
    }
    let target = opts.tol * (1.0 + it.objective.abs());
    Err(SdpError::IterationCap { steps: opts.max_steps, residual: last_gap, target, last: Box::new(it.x) })
}

fn finish(it: Iterate, steps: usize, gap: f64, trajectory: Vec<f64>) -> SolveOutcome {
    SolveOutcome { point: it.x, objective: it.objective, steps, gap_estimate: gap, trajectory }
}

/// `f(w) = max_X F(w, X)`: one inner solve followed by an exact evaluation of
/// the saddle objective at the returned point.
pub fn f_triangle_max(
    w: &[f64],
    ctx: &SaddleContext,
    opts: &SolverOptions,
    warm: Option<&SdpPoint>,
) -> Result<(f64, SolveOutcome)> {
    let m = ctx.difference_block(w);
    let outcome = inner_sdp_solve(&m, ctx.lambda, opts, warm)?;
    let value = outcome.objective + ctx.quadratic_term(w);
    Ok((value, outcome))
}

/// Symmetric square root of a domain point.
pub fn matrix_sqrt_psd(x: &SdpPoint) -> Result<DMatrix<f64>> {
    sqrt_psd_matrix(x.matrix())
}

/// Symmetric square root of a PSD matrix; eigenvalues in `(-1e-10, 0)` are
/// treated as zero.
pub fn sqrt_psd_matrix(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(x, x.nrows())?;
    check_symmetric(x)?;
    let e = eigen(x);
    let lmin = e.eigenvalues.min();
    if lmin < -1e-10 {
        return Err(SdpError::NotPsd(lmin));
    }
    let roots = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    let mut s = &e.eigenvectors * DMatrix::from_diagonal(&roots) * e.eigenvectors.transpose();
    symmetrize(&mut s);
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::PairWeights;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_symmetric(dim: usize, rng: &mut ChaCha20Rng, scale: f64) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in i..dim {
                let v = scale * (rng.random::<f64>() * 2.0 - 1.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    fn random_domain_point(n: usize, rng: &mut ChaCha20Rng) -> SdpPoint {
        let raw = random_symmetric(2 * n, rng, 1.0);
        project_domain(&raw, n, &ProjectionOptions::newton()).unwrap()
    }

    #[test]
    fn block_embed_basics() {
        let z = block_embed(&DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(z, DMatrix::zeros(6, 6));

        let j = DMatrix::from_fn(3, 3, |i, k| if i == k { 0.0 } else { 1.0 });
        let b = block_embed(&j).unwrap();
        assert_eq!(b.sum(), 2.0 * j.sum());

        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(matches!(block_embed(&asym), Err(SdpError::NotSymmetric(_))));
    }

    #[test]
    fn block_embed_spectrum_is_paired() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..10 {
            let d = random_symmetric(3, &mut rng, 1.0);
            let mut ev: Vec<f64> = eigen(&block_embed(&d).unwrap()).eigenvalues.iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            for k in 0..3 {
                assert!((ev[k] + ev[5 - k]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn projection_fixed_points() {
        let id = DMatrix::<f64>::identity(6, 6);
        let p = project_domain(&id, 3, &ProjectionOptions::default()).unwrap();
        assert_eq!(p.matrix(), &id);

        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..5 {
            let x = random_domain_point(3, &mut rng);
            let again = project_domain(x.matrix(), 3, &ProjectionOptions::default()).unwrap();
            assert!((again.matrix() - x.matrix()).amax() <= 1e-9);
        }
    }

    #[test]
    fn projection_of_zero_is_feasible() {
        let p = project_domain(&DMatrix::zeros(8, 8), 4, &ProjectionOptions::default()).unwrap();
        let r = p.residuals();
        assert!(r.diagonal <= 1e-12);
        assert!(r.min_eigenvalue >= 0.25 - 1e-9);
    }

    #[test]
    fn dykstra_and_newton_agree() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        for n in 2..5 {
            for _ in 0..5 {
                let raw = random_symmetric(2 * n, &mut rng, 1.5);
                let dykstra = project_domain(
                    &raw,
                    n,
                    &ProjectionOptions { tol: 1e-9, max_sweeps: 100_000, ..Default::default() },
                )
                .unwrap();
                let newton = project_domain(&raw, n, &ProjectionOptions::newton()).unwrap();
                assert!((dykstra.matrix() - newton.matrix()).amax() < 1e-6);
            }
        }
    }

    #[test]
    fn newton_projection_is_nearest_point() {
        // Any other domain point is at least as far from the input.
        let mut rng = ChaCha20Rng::seed_from_u64(22);
        for _ in 0..5 {
            let raw = random_symmetric(6, &mut rng, 3.0);
            let p = project_domain(&raw, 3, &ProjectionOptions::newton()).unwrap();
            let dist = (&raw - p.matrix()).norm();
            for _ in 0..20 {
                let other = random_domain_point(3, &mut rng);
                let t = rng.random::<f64>() * 0.2;
                let mixed = SdpPoint::new(3, p.matrix() * (1.0 - t) + other.matrix() * t).unwrap();
                assert!((&raw - mixed.matrix()).norm() >= dist - 1e-9);
            }
        }
    }

    #[test]
    fn projection_reports_stall() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let raw = random_symmetric(8, &mut rng, 5.0);
        let err = project_domain(&raw, 4, &ProjectionOptions { tol: 1e-15, max_sweeps: 1, ..Default::default() });
        assert!(matches!(err, Err(SdpError::ProjectionStalled { .. })));
    }

    #[test]
    fn entry_and_spectrum_bounds_hold_for_projected_points() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for n in 2..5 {
            let x = random_domain_point(n, &mut rng);
            let r = x.residuals();
            assert!(r.max_abs_entry <= 1.0 + 1e-7);
            assert!(r.max_eigenvalue <= 2.0 * n as f64 + 1e-7);
            assert!(r.min_eigenvalue >= 1.0 / n as f64 - 1e-7);
        }
    }

    #[test]
    fn objective_is_concave_along_segments() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let m = random_symmetric(6, &mut rng, 2.0);
        for _ in 0..10 {
            let a = random_domain_point(3, &mut rng);
            let b = random_domain_point(3, &mut rng);
            let ga = sdp_objective(&m, 0.7, &a);
            let gb = sdp_objective(&m, 0.7, &b);
            for t in [0.25, 0.5, 0.75] {
                let mid = SdpPoint::new(3, a.matrix() * (1.0 - t) + b.matrix() * t).unwrap();
                let g = sdp_objective(&m, 0.7, &mid);
                assert!(g >= (1.0 - t) * ga + t * gb - 1e-9);
            }
        }
    }

    #[test]
    fn solver_zero_matrix_gives_identity() {
        for n in 1..5 {
            let out = inner_sdp_solve(&DMatrix::zeros(2 * n, 2 * n), 1.3, &SolverOptions::default(), None).unwrap();
            assert!((out.point.matrix() - DMatrix::<f64>::identity(2 * n, 2 * n)).amax() < 1e-12);
        }
    }

    #[test]
    fn solver_large_lambda_stays_near_identity() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        for _ in 0..5 {
            let m = random_symmetric(4, &mut rng, 3.0);
            let l1: f64 = m.iter().map(|v| v.abs()).sum();
            let out = inner_sdp_solve(&m, 100.0 * l1, &SolverOptions::default(), None).unwrap();
            assert!((out.point.matrix() - DMatrix::<f64>::identity(4, 4)).norm() <= 0.1);
        }
    }

    #[test]
    fn solver_ascends_monotonically_and_stays_feasible() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        for n in [2, 3, 5] {
            let m = random_symmetric(2 * n, &mut rng, 4.0);
            let out = inner_sdp_solve(&m, 0.5, &SolverOptions::with_tol(1e-9), None).unwrap();
            for pair in out.trajectory.windows(2) {
                assert!(pair[1] >= pair[0] - 1e-12 * (1.0 + pair[0].abs()));
            }
            let r = out.point.residuals();
            assert!(r.diagonal <= 1e-7 && r.spectral <= 1e-7);
        }
    }

    #[test]
    fn solver_warm_start_agrees_with_cold_start() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let m = random_symmetric(8, &mut rng, 2.0);
        let cold = inner_sdp_solve(&m, 1.0, &SolverOptions::with_tol(1e-10), None).unwrap();
        let m2 = &m + random_symmetric(8, &mut rng, 0.05);
        let warm_start = inner_sdp_solve(&m2, 1.0, &SolverOptions::with_tol(1e-10), Some(&cold.point)).unwrap();
        let cold2 = inner_sdp_solve(&m2, 1.0, &SolverOptions::with_tol(1e-10), None).unwrap();
        assert!((warm_start.objective - cold2.objective).abs() <= 1e-8 * (1.0 + cold2.objective.abs()));
    }

    #[test]
    fn solver_rejects_bad_lambda() {
        assert!(matches!(
            inner_sdp_solve(&DMatrix::zeros(4, 4), 0.0, &SolverOptions::default(), None),
            Err(SdpError::InvalidLambda(_))
        ));
    }

    #[test]
    fn solver_reports_iteration_cap() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let m = random_symmetric(8, &mut rng, 10.0);
        let opts = SolverOptions { tol: 1e-14, max_steps: 2, ..SolverOptions::default() };
        match inner_sdp_solve(&m, 0.1, &opts, None) {
            Err(SdpError::IterationCap { last, .. }) => assert!(last.residuals().within(1e-9)),
            other => panic!("expected iteration cap, got {other:?}"),
        }
    }

    #[test]
    fn sqrt_examples() {
        let id = SdpPoint::identity(2);
        assert!((matrix_sqrt_psd(&id).unwrap() - DMatrix::<f64>::identity(4, 4)).amax() < 1e-15);

        let mut x = DMatrix::<f64>::identity(4, 4);
        x[(0, 1)] = 0.5;
        x[(1, 0)] = 0.5;
        let p = SdpPoint::new(2, x.clone()).unwrap();
        let s = matrix_sqrt_psd(&p).unwrap();
        assert!((&s * &s - &x).norm() / x.norm() <= 1e-8);

        let mut rng = ChaCha20Rng::seed_from_u64(12);
        for _ in 0..5 {
            let p = random_domain_point(3, &mut rng);
            let s = matrix_sqrt_psd(&p).unwrap();
            assert!((&s - s.transpose()).amax() == 0.0);
            assert!((&s * &s - p.matrix()).norm() / p.matrix().norm() <= 1e-8);
        }
        let neg = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -0.1]));
        assert!(matches!(sqrt_psd_matrix(&neg), Err(SdpError::NotPsd(_))));
    }

    #[test]
    fn saddle_objective_examples() {
        let g = crate::graph::WeightedGraph::complete(4);
        let target = crate::graph::triangle_adjacency(&g);
        let w = g.weights().to_vec();
        let caps = vec![2.0; 6];
        let ctx = SaddleContext::new(target, w.clone(), caps, 0.8).unwrap();
        assert_eq!(f_triangle(&w, &SdpPoint::identity(4), &ctx).unwrap(), 0.0);

        let mut rng = ChaCha20Rng::seed_from_u64(13);
        for _ in 0..5 {
            let x = random_domain_point(4, &mut rng);
            assert!(f_triangle(&w, &x, &ctx).unwrap() <= 1e-12);
        }

        // Only the quadratic term survives at X = I when lambda -> 0.
        let ctx0 = SaddleContext { lambda: 1e-300, ..ctx.clone() };
        let w2: Vec<f64> = (0..6).map(|k| 0.5 + 0.1 * k as f64).collect();
        let expected: f64 = (0..6).map(|e| ctx.quadratic_coeffs[e] * (w2[e] - w[e]).powi(2)).sum();
        let got = f_triangle(&w2, &SdpPoint::identity(4), &ctx0).unwrap();
        assert!((got - expected).abs() <= 1e-12 * expected);
        // rho_e = 3 * sum_s (u_is + u_js) = 3 * 2 * 2 * 2 for K4 caps 2.
        assert_eq!(ctx.quadratic_coeffs[0], 24.0);
    }

    #[test]
    fn saddle_objective_rejects_points_outside_domain() {
        let g = crate::graph::WeightedGraph::complete(3);
        let ctx = SaddleContext::new(crate::graph::triangle_adjacency(&g), vec![1.0; 3], vec![2.0; 3], 1.0).unwrap();
        let bad = SdpPoint { n: 3, x: DMatrix::identity(6, 6) * 2.0 };
        assert!(matches!(f_triangle(&[1.0; 3], &bad, &ctx), Err(SdpError::OutsideDomain { .. })));
    }
}
