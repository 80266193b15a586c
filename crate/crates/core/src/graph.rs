//! Weighted graphs over all vertex pairs, triangle-motif adjacency, cut
//! values and the per-pair derivative of the motif adjacency.
//!
//! Weights are stored densely, one entry per unordered pair `(i, j)` with
//! `i < j`, in lexicographic order: `(0,1), (0,2), .., (0,n-1), (1,2), ..`.
//! The same order is used by every other module and by the file format.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("weight vector has length {got}, expected C({n},2) = {expected}")]
    LengthMismatch { n: usize, expected: usize, got: usize },
    #[error("weight at pair index {index} is {value}; weights must be finite and nonnegative")]
    InvalidWeight { index: usize, value: f64 },
    #[error("vertex {vertex} out of range for graph with {n} vertices")]
    VertexOutOfRange { vertex: usize, n: usize },
    #[error("pair ({i},{j}) is not a valid unordered pair")]
    InvalidPair { i: usize, j: usize },
    #[error("bipartition side must be a nonempty proper subset of the vertex set")]
    TrivialBipartition,
    #[error("cut sides overlap at vertex {0}")]
    OverlappingCut(usize),
    #[error("cut sides must both be nonempty")]
    EmptyCutSide,
    #[error("graphs have different vertex counts ({0} vs {1})")]
    SizeMismatch(usize, usize),
}

pub type Result<T> = std::result::Result<T, GraphError>;

// =============================================================================
// Pair indexing
// =============================================================================

/// Number of unordered vertex pairs, `C(n, 2)`.
#[inline]
pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Lexicographic index of the pair `(i, j)`; the arguments may come in
/// either order but must differ.
#[inline]
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i != j && i < n && j < n);
    let (a, b) = if i < j { (i, j) } else { (j, i) };
    a * n - a * (a + 1) / 2 + (b - a - 1)
}

/// All pairs `(i, j)`, `i < j`, in storage order.
pub fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| ((i + 1)..n).map(move |j| (i, j)))
}

/// Inverse of [`pair_index`].
pub fn pair_at(n: usize, index: usize) -> (usize, usize) {
    let mut rem = index;
    for i in 0..n {
        let row = n - i - 1;
        if rem < row {
            return (i, i + 1 + rem);
        }
        rem -= row;
    }
    panic!("pair index {index} out of range for n = {n}");
}

/// Read access to a dense pair-indexed weight vector.
///
/// Implemented by [`WeightedGraph`] (nonnegative weights) and by
/// [`NoisyGraph`] (signed weights, as released by randomized response).
pub trait PairWeights {
    fn n(&self) -> usize;
    fn weights(&self) -> &[f64];

    fn weight(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            self.weights()[pair_index(self.n(), i, j)]
        }
    }
}

// =============================================================================
// Graph types
// =============================================================================

/// A weighted graph on `n` vertices with a nonnegative weight for every pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedGraph {
    n: usize,
    w: Vec<f64>,
}

impl WeightedGraph {
    pub fn new(n: usize, w: Vec<f64>) -> Result<Self> {
        let expected = pair_count(n);
        if w.len() != expected {
            return Err(GraphError::LengthMismatch { n, expected, got: w.len() });
        }
        if let Some((index, &value)) = w
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(GraphError::InvalidWeight { index, value });
        }
        Ok(Self { n, w })
    }

    /// The graph with every pair weight zero.
    pub fn empty(n: usize) -> Self {
        Self { n, w: vec![0.0; pair_count(n)] }
    }

    /// Unit-weight complete graph.
    pub fn complete(n: usize) -> Self {
        Self { n, w: vec![1.0; pair_count(n)] }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut w = vec![0.0; pair_count(n)];
        for &(i, j, weight) in edges {
            check_pair(n, i, j)?;
            w[pair_index(n, i, j)] = weight;
        }
        Self::new(n, w)
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.w
    }

    pub fn total_weight(&self) -> f64 {
        self.w.iter().sum()
    }

    pub fn max_weight(&self) -> f64 {
        self.w.iter().copied().fold(0.0, f64::max)
    }

    pub fn edge_count(&self) -> usize {
        self.w.iter().filter(|&&v| v > 0.0).count()
    }

    /// Multiply every weight by `c >= 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.n, self.w.iter().map(|v| v * c).collect())
    }
}

impl PairWeights for WeightedGraph {
    fn n(&self) -> usize {
        self.n
    }
    fn weights(&self) -> &[f64] {
        &self.w
    }
}

/// Pair weights that may be negative. Produced by randomized response, which
/// keeps the raw noisy values unless clipping is requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyGraph {
    n: usize,
    w: Vec<f64>,
}

impl NoisyGraph {
    pub fn new(n: usize, w: Vec<f64>) -> Result<Self> {
        let expected = pair_count(n);
        if w.len() != expected {
            return Err(GraphError::LengthMismatch { n, expected, got: w.len() });
        }
        if let Some((index, &value)) = w.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(GraphError::InvalidWeight { index, value });
        }
        Ok(Self { n, w })
    }

    pub fn negative_count(&self) -> usize {
        self.w.iter().filter(|&&v| v < 0.0).count()
    }

    /// Replace negative weights by zero.
    pub fn clipped(&self) -> WeightedGraph {
        WeightedGraph { n: self.n, w: self.w.iter().map(|v| v.max(0.0)).collect() }
    }
}

impl PairWeights for NoisyGraph {
    fn n(&self) -> usize {
        self.n
    }
    fn weights(&self) -> &[f64] {
        &self.w
    }
}

fn check_pair(n: usize, i: usize, j: usize) -> Result<()> {
    for v in [i, j] {
        if v >= n {
            return Err(GraphError::VertexOutOfRange { vertex: v, n });
        }
    }
    if i == j {
        return Err(GraphError::InvalidPair { i, j });
    }
    Ok(())
}

// =============================================================================
// Motif adjacency and derivatives
// =============================================================================

/// Symmetric `n x n` matrix whose `(i, j)` entry is the total weight of
/// triangles containing both `i` and `j`. The diagonal is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MotifAdjacency {
    entries: DMatrix<f64>,
}

impl MotifAdjacency {
    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    /// Sum of all entries; every triangle is counted six times.
    pub fn entry_sum(&self) -> f64 {
        self.entries.sum()
    }
}

/// Derivative of the motif adjacency with respect to the weight of one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeMatrix {
    pub pair: (usize, usize),
    entries: DMatrix<f64>,
}

impl DerivativeMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }
}

/// Per-pair wedge weights `c_ij = sum_{s != i,j} w_is * w_js`, in pair order.
pub fn wedge_weights(n: usize, w: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; pair_count(n)];
    // Row-major copy so the inner loop is contiguous.
    let dense = dense_weights(n, w);
    for (idx, (i, j)) in pairs(n).enumerate() {
        let ri = &dense[i * n..(i + 1) * n];
        let rj = &dense[j * n..(j + 1) * n];
        out[idx] = ri.iter().zip(rj).map(|(a, b)| a * b).sum();
    }
    out
}

/// Symmetric row-major `n x n` copy of a pair weight vector, zero diagonal.
pub(crate) fn dense_weights(n: usize, w: &[f64]) -> Vec<f64> {
    let mut dense = vec![0.0; n * n];
    for (idx, (i, j)) in pairs(n).enumerate() {
        dense[i * n + j] = w[idx];
        dense[j * n + i] = w[idx];
    }
    dense
}

pub fn triangle_adjacency<G: PairWeights + ?Sized>(g: &G) -> MotifAdjacency {
    triangle_adjacency_raw(g.n(), g.weights())
}

/// Motif adjacency of an arbitrary (possibly signed) pair weight vector.
pub fn triangle_adjacency_raw(n: usize, w: &[f64]) -> MotifAdjacency {
    debug_assert_eq!(w.len(), pair_count(n));
    let wedges = wedge_weights(n, w);
    let mut entries = DMatrix::zeros(n, n);
    for (idx, (i, j)) in pairs(n).enumerate() {
        let a = w[idx] * wedges[idx];
        entries[(i, j)] = a;
        entries[(j, i)] = a;
    }
    MotifAdjacency { entries }
}

pub fn triangle_derivative<G: PairWeights + ?Sized>(
    g: &G,
    pair: (usize, usize),
) -> Result<DerivativeMatrix> {
    let n = g.n();
    let (k, l) = pair;
    check_pair(n, k, l)?;
    let w = g.weights();
    let mut entries = DMatrix::zeros(n, n);
    let mut base = 0.0;
    for j in (0..n).filter(|&j| j != k && j != l) {
        let wkj = w[pair_index(n, k, j)];
        let wlj = w[pair_index(n, l, j)];
        let c = wkj * wlj;
        base += c;
        entries[(k, j)] = c;
        entries[(j, k)] = c;
        entries[(l, j)] = c;
        entries[(j, l)] = c;
    }
    entries[(k, l)] = base;
    entries[(l, k)] = base;
    Ok(DerivativeMatrix { pair: (k.min(l), k.max(l)), entries })
}

/// `sum_{i,j} D^(e)_ij * cross(i, j)` for the derivative matrix of pair
/// `e = (k, l)`, without materializing `D`. `cross` must be evaluated as the
/// `(i, n + j)` entry of a symmetric `2n x 2n` matrix (or the `a_i b_j`
/// product of a split vector).
#[inline]
pub(crate) fn derivative_pairing(
    n: usize,
    dense_w: &[f64],
    wedge: f64,
    k: usize,
    l: usize,
    cross: impl Fn(usize, usize) -> f64,
) -> f64 {
    let mut total = wedge * (cross(k, l) + cross(l, k));
    let rk = &dense_w[k * n..(k + 1) * n];
    let rl = &dense_w[l * n..(l + 1) * n];
    for j in 0..n {
        if j == k || j == l {
            continue;
        }
        let c = rk[j] * rl[j];
        if c != 0.0 {
            total += c * (cross(k, j) + cross(j, k) + cross(l, j) + cross(j, l));
        }
    }
    total
}

// =============================================================================
// Cuts
// =============================================================================

/// A pair of disjoint nonempty vertex sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutSpec {
    pub s: Vec<usize>,
    pub t: Vec<usize>,
}

impl CutSpec {
    pub fn new(n: usize, mut s: Vec<usize>, mut t: Vec<usize>) -> Result<Self> {
        s.sort_unstable();
        s.dedup();
        t.sort_unstable();
        t.dedup();
        if s.is_empty() || t.is_empty() {
            return Err(GraphError::EmptyCutSide);
        }
        let mut side = vec![0u8; n];
        for &v in &s {
            if v >= n {
                return Err(GraphError::VertexOutOfRange { vertex: v, n });
            }
            side[v] = 1;
        }
        for &v in &t {
            if v >= n {
                return Err(GraphError::VertexOutOfRange { vertex: v, n });
            }
            if side[v] == 1 {
                return Err(GraphError::OverlappingCut(v));
            }
        }
        Ok(Self { s, t })
    }

    /// The bipartition `(S, V \ S)`.
    pub fn bipartition(n: usize, s: &[usize]) -> Result<Self> {
        let mask = side_mask(n, s)?;
        let t = (0..n).filter(|v| !mask[*v]).collect();
        Self::new(n, s.to_vec(), t)
    }

    /// Bipartition from a bitmask over vertices (bit `v` set means `v in S`).
    pub fn from_mask(n: usize, mask: u64) -> Result<Self> {
        let s: Vec<usize> = (0..n).filter(|v| mask >> v & 1 == 1).collect();
        Self::bipartition(n, &s)
    }

    pub fn is_bipartition(&self, n: usize) -> bool {
        self.s.len() + self.t.len() == n
    }
}

fn side_mask(n: usize, s: &[usize]) -> Result<Vec<bool>> {
    let mut mask = vec![false; n];
    for &v in s {
        if v >= n {
            return Err(GraphError::VertexOutOfRange { vertex: v, n });
        }
        mask[v] = true;
    }
    let count = mask.iter().filter(|b| **b).count();
    if count == 0 || count == n {
        return Err(GraphError::TrivialBipartition);
    }
    Ok(mask)
}

/// Triangle-motif size of `(S, V \ S)` as `1/2 * 1_S^T A 1_{V\S}`.
pub fn triangle_cut_bipartition<G: PairWeights + ?Sized>(g: &G, s: &[usize]) -> Result<f64> {
    let mask = side_mask(g.n(), s)?;
    Ok(bipartition_value(&triangle_adjacency(g), &mask))
}

pub(crate) fn bipartition_value(a: &MotifAdjacency, in_s: &[bool]) -> f64 {
    let n = a.n();
    let m = a.matrix();
    let mut total = 0.0;
    for i in (0..n).filter(|&i| in_s[i]) {
        for j in (0..n).filter(|&j| !in_s[j]) {
            total += m[(i, j)];
        }
    }
    0.5 * total
}

/// Total weight of triangles with at least one vertex in `S` and one in `T`,
/// by enumeration of all vertex triples.
pub fn triangle_cut_general<G: PairWeights + ?Sized>(g: &G, cut: &CutSpec) -> Result<f64> {
    let n = g.n();
    let cut = CutSpec::new(n, cut.s.clone(), cut.t.clone())?;
    let mut side = vec![0u8; n];
    for &v in &cut.s {
        side[v] = 1;
    }
    for &v in &cut.t {
        side[v] = 2;
    }
    let w = g.weights();
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let wij = w[pair_index(n, i, j)];
            if wij == 0.0 {
                continue;
            }
            for k in (j + 1)..n {
                let touched = (1u8 << side[i]) | (1u8 << side[j]) | (1u8 << side[k]);
                if touched & 0b110 != 0b110 {
                    continue;
                }
                total += wij * w[pair_index(n, j, k)] * w[pair_index(n, i, k)];
            }
        }
    }
    Ok(total)
}

/// Total weight of all triangles.
pub fn total_triangle_weight<G: PairWeights + ?Sized>(g: &G) -> f64 {
    triangle_adjacency(g).entry_sum() / 6.0
}

// =============================================================================
// Sensitivity quantities
// =============================================================================

/// `max_{(i,j)} sum_{s != i,j} w_is * w_js`: the largest change of any
/// triangle-motif cut caused by a unit change of a single pair weight.
pub fn local_sensitivity_l3<G: PairWeights + ?Sized>(g: &G) -> f64 {
    wedge_weights(g.n(), g.weights()).into_iter().fold(0.0, f64::max)
}

/// Cap-derived quantities `(U_tri, U_lam)`:
/// `U_tri = max_{(i,j)} sum_s (u_ij u_is + u_is u_js + u_js u_ij)` and
/// `U_lam = max_{(i,j)} sum_s (u_is + u_js)`.
pub fn u_quantities(n: usize, u: &[f64]) -> (f64, f64) {
    let wedges = wedge_weights(n, u);
    let sums = wedge_sums(n, u);
    let mut u_tri: f64 = 0.0;
    let mut u_lam: f64 = 0.0;
    for idx in 0..pair_count(n) {
        u_tri = u_tri.max(wedges[idx] + u[idx] * sums[idx]);
        u_lam = u_lam.max(sums[idx]);
    }
    (u_tri, u_lam)
}

/// Per-pair `sum_{s != i,j} (u_is + u_js)`, in pair order.
pub fn wedge_sums(n: usize, u: &[f64]) -> Vec<f64> {
    let mut degree = vec![0.0; n];
    for (idx, (i, j)) in pairs(n).enumerate() {
        degree[i] += u[idx];
        degree[j] += u[idx];
    }
    pairs(n)
        .enumerate()
        .map(|(idx, (i, j))| degree[i] + degree[j] - 2.0 * u[idx])
        .collect()
}
