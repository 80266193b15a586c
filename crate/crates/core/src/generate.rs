//! Unit-weight random graphs for experiments and tests.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{pair_count, pair_index, WeightedGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenerateError {
    #[error("edge probability {0} must lie in [0, 1]")]
    InvalidProbability(f64),
    #[error("no {d}-regular graph on {n} vertices: {reason}")]
    InvalidDegree { n: usize, d: usize, reason: &'static str },
    #[error("graph needs at least one vertex")]
    NoVertices,
    #[error("random regular generation failed after {0} restarts")]
    RegularExhausted(usize),
}

pub type Result<T> = std::result::Result<T, GenerateError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum GraphModel {
    /// Each pair independently present with probability `p`.
    Gnp { n: usize, p: f64 },
    Complete { n: usize },
    /// Uniformly random-ish `d`-regular graph.
    Regular { n: usize, d: usize },
}

const REGULAR_RESTARTS: usize = 1000;

pub fn generate(model: GraphModel, seed: u64) -> Result<WeightedGraph> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    match model {
        GraphModel::Gnp { n, p } => {
            if n == 0 {
                return Err(GenerateError::NoVertices);
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(GenerateError::InvalidProbability(p));
            }
            let w = (0..pair_count(n)).map(|_| if rng.random::<f64>() < p { 1.0 } else { 0.0 }).collect();
            Ok(WeightedGraph::new(n, w).expect("unit weights are valid"))
        }
        GraphModel::Complete { n } => {
            if n == 0 {
                return Err(GenerateError::NoVertices);
            }
            Ok(WeightedGraph::complete(n))
        }
        GraphModel::Regular { n, d } => regular(n, d, &mut rng),
    }
}

/// Steger-Wormald pairing: repeatedly join two random free stubs on
/// distinct, not yet adjacent vertices; restart if the process gets stuck.
fn regular(n: usize, d: usize, rng: &mut ChaCha20Rng) -> Result<WeightedGraph> {
    if n == 0 {
        return Err(GenerateError::NoVertices);
    }
    if d >= n {
        return Err(GenerateError::InvalidDegree { n, d, reason: "degree must be below the vertex count" });
    }
    if (n * d) % 2 == 1 {
        return Err(GenerateError::InvalidDegree { n, d, reason: "n * d must be even" });
    }
    'restart: for _ in 0..REGULAR_RESTARTS {
        let mut w = vec![0.0; pair_count(n)];
        let mut stubs: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, d)).collect();
        stubs.shuffle(rng);
        while !stubs.is_empty() {
            let suitable = |a: usize, b: usize, w: &[f64]| a != b && w[pair_index(n, a, b)] == 0.0;
            let mut chosen = None;
            for _ in 0..(4 * stubs.len()).max(16) {
                let x = rng.random_range(0..stubs.len());
                let y = rng.random_range(0..stubs.len());
                if suitable(stubs[x], stubs[y], &w) {
                    chosen = Some((x, y));
                    break;
                }
            }
            let (x, y) = match chosen {
                Some(c) => c,
                None => {
                    // Fall back to an exhaustive search before giving up.
                    let found = (0..stubs.len())
                        .flat_map(|x| (x + 1..stubs.len()).map(move |y| (x, y)))
                        .filter(|&(x, y)| suitable(stubs[x], stubs[y], &w))
                        .collect::<Vec<_>>();
                    if found.is_empty() {
                        continue 'restart;
                    }
                    found[rng.random_range(0..found.len())]
                }
            };
            let (a, b) = (stubs[x], stubs[y]);
            w[pair_index(n, a, b)] = 1.0;
            let (hi, lo) = if x > y { (x, y) } else { (y, x) };
            stubs.swap_remove(hi);
            stubs.swap_remove(lo);
        }
        return Ok(WeightedGraph::new(n, w).expect("unit weights are valid"));
    }
    Err(GenerateError::RegularExhausted(REGULAR_RESTARTS))
}
