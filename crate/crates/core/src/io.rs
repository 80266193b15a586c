//! Line-oriented graph files.
//!
//! ```text
//! n=4
//! 0,1,1.0
//! 1,3,0.25
//! ```
//!
//! The header gives the vertex count; each further line is `i,j,weight` with
//! `0 <= i < j < n` and a nonnegative decimal weight. Unlisted pairs have
//! weight zero. Blank lines and lines starting with `#` are ignored. Writers
//! list nonzero pairs in lexicographic order with the shortest decimal that
//! round-trips exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::graph::{pair_count, pair_index, pairs, GraphError, NoisyGraph, PairWeights, WeightedGraph};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot access {path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing header line `n=<vertex count>`")]
    MissingHeader,
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: pair ({i},{j}) must satisfy 0 <= i < j < n = {n}")]
    InvalidPair { line: usize, i: usize, j: usize, n: usize },
    #[error("line {line}: negative weight {weight}")]
    NegativeWeight { line: usize, weight: f64 },
    #[error("line {line}: pair ({i},{j}) already listed on line {first}")]
    DuplicatePair { line: usize, i: usize, j: usize, first: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub type Result<T> = std::result::Result<T, IoError>;

pub fn parse_graph_str(text: &str) -> Result<WeightedGraph> {
    let (n, w) = parse_weights(text, false)?;
    Ok(WeightedGraph::new(n, w)?)
}

/// Like [`parse_graph_str`] but accepts negative weights, as written for
/// unclipped randomized-response releases.
pub fn parse_signed_graph_str(text: &str) -> Result<NoisyGraph> {
    let (n, w) = parse_weights(text, true)?;
    Ok(NoisyGraph::new(n, w)?)
}

fn parse_weights(text: &str, allow_negative: bool) -> Result<(usize, Vec<f64>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (header_line, header) = lines.next().ok_or(IoError::MissingHeader)?;
    let n: usize = header
        .strip_prefix("n=")
        .ok_or(IoError::MissingHeader)?
        .trim()
        .parse()
        .map_err(|e| IoError::Malformed { line: header_line, reason: format!("bad vertex count: {e}") })?;

    let mut w = vec![0.0; pair_count(n)];
    let mut first_seen = vec![0usize; pair_count(n)];
    for (line, content) in lines {
        let fields: Vec<&str> = content.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(IoError::Malformed { line, reason: format!("expected `i,j,weight`, got `{content}`") });
        }
        let vertex = |s: &str| {
            s.parse::<usize>().map_err(|e| IoError::Malformed { line, reason: format!("bad vertex `{s}`: {e}") })
        };
        let (i, j) = (vertex(fields[0])?, vertex(fields[1])?);
        let weight: f64 = fields[2]
            .parse()
            .map_err(|e| IoError::Malformed { line, reason: format!("bad weight `{}`: {e}", fields[2]) })?;
        if !weight.is_finite() {
            return Err(IoError::Malformed { line, reason: format!("weight `{}` is not finite", fields[2]) });
        }
        if i >= j || j >= n {
            return Err(IoError::InvalidPair { line, i, j, n });
        }
        if weight < 0.0 && !allow_negative {
            return Err(IoError::NegativeWeight { line, weight });
        }
        let idx = pair_index(n, i, j);
        if first_seen[idx] != 0 {
            return Err(IoError::DuplicatePair { line, i, j, first: first_seen[idx] });
        }
        first_seen[idx] = line;
        w[idx] = weight;
    }
    Ok((n, w))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| IoError::File { path: path.to_path_buf(), source })
}

pub fn parse_graph(path: &Path) -> Result<WeightedGraph> {
    parse_graph_str(&read(path)?)
}

pub fn parse_signed_graph(path: &Path) -> Result<NoisyGraph> {
    parse_signed_graph_str(&read(path)?)
}

/// File contents for `g`. Signed weights are written as-is and can be read
/// back with [`parse_signed_graph`].
pub fn format_graph<G: PairWeights + ?Sized>(g: &G) -> String {
    let n = g.n();
    let mut out = format!("n={n}\n");
    for ((i, j), w) in pairs(n).zip(g.weights()) {
        if *w != 0.0 {
            writeln!(out, "{i},{j},{w:?}").expect("writing to a String cannot fail");
        }
    }
    out
}

pub fn write_graph<G: PairWeights + ?Sized>(g: &G, path: &Path) -> Result<()> {
    std::fs::write(path, format_graph(g)).map_err(|source| IoError::File { path: path.to_path_buf(), source })
}
