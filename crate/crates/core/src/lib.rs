//! Differentially private release of synthetic weighted graphs that preserve
//! the triangle-motif size of every cut.
//!
//! - [`graph`]: weighted graphs, motif adjacency, cuts, sensitivity.
//! - [`dp`]: seeded noise and parameter calibration.
//! - [`sdp`]: the log-det regularized inner maximization.
//! - [`mechanism`]: preprocessing, the mirror-descent release, baseline.
//! - [`eval`]: oracles and cut-error measurement.
//! - [`io`], [`generate`], [`report`]: files, random graphs, report output.
//! - [`verify`]: the invariant suite behind `motifcut verify`.

pub mod dp;
pub mod eval;
pub mod graph;
pub mod mechanism;
pub mod sdp;
pub mod generate;
pub mod io;
pub mod report;
pub mod verify;
