//! Seeded noise sources and calibration of the mechanism's run parameters.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error("Laplace scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("Gaussian vector dimension must be at least 1")]
    ZeroDimension,
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter { name: &'static str, value: f64, reason: &'static str },
    #[error("pre-drawn noise record exhausted ({family} family)")]
    RecordExhausted { family: &'static str },
}

pub type Result<T> = std::result::Result<T, DpError>;

// =============================================================================
// Noise sources
// =============================================================================

/// Anything that can hand out Laplace and Gaussian draws.
///
/// [`NoiseStream`] is the seeded production source; [`NoiseRecord`] replays
/// pre-drawn values so that noise-consuming operations can be tested
/// deterministically.
pub trait NoiseSource {
    /// One draw from `Lap(scale)`.
    fn laplace(&mut self, scale: f64) -> Result<f64>;

    /// `dim` independent standard normal draws.
    fn gaussian_vector(&mut self, dim: usize) -> Result<Vec<f64>>;
}

/// Inverse CDF of `Lap(scale)` at `u in (0, 1)`.
pub fn laplace_inverse_cdf(u: f64, scale: f64) -> f64 {
    if u < 0.5 {
        scale * (2.0 * u).ln()
    } else {
        -scale * (2.0 - 2.0 * u).ln()
    }
}

const LAPLACE_FAMILY: u64 = 0;
const GAUSSIAN_FAMILY: u64 = 1;

/// Seeded noise with one independent ChaCha20 stream per noise family.
///
/// Identical seed and call sequence give identical draws. Not meant to be
/// shared between threads; use [`NoiseStream::substream`] to hand each worker
/// its own independent stream.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    seed: u64,
    substream: u64,
    laplace_rng: ChaCha20Rng,
    gaussian_rng: ChaCha20Rng,
    laplace_draws: u64,
    gaussian_draws: u64,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        Self::with_substream(seed, 0)
    }

    fn with_substream(seed: u64, substream: u64) -> Self {
        let family_rng = |family: u64| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(substream.wrapping_mul(2).wrapping_add(family));
            rng
        };
        Self {
            seed,
            substream,
            laplace_rng: family_rng(LAPLACE_FAMILY),
            gaussian_rng: family_rng(GAUSSIAN_FAMILY),
            laplace_draws: 0,
            gaussian_draws: 0,
        }
    }

    /// An independent stream derived from this one's seed and `index`.
    /// Deterministic: the same `(seed, substream, index)` always gives the same
    /// child, regardless of how many draws the parent has made.
    pub fn substream(&self, index: u64) -> Self {
        let child = splitmix64(self.substream ^ splitmix64(index.wrapping_add(1)));
        // Stream ids are 2 * substream + family, keep the top bit clear.
        Self::with_substream(self.seed, child >> 1)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn substream_id(&self) -> u64 {
        self.substream
    }

    pub fn laplace_draws(&self) -> u64 {
        self.laplace_draws
    }

    pub fn gaussian_draws(&self) -> u64 {
        self.gaussian_draws
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl NoiseSource for NoiseStream {
    fn laplace(&mut self, scale: f64) -> Result<f64> {
        check_scale(scale)?;
        let u = loop {
            let u: f64 = self.laplace_rng.random();
            if u > 0.0 {
                break u;
            }
        };
        self.laplace_draws += 1;
        Ok(laplace_inverse_cdf(u, scale))
    }

    fn gaussian_vector(&mut self, dim: usize) -> Result<Vec<f64>> {
        if dim == 0 {
            return Err(DpError::ZeroDimension);
        }
        self.gaussian_draws += dim as u64;
        Ok((0..dim).map(|_| self.gaussian_rng.sample(StandardNormal)).collect())
    }
}

fn check_scale(scale: f64) -> Result<()> {
    if scale > 0.0 && scale.is_finite() {
        Ok(())
    } else {
        Err(DpError::InvalidScale(scale))
    }
}

/// Pre-drawn noise, returned verbatim in order. Laplace values are returned
/// as recorded regardless of the requested scale.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub laplace: VecDeque<f64>,
    pub gaussian: VecDeque<f64>,
}

impl NoiseRecord {
    pub fn new(laplace: impl IntoIterator<Item = f64>, gaussian: impl IntoIterator<Item = f64>) -> Self {
        Self { laplace: laplace.into_iter().collect(), gaussian: gaussian.into_iter().collect() }
    }

    /// A record that answers every Laplace request with zero and every
    /// Gaussian request with zeros.
    pub fn zeros(laplace: usize, gaussian: usize) -> Self {
        Self::new(vec![0.0; laplace], vec![0.0; gaussian])
    }
}

impl NoiseSource for NoiseRecord {
    fn laplace(&mut self, scale: f64) -> Result<f64> {
        check_scale(scale)?;
        self.laplace.pop_front().ok_or(DpError::RecordExhausted { family: "laplace" })
    }

    fn gaussian_vector(&mut self, dim: usize) -> Result<Vec<f64>> {
        if dim == 0 {
            return Err(DpError::ZeroDimension);
        }
        if self.gaussian.len() < dim {
            return Err(DpError::RecordExhausted { family: "gaussian" });
        }
        Ok(self.gaussian.drain(..dim).collect())
    }
}

// =============================================================================
// Calibration
// =============================================================================

/// Constants hidden inside the asymptotic parameter choices. All default to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningConstants {
    pub c_t: f64,
    pub c_lambda: f64,
    pub c_eta: f64,
    pub c_deg_w: f64,
    pub c_deg_l3: f64,
}

impl Default for TuningConstants {
    fn default() -> Self {
        Self { c_t: 1.0, c_lambda: 1.0, c_eta: 1.0, c_deg_w: 1.0, c_deg_l3: 1.0 }
    }
}

impl TuningConstants {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("c_t", self.c_t),
            ("c_lambda", self.c_lambda),
            ("c_eta", self.c_eta),
            ("c_deg_w", self.c_deg_w),
            ("c_deg_l3", self.c_deg_l3),
        ] {
            positive(name, value)?;
        }
        Ok(())
    }
}

/// Privacy budget and failure probability of one release.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
    pub beta: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64, beta: f64) -> Result<Self> {
        positive("epsilon", epsilon)?;
        unit_interval("delta", delta)?;
        unit_interval("beta", beta)?;
        Ok(Self { epsilon, delta, beta })
    }

    /// Budget of each of the three preprocessing releases.
    pub fn stage_budget(&self) -> f64 {
        self.epsilon / 6.0
    }
}

/// Public quantities the run parameters are derived from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationInputs {
    pub epsilon: f64,
    pub delta: f64,
    pub beta: f64,
    /// Released total weight `W`.
    pub total_weight: f64,
    pub u_tri: f64,
    pub u_lam: f64,
    /// Released sensitivity proxy.
    pub l3_tilde: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismParams {
    pub epsilon: f64,
    pub delta: f64,
    pub beta: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    pub eps4: f64,
    /// Inner mirror-descent steps per restart.
    pub iterations: usize,
    /// Outer restarts.
    pub restarts: usize,
    /// Weight of the log-det regularizer.
    pub lambda: f64,
    pub eta: f64,
    /// Mirror-map radius `sqrt(W ln n)`.
    pub radius: f64,
    /// Gradient bound `(U_tri + U_lam * L / eps) ln n`.
    pub gradient_bound: f64,
    pub constants: TuningConstants,
}

/// `max(1, ceil(log_3(3 / beta)))`.
pub fn restart_count(beta: f64) -> usize {
    let raw = (3.0 / beta).ln() / 3f64.ln();
    // Guard exact powers of three against a ceil of 2.0000000000000004.
    let rounded = (raw - 1e-12).ceil();
    rounded.max(1.0) as usize
}

pub fn calibrate(inputs: &CalibrationInputs, constants: &TuningConstants) -> Result<MechanismParams> {
    let CalibrationInputs { epsilon, delta, beta, total_weight, u_tri, u_lam, l3_tilde, n } = *inputs;
    positive("epsilon", epsilon)?;
    unit_interval("delta", delta)?;
    unit_interval("beta", beta)?;
    positive("W", total_weight)?;
    positive("U_tri", u_tri)?;
    positive("U_lam", u_lam)?;
    positive("l3_tilde", l3_tilde)?;
    if n < 2 {
        return Err(DpError::InvalidParameter { name: "n", value: n as f64, reason: "need at least 2 vertices" });
    }
    constants.validate()?;

    let nf = n as f64;
    let restarts = restart_count(beta);
    let lf = restarts as f64;
    let stage = epsilon / 6.0;
    let eps4 = epsilon / (6.0 * lf);

    let raw_t = constants.c_t * total_weight * (epsilon * u_tri + u_lam)
        / (nf * (nf / delta).ln() * l3_tilde);
    if !raw_t.is_finite() {
        return Err(DpError::InvalidParameter { name: "T", value: raw_t, reason: "iteration count is not finite" });
    }
    let iterations = raw_t.round().max(1.0) as usize;
    let tf = iterations as f64;

    let log_t = (tf.max(2.0) / delta).ln();
    let lambda = constants.c_lambda / epsilon * l3_tilde * tf.sqrt() * log_t.powf(1.5) * (3.0 / beta).ln();

    let ln_n = nf.ln();
    let radius = (total_weight * ln_n).sqrt();
    let gradient_bound = (u_tri + u_lam * lf / epsilon) * ln_n;
    let eta = constants.c_eta * radius / gradient_bound * (2.0 / tf).sqrt();

    for (name, value) in [("lambda", lambda), ("eta", eta)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(DpError::InvalidParameter { name, value, reason: "calibrated value not positive and finite" });
        }
    }

    Ok(MechanismParams {
        epsilon,
        delta,
        beta,
        eps1: stage,
        eps2: stage,
        eps3: stage,
        eps4,
        iterations,
        restarts,
        lambda,
        eta,
        radius,
        gradient_bound,
        constants: *constants,
    })
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(DpError::InvalidParameter { name, value, reason: "must be positive and finite" })
    }
}

fn unit_interval(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(DpError::InvalidParameter { name, value, reason: "must lie in (0, 1)" })
    }
}
