//! Seeded random sub-streams and the sampling distributions used by the
//! traffic, mobility and dormancy models.
//!
//! Every `(seed, stream_id)` pair maps to an independent ChaCha8 stream, so a
//! UE's traffic draws do not shift when another model consumes randomness.
//! Each sample consumes exactly one 64-bit draw regardless of distribution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::UeId;

#[derive(Debug, Error, PartialEq)]
pub enum RngError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
}

/// What a per-UE sub-stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    Placement = 0,
    Traffic = 1,
    Call = 2,
    Mobility = 3,
    Dormancy = 4,
    Drop = 5,
    Collision = 6,
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn for_ue(seed: u64, ue: UeId, purpose: Purpose) -> Self {
        Self::new(seed, (u64::from(ue) << 8) | purpose as u64)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform01(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform01() < p
    }

    /// Uniform integer in `[0, n)`; `n` must be nonzero.
    pub fn below(&mut self, n: u32) -> u32 {
        ((self.uniform01() * f64::from(n)) as u32).min(n - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase", deny_unknown_fields)]
pub enum Distribution {
    Exponential { mean: f64 },
    Deterministic { value: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Discrete table: `values[i]` drawn with weight `weights[i]`.
    Empirical { values: Vec<f64>, weights: Vec<f64> },
}

impl Distribution {
    pub fn validate(&self) -> Result<(), RngError> {
        let bad = |m: String| Err(RngError::InvalidDistribution(m));
        match self {
            Distribution::Exponential { mean } => {
                if !(mean.is_finite() && *mean > 0.0) {
                    return bad(format!("exponential mean must be positive, got {mean}"));
                }
            }
            Distribution::Deterministic { value } => {
                if !value.is_finite() {
                    return bad(format!("deterministic value must be finite, got {value}"));
                }
            }
            Distribution::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                    return bad(format!("uniform requires lo <= hi, got [{lo}, {hi}]"));
                }
            }
            Distribution::Empirical { values, weights } => {
                if values.is_empty() || values.len() != weights.len() {
                    return bad("empirical table needs equal, nonzero numbers of values and weights".into());
                }
                if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
                    || weights.iter().sum::<f64>() <= 0.0
                {
                    return bad("empirical weights must be nonnegative with a positive sum".into());
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match self {
            Distribution::Exponential { mean } => *mean,
            Distribution::Deterministic { value } => *value,
            Distribution::Uniform { lo, hi } => 0.5 * (lo + hi),
            Distribution::Empirical { values, weights } => {
                let total: f64 = weights.iter().sum();
                values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total
            }
        }
    }

    /// Smallest value the distribution can produce.
    pub fn min_value(&self) -> f64 {
        match self {
            Distribution::Exponential { .. } => 0.0,
            Distribution::Deterministic { value } => *value,
            Distribution::Uniform { lo, .. } => *lo,
            Distribution::Empirical { values, weights } => values
                .iter()
                .zip(weights)
                .filter(|(_, w)| **w > 0.0)
                .map(|(v, _)| *v)
                .fold(f64::INFINITY, f64::min),
        }
    }

    fn sample_with(&self, u: f64) -> f64 {
        match self {
            Distribution::Exponential { mean } => -mean * (1.0 - u).ln(),
            Distribution::Deterministic { value } => *value,
            Distribution::Uniform { lo, hi } => lo + (hi - lo) * u,
            Distribution::Empirical { values, weights } => {
                let total: f64 = weights.iter().sum();
                let mut target = u * total;
                for (v, w) in values.iter().zip(weights) {
                    if target < *w {
                        return *v;
                    }
                    target -= w;
                }
                // Rounding can leave `target` marginally above the last weight.
                *values
                    .iter()
                    .zip(weights)
                    .rev()
                    .find(|(_, w)| **w > 0.0)
                    .map(|(v, _)| v)
                    .unwrap_or(&values[values.len() - 1])
            }
        }
    }
}

pub fn next_sample(stream: &mut RngStream, dist: &Distribution) -> Result<f64, RngError> {
    dist.validate()?;
    Ok(dist.sample_with(stream.uniform01()))
}

/// Sampling for distributions already validated at config load.
pub(crate) fn sample(stream: &mut RngStream, dist: &Distribution) -> f64 {
    dist.sample_with(stream.uniform01())
}
