//! Deterministic, replayable randomness keyed by (run id, purpose, draw index).
//!
//! Coupling-from-the-past repeatedly extends a simulation window backwards in
//! time and must re-read exactly the random values it saw before. Sequential
//! generators make that fragile, so every variate here is a pure function of a
//! [`StreamKey`] and the global seed: there is no hidden state, and replaying
//! any prefix of any stream after arbitrary other activity yields identical
//! values.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RngError {
    #[error("rate must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("rho must lie in [0, 1), got {0}")]
    RhoOutOfRange(f64),
}

/// What a draw is for. Keys embed the server index so per-server streams
/// never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    /// Event stream of the reversed-time queue-length chain at one server.
    ReversedPath { server: u32 },
    /// Stationary queue-length draw at time zero for one server.
    StationaryInit { server: u32 },
    /// Residual/full service durations for jobs still present at time zero.
    FreshResidual { server: u32 },
}

impl Purpose {
    fn words(self) -> (u64, u64) {
        match self {
            Purpose::ReversedPath { server } => (1, server as u64),
            Purpose::StationaryInit { server } => (2, server as u64),
            Purpose::FreshResidual { server } => (3, server as u64),
        }
    }
}

/// Identifies one uniform variate forever.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub run_id: u64,
    pub purpose: Purpose,
    pub index: u64,
}

impl StreamKey {
    pub fn new(run_id: u64, purpose: Purpose, index: u64) -> Self {
        StreamKey {
            run_id,
            purpose,
            index,
        }
    }
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

// splitmix64 finalizer
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_words(seed: u64, words: [u64; 4]) -> u64 {
    let mut h = mix64(seed ^ GOLDEN);
    for (i, w) in words.iter().enumerate() {
        h = mix64(h ^ w.wrapping_add(GOLDEN.wrapping_mul(i as u64 + 1)));
    }
    h
}

/// Stateless source of keyed variates. Copy it freely; all methods are pure.
#[derive(Debug, Clone, Copy)]
pub struct Streams {
    seed: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform variate in the open interval (0, 1).
    pub fn uniform(&self, key: StreamKey) -> f64 {
        let (tag, server) = key.purpose.words();
        let h = hash_words(self.seed, [key.run_id, tag, server, key.index]);
        // 53 mantissa bits, offset by half an ulp so 0 and 1 are unreachable.
        ((h >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
    }

    /// Exponential variate with the given rate, by inverse transform.
    pub fn exponential(&self, key: StreamKey, rate: f64) -> Result<f64, RngError> {
        if !(rate > 0.0) {
            return Err(RngError::NonPositiveRate(rate));
        }
        Ok(exponential_from_uniform(self.uniform(key), rate))
    }

    /// Stationary queue-length draw for a single-server Markov queue at
    /// utilisation `rho`: P(N = n) = (1 - rho) rho^n on {0, 1, 2, ...}.
    pub fn geometric_queue_length(&self, key: StreamKey, rho: f64) -> Result<u64, RngError> {
        if !(0.0..1.0).contains(&rho) {
            return Err(RngError::RhoOutOfRange(rho));
        }
        if rho == 0.0 {
            return Ok(0);
        }
        // P(N >= n) = rho^n, so N = floor(ln u / ln rho) for u in (0, 1).
        let u = self.uniform(key);
        Ok((u.ln() / rho.ln()).floor() as u64)
    }
}

/// Inverse-transform step, exposed so the mapping itself is testable.
pub fn exponential_from_uniform(u: f64, rate: f64) -> f64 {
    -u.ln() / rate
}
