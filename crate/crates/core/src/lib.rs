//! Personality-adaptive differential privacy.
//!
//! Users' privacy concern is scored from Five-Factor-Model personality
//! signals, the score is turned into a per-record privacy budget, and the
//! budgets are enforced PINQ-style while an analyst issues queries. The
//! [`simulation`] module compares budget controllers (one global budget,
//! random per-record budgets, and budgets derived from gold or learned
//! concern scores).

pub mod concern;
pub mod error;
pub mod features;
pub mod learners;
pub mod ledger;
pub mod mechanisms;
pub mod pipeline;
pub mod simulation;
pub mod synth;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG used everywhere randomness is needed. ChaCha keeps streams
/// identical across platforms for a given seed.
pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
