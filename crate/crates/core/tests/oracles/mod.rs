//! Independent reference implementations shared by test targets.
#![allow(dead_code)]

pub mod chem;
pub mod fold;
pub mod metrics;
pub mod schedule;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
