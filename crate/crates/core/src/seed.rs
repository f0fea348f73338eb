//! Counter-based seed derivation.
//!
//! Every random stream in an experiment is keyed by its logical coordinates
//! (master seed, repeat, batch, candidate, stage), never by execution order,
//! so parallel and sequential runs draw identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream identifiers. The discriminant is mixed into the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stage {
    Data = 1,
    Autoencoder = 2,
    NoiseProbe = 3,
    Candidates = 4,
    Train = 5,
    Baseline = 6,
    BaselineWeights = 7,
    Subsample = 8,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a base seed with an ordered list of coordinates.
pub fn derive(base: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix64(base), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

pub fn derive_stage(master: u64, stage: Stage, coords: &[u64]) -> u64 {
    let mut all = Vec::with_capacity(coords.len() + 1);
    all.push(stage as u64);
    all.extend_from_slice(coords);
    derive(master, &all)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
