//! Seeded random streams.
//!
//! All randomness comes from ChaCha8 (`rand_chacha`), whose output is
//! specified bit-for-bit and identical on every platform. Independent
//! sub-streams of one seed use ChaCha's 64-bit stream selector, and derived
//! seeds are produced with the SplitMix64 finaliser.

use crate::kernel::normalize_columns_sphere;
use crate::mat::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type SbssRng = ChaCha8Rng;

/// Sub-stream identifiers.
pub mod streams {
    pub const SOURCES: u64 = 1;
    pub const MIXING: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const INIT: u64 = 4;
    pub const REDRAW: u64 = 5;
}

pub fn stream(seed: u64, stream: u64) -> SbssRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of labels into a new seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn standard_normal(rows: usize, cols: usize, rng: &mut SbssRng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Standard-normal matrix with unit-norm columns.
pub fn random_unit_columns(rows: usize, cols: usize, rng: &mut SbssRng) -> Mat {
    loop {
        let n = normalize_columns_sphere(&standard_normal(rows, cols, rng));
        if n.degenerate.is_empty() {
            return n.matrix;
        }
    }
}
