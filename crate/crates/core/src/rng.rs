//! Seed derivation for the offline and online random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream used for offline disturbance samples.
pub const OFFLINE_STREAM: u64 = 0;
/// Stream used for plant disturbances during closed-loop rollouts.
pub const ONLINE_STREAM: u64 = 1;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combines a parent seed with a child index into a new seed.
///
/// Plain xor would make `(trial 1, draw 2)` collide with `(trial 2, draw 1)`,
/// so the index is hashed before mixing.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    splitmix64(parent ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

/// Seed of the offline sample set for Monte Carlo trial `trial`.
pub fn trial_seed(base: u64, trial: usize) -> u64 {
    derive_seed(base, trial as u64)
}

/// Seed of the plant disturbances for draw `draw` of trial `trial`.
pub fn draw_seed(base: u64, trial: usize, draw: usize) -> u64 {
    derive_seed(derive_seed(base, trial as u64), (draw as u64) | (1 << 63))
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_independent() {
        let mut a = stream_rng(7, OFFLINE_STREAM);
        let mut b = stream_rng(7, ONLINE_STREAM);
        let xa: u64 = a.random();
        let xb: u64 = b.random();
        assert_ne!(xa, xb);
    }

    #[test]
    fn draw_seeds_do_not_collide_on_swapped_indices() {
        assert_ne!(draw_seed(0, 1, 2), draw_seed(0, 2, 1));
        assert_ne!(trial_seed(5, 0), trial_seed(5, 1));
    }
}
