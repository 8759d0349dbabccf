//! Deterministic random streams.
//!
//! All randomness is drawn from ChaCha8 (a counter-based stream cipher).
//! Independent streams are keyed by (master seed, label) so results do not
//! depend on the order in which units, phases, or workers consume numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Named substream, e.g. `"data"`, `"init"`, `"dropout"`, `"shuffle"`.
pub fn substream(seed: u64, label: &str) -> Rng {
    ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(fnv1a(label))))
}

/// Per-unit stream inside a labelled family: the ChaCha stream id is the unit index.
pub fn unit_stream(seed: u64, label: &str, unit: u64) -> Rng {
    let mut rng = substream(seed, label);
    rng.set_stream(unit);
    rng
}

/// Seed derived from a parent seed and a label, for handing to child components.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    mix64(seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ fnv1a(label))
}
