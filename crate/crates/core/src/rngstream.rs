//! Named deterministic random substreams.
//!
//! Every source of randomness in an experiment is derived from a single root
//! seed plus a stream label and integer indices. Substreams are independent of
//! evaluation order, so agents can be processed in any order (or in parallel)
//! without changing a rollout.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

/// Stream label for the traffic simulator (slowdowns, turns, spawns).
pub const SIM: &str = "sim";
/// Stream label for per-agent per-tick policy sampling (Gumbel noise, actions).
pub const AGENT: &str = "agent";
/// Stream label for parameter initialization.
pub const INIT: &str = "init";
/// Stream label for per-episode derivation.
pub const EPISODE: &str = "episode";
/// Stream label for road-blocking perturbation choices.
pub const PERTURB: &str = "perturb";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Mixes a root seed, a stream label, and indices into a single 64-bit seed.
pub fn mix(root: u64, label: &str, idx: &[u64]) -> u64 {
    let mut acc = splitmix64(root ^ fnv1a(label));
    for i in idx {
        acc = splitmix64(acc ^ i.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    acc
}

/// Derives the substream `(root, label, idx...)` as a seeded generator.
pub fn substream(root: u64, label: &str, idx: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(root, label, idx))
}
