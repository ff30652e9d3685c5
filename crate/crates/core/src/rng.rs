//! Deterministic random-stream derivation.
//!
//! Every stochastic draw in the system comes from a stream derived as
//! `mix(master_seed, label, counters...)`. Streams are independent of each
//! other and of execution order, which is what makes checkpoint-resume
//! bitwise identical to an uninterrupted run: the RNG for step `i` depends
//! only on the master seed and `i`, never on how many draws happened before.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; full-avalanche mixing of one word into a state.
fn splitmix(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Collapse a master seed, a stream label, and counters into one sub-seed.
pub fn derive_seed(master: u64, label: &str, counters: &[u64]) -> u64 {
    let mut s = splitmix(master ^ fnv1a(label.as_bytes()));
    for &c in counters {
        s = splitmix(s ^ c);
    }
    s
}

/// Independent deterministic stream for `(master, label, counters)`.
pub fn stream(master: u64, label: &str, counters: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, label, counters))
}
