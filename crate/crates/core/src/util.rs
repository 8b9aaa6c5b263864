//! Small deterministic helpers shared across modules.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over raw bytes. Stable across platforms and releases.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a64_with(FNV_OFFSET, bytes)
}

/// FNV-1a continuing from an arbitrary state.
pub fn fnv1a64_with(state: u64, bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(state, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Per-key RNG derived from a global seed, so results do not depend on iteration order.
pub fn keyed_rng(seed: u64, key: &str) -> ChaCha8Rng {
    let mixed = fnv1a64_with(fnv1a64(&seed.to_le_bytes()), key.as_bytes());
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Collapses whitespace runs to their first character and trims the ends.
pub fn squeeze_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut prev_ws = false;
    for c in text.chars() {
        let ws = c.is_whitespace();
        if !(ws && prev_ws) {
            out.push(c);
        }
        prev_ws = ws;
    }
    out.trim().to_string()
}
