//! Counter-mode pseudorandom function used to realize coordinates lazily.
//!
//! The uniform attached to coordinate `g` under seed `s` is
//! `mix(mix(s) + key(g) * K)` mapped to `[0, 1)`; the same pair always gives
//! the same value, so configurations need no mutable state.

use crate::group::mix64;

const KEY_MUL: u64 = 0xD1B5_4A32_D192_ED03;

/// Per-stream seed preprocessing.
#[inline]
pub fn stream_seed(seed: u64) -> u64 {
    mix64(seed ^ 0x6A09_E667_F3BC_C908)
}

/// Uniform in `[0,1)` for coordinate key `key` of a stream prepared by [`stream_seed`].
#[inline]
pub fn coordinate_uniform(stream: u64, key: u64) -> f64 {
    let z = mix64(stream.wrapping_add(key.wrapping_mul(KEY_MUL)));
    (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Derives the `index`-th sub-seed of `master`.
///
/// Splitting rule: `sub_seed(m, i) = mix(m XOR mix(i + 0x243F6A8885A308D3))`.
#[inline]
pub fn sub_seed(master: u64, index: u64) -> u64 {
    mix64(master ^ mix64(index.wrapping_add(0x243F_6A88_85A3_08D3)))
}

/// Sub-seed keyed by a label, for named streams.
pub fn labeled_seed(master: u64, label: &str) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    sub_seed(master, h)
}
