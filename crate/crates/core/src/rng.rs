//! Deterministic random number generation.
//!
//! Every random draw in this crate is a pure function of a seed and a
//! position, never of call order. Brownian increments are keyed by
//! (seed, refinement level, signed grid cell, coordinate), so extending a
//! path's horizon or refining its grid reproduces all previously drawn
//! values bit for bit. A small sequential generator built on the same
//! mixer covers the cases where a plain stream is enough (falsification
//! sampling of hypothesis constants).

use std::f64::consts::TAU;

/// SplitMix64 finalizer; drives both the counters and the stream.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Map a u64 to the open unit interval (0, 1].
#[inline]
fn to_unit(x: u64) -> f64 {
    ((x >> 11) as f64 + 1.0) * (1.0 / 9_007_199_254_740_992.0)
}

fn position_key(seed: u64, domain: u32, index: i64, coord: u32) -> u64 {
    let mut k = mix64(seed ^ 0x9e37_79b9_7f4a_7c15);
    k = mix64(k ^ (u64::from(domain)).wrapping_mul(0xa076_1d64_78bd_642f));
    k = mix64(k ^ (index as u64).wrapping_mul(0xe703_7ed1_a0b4_28db));
    k ^ (u64::from(coord)).wrapping_mul(0x8ebc_6af0_9c88_c6e3)
}

/// Standard normal draw at an absolute position.
///
/// `domain` separates independent streams (refinement levels, discrete-map
/// noise); `index` is the signed grid position; `coord` the coordinate.
pub fn standard_normal_at(seed: u64, domain: u32, index: i64, coord: u32) -> f64 {
    let k = position_key(seed, domain, index, coord);
    let u1 = to_unit(mix64(k.wrapping_add(0x2545_f491_4f6c_dd1d)));
    let u2 = to_unit(mix64(k.wrapping_add(0x6a09_e667_f3bc_c909)));
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

/// Sequential deterministic generator (SplitMix64).
#[derive(Debug, Clone)]
pub struct DetRng {
    state: u64,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        Self {
            state: seed ^ 0x5851_f42d_4c95_7f2d,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        mix64(self.state)
    }

    /// Uniform draw in (0, 1].
    pub fn next_unit(&mut self) -> f64 {
        to_unit(self.next_u64())
    }

    /// Uniform draw in [lo, hi].
    pub fn next_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * (self.next_unit() - 0.5 / 9_007_199_254_740_992.0)
    }

    /// Standard normal via Box-Muller.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_unit();
        let u2 = self.next_unit();
        (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    }
}
