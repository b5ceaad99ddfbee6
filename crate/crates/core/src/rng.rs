//! Counter-based random numbers.
//!
//! Every random quantity in the crate is a pure function of a 64-bit key and
//! a 64-bit counter, so any draw can be recomputed independently of the order
//! in which others were made. The generator is SplitMix64 evaluated at an
//! arbitrary position:
//!
//! ```text
//! z  = key + (counter + 1) * 0x9E3779B97F4A7C15          (wrapping)
//! z  = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z  = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! out = z ^ (z >> 31)
//! ```
//!
//! Uniforms on the open interval (0, 1) take the top 52 bits:
//! `u = ((out >> 12) + 0.5) / 2^52`, which is exact in `f64`.
//!
//! Standard normals come in Box–Muller pairs. Pair `k` reads the uniforms at
//! counters `2k` and `2k + 1`:
//!
//! ```text
//! r  = sqrt(-2 ln u1),  θ = 2π u2
//! z0 = r cos θ,  z1 = r sin θ
//! ```
//!
//! and normal number `i` of a stream is `z0` of pair `i / 2` when `i` is even,
//! `z1` otherwise. All of this is evaluated in `f64`.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Raw 64-bit output at `counter` of the stream identified by `key`.
#[inline]
pub fn bits_at(key: u64, counter: u64) -> u64 {
    finalize(key.wrapping_add(counter.wrapping_add(1).wrapping_mul(GAMMA)))
}

/// Uniform draw on (0, 1) at `counter`.
#[inline]
pub fn uniform_at(key: u64, counter: u64) -> f64 {
    to_open_unit(bits_at(key, counter))
}

#[inline]
fn to_open_unit(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Box–Muller pair `pair` of the stream.
pub fn normal_pair(key: u64, pair: u64) -> (f64, f64) {
    let u1 = uniform_at(key, 2 * pair);
    let u2 = uniform_at(key, 2 * pair + 1);
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * std::f64::consts::PI * u2;
    (r * theta.cos(), r * theta.sin())
}

/// Standard normal number `index` of the stream.
pub fn normal_at(key: u64, index: u64) -> f64 {
    let (z0, z1) = normal_pair(key, index / 2);
    if index.is_multiple_of(2) {
        z0
    } else {
        z1
    }
}

/// Fills `out` with the first `out.len()` standard normals of the stream.
pub fn fill_normal(key: u64, out: &mut [f64]) {
    for (pair, chunk) in out.chunks_mut(2).enumerate() {
        let (z0, z1) = normal_pair(key, pair as u64);
        chunk[0] = z0;
        if let Some(second) = chunk.get_mut(1) {
            *second = z1;
        }
    }
}

/// Derives an independent child key, e.g. one per training step or patch.
///
/// `derive_key(parent, index) = bits_at(parent ^ 0xA0761D6478BD642F, index)`.
pub fn derive_key(parent: u64, index: u64) -> u64 {
    bits_at(parent ^ 0xA076_1D64_78BD_642F, index)
}

/// A sequential cursor over one counter-based stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(key: u64) -> Self {
        Self { key, counter: 0 }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn next_u64(&mut self) -> u64 {
        let bits = bits_at(self.key, self.counter);
        self.counter = self.counter.wrapping_add(1);
        bits
    }

    /// Uniform on (0, 1).
    pub fn next_f64(&mut self) -> f64 {
        to_open_unit(self.next_u64())
    }

    /// Uniform integer in `0..n` by rejection, unbiased. `n` must be > 0.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let limit = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < limit {
                return x % n;
            }
        }
    }

    /// Fair coin from the top bit of one draw.
    pub fn coin(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }

    /// In-place Fisher–Yates shuffle drawing `below(i + 1)` for `i` descending.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
