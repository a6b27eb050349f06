//! Counter-based random streams.
//!
//! Every random draw in a run is addressed by `(seed, counter, slot)`. The
//! `(seed, counter)` pair is expanded with SplitMix64 into a 256-bit ChaCha8
//! key, and `slot` selects the ChaCha stream. Slots can therefore be drawn
//! in any order, on any thread, and still reproduce the same values.
//!
//! Normal variates use the Box-Muller transform on 53-bit uniforms.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Identifier written into experiment metadata.
pub const RNG_ALGORITHM: &str =
    "chacha8[key=splitmix64(seed,counter),stream=slot]/uniform53/box-muller";

/// A family of independent random streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub counter: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    pub fn with_counter(seed: u64, counter: u64) -> Self {
        Self { seed, counter }
    }

    /// Returns the current family and moves to the next one.
    pub fn advance(&mut self) -> RngState {
        let current = *self;
        self.counter = self.counter.wrapping_add(1);
        current
    }

    /// The random stream for one slot of this family.
    pub fn stream(&self, slot: u64) -> SlotRng {
        let mut counter = self.counter;
        let mut sm = self.seed ^ splitmix64(&mut counter);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut sm).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(slot);
        SlotRng { rng, spare: None }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One deterministic stream of draws.
#[derive(Clone, Debug)]
pub struct SlotRng {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl SlotRng {
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)` by rejection, independent of pointer width.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX - n + 1) % n;
        loop {
            let x = self.next_u64();
            if x <= zone {
                return x % n;
            }
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - u lies in (0, 1], keeping ln finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}
