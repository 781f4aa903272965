//! Millisecond-stepping token-bucket simulator shared by the oracle and
//! acceptance test binaries.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha20Rng;

const SCALE: u64 = 60_000;

/// Millisecond-stepping simulator: an independent route to the same
/// semantics.
pub struct SimulatedBucket {
    capacity_scaled: u64,
    per_minute: u64,
    tokens_scaled: u64,
    clock_ms: u64,
}

impl SimulatedBucket {
    pub fn new(capacity: u64, per_minute: u64) -> Self {
        Self {
            capacity_scaled: capacity * SCALE,
            per_minute,
            tokens_scaled: capacity * SCALE,
            clock_ms: 0,
        }
    }

    pub fn step_to(&mut self, at_ms: u64) {
        while self.clock_ms < at_ms {
            self.clock_ms += 1;
            self.tokens_scaled = (self.tokens_scaled + self.per_minute).min(self.capacity_scaled);
        }
    }

    pub fn call(&mut self, at_ms: u64) -> bool {
        self.step_to(at_ms);
        if self.tokens_scaled >= SCALE {
            self.tokens_scaled -= SCALE;
            true
        } else {
            false
        }
    }
}

pub fn schedule(rng: &mut ChaCha20Rng, calls: usize) -> Vec<u64> {
    let mut t = 0u64;
    let mut out = Vec::with_capacity(calls);
    for _ in 0..calls {
        // Bursty arrivals: mostly tight clusters, occasional long gaps.
        let gap = match rng.gen_range(0..10) {
            0..=5 => rng.gen_range(0..40),
            6..=8 => rng.gen_range(40..400),
            _ => rng.gen_range(400..5_000),
        };
        t += gap;
        out.push(t);
    }
    out
}

