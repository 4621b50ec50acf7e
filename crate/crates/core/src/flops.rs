//! Floating point operation accounting.
//!
//! Counts follow a fixed model so that runs are comparable with each other:
//! an `a×b` by `b×c` product costs `2abc`, a `k×k` symmetric eigendecomposition
//! costs `9k³`, and elementwise work costs one flop per entry touched.

use serde::{Deserialize, Serialize};

/// Flops charged for one dense symmetric eigendecomposition of size `k`.
pub const EIGH_COST_PER_CUBE: u64 = 9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlopCounter {
    total: u64,
}

impl FlopCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn add(&mut self, flops: u64) {
        self.total = self.total.saturating_add(flops);
    }

    /// Product of an `a×b` and a `b×c` matrix.
    pub fn gemm(&mut self, a: usize, b: usize, c: usize) {
        self.add(2 * (a as u64) * (b as u64) * (c as u64));
    }

    /// Symmetric eigendecomposition of a `k×k` matrix.
    pub fn eigh(&mut self, k: usize) {
        let k = k as u64;
        self.add(EIGH_COST_PER_CUBE * k * k * k);
    }

    /// Elementwise pass over `count` entries.
    pub fn elementwise(&mut self, count: usize) {
        self.add(count as u64);
    }
}
