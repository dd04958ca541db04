//! Seeded splitmix64 generator.
//!
//! Every random choice in the crate (mask permutations, weight
//! initialization, epoch shuffles, synthetic data) is drawn from this
//! generator, so a seed reproduces the same bits in any implementation that
//! follows the same recurrence.

use crate::error::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 state. Cheap to copy; never share one between tasks, derive a
/// fresh seed instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rng64 {
    state: u64,
}

impl Rng64 {
    pub const fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub const fn state(&self) -> u64 {
        self.state
    }

    /// Pure form of [`Rng64::next_u64`]: returns the output and the advanced
    /// generator without touching `self`.
    #[must_use]
    pub const fn step(self) -> (u64, Self) {
        let state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        (z ^ (z >> 31), Self { state })
    }

    pub fn next_u64(&mut self) -> u64 {
        let (value, next) = self.step();
        *self = next;
        value
    }

    /// Uniform integer in `[0, bound)` by plain modulo reduction. The bias is
    /// at most `bound / 2^64` and is accepted so that streams stay portable.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        self.next_u64() % bound
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal sample via the Box-Muller transform (cosine branch;
    /// one normal per two uniforms, the sine branch is discarded).
    pub fn next_gaussian(&mut self) -> f64 {
        // 1 - u keeps the log argument in (0, 1].
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// In-place Fisher-Yates shuffle, walking from the top index down.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// Mask seeds for one fully-connected layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerSeeds {
    pub row_seed: u64,
    pub col_seed: u64,
}

/// Draws `(row_seed, col_seed)` pairs for `n_layers` layers from a stream
/// seeded with `master_seed`, in the order row1, col1, row2, col2, ...
pub fn derive_layer_seeds(master_seed: u64, n_layers: usize) -> Result<Vec<LayerSeeds>> {
    if n_layers == 0 {
        return Err(Error::EmptyArchitecture);
    }
    let mut rng = Rng64::new(master_seed);
    Ok((0..n_layers)
        .map(|_| {
            let row_seed = rng.next_u64();
            let col_seed = rng.next_u64();
            LayerSeeds { row_seed, col_seed }
        })
        .collect())
}
