use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Matrix;
use crate::error::{Error, Result};

/// Seeded random stream backed by the ChaCha8 block function, which is
/// counter based: output depends only on the key and the block counter.
///
/// Independent streams come from [`RngStream::split`], which mixes a stream
/// id into the parent seed with the SplitMix64 finalizer:
///
/// ```text
/// child_seed = mix64(parent_seed ^ mix64(stream_id + 0x9E3779B97F4A7C15))
/// ```
///
/// The child is keyed from `child_seed` exactly as [`RngStream::new`] would
/// be, so a derived stream is reproducible from `(seed, path of ids)` alone.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent child stream. Does not advance `self`.
    pub fn split(&self, stream_id: u64) -> RngStream {
        RngStream::new(mix64(
            self.seed ^ mix64(stream_id.wrapping_add(GOLDEN_GAMMA)),
        ))
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform integer in `[0, bound)`.
    pub fn below(&mut self, bound: usize) -> usize {
        self.rng.random_range(0..bound)
    }

    /// Fisher-Yates shuffle driven by this stream.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.rng);
    }

    /// Keep/drop mask: each entry is 0 with probability `p_drop`, else 1.
    /// Consumes exactly `n` uniform draws.
    pub fn bernoulli_mask(&mut self, p_drop: f64, n: usize) -> Result<Matrix> {
        self.bernoulli_mask_rows(p_drop, 1, n)
    }

    pub fn bernoulli_mask_rows(&mut self, p_drop: f64, rows: usize, cols: usize) -> Result<Matrix> {
        if !(0.0..=1.0).contains(&p_drop) {
            return Err(Error::domain(format!(
                "drop probability {p_drop} outside [0, 1]"
            )));
        }
        let data = (0..rows * cols)
            .map(|_| if self.uniform() < p_drop { 0.0 } else { 1.0 })
            .collect();
        Ok(Matrix::from_parts(rows, cols, data))
    }

    /// i.i.d. `N(0, scale²)` entries.
    pub fn gaussian_init(&mut self, rows: usize, cols: usize, scale: f64) -> Result<Matrix> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::domain(format!(
                "gaussian scale must be positive, got {scale}"
            )));
        }
        let data = (0..rows * cols)
            .map(|_| scale * self.standard_normal())
            .collect();
        Ok(Matrix::from_parts(rows, cols, data))
    }
}
