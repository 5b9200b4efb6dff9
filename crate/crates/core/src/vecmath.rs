//! Dense vector arithmetic and the seeded random stream shared by every
//! other module.
//!
//! Reductions run sequentially in index order. No reassociation happens on
//! public results, so two runs with the same inputs agree bit for bit.

use std::ops::Index;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Multiplier used to split one base seed into per-run seeds
/// (`floor(2^64 / golden ratio)`, the SplitMix64 increment).
pub const SEED_SPLIT_MULTIPLIER: u64 = 0x9E37_79B9_7F4A_7C15;

/// Derives the seed of run `index` from a base seed:
/// `base XOR (index * 0x9E3779B97F4A7C15)` with wrapping multiplication.
pub fn split_seed(base: u64, index: u64) -> u64 {
    base ^ index.wrapping_mul(SEED_SPLIT_MULTIPLIER)
}

/// Flat, fixed-length vector of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Builds a vector, rejecting empty input and non-finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::checked("values", values)
    }

    /// Like [`ParamVector::new`] but reports `field` in the error.
    pub fn checked(field: &'static str, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("parameter vector must have length >= 1"));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { field, index });
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(len: usize) -> Self {
        assert!(len >= 1, "parameter vector must have length >= 1");
        ParamVector(vec![0.0; len])
    }

    pub fn filled(len: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; len])
    }

    /// Basis vector `e_i` of length `len`.
    pub fn unit(len: usize, i: usize) -> Self {
        let mut v = Self::zeros(len);
        v.0[i] = 1.0;
        v
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Always false; kept for clippy's `len_without_is_empty`.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    /// Applies `perm` so that `out[i] = self[perm[i]]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        Error::check_dims(self.len(), perm.len())?;
        Ok(ParamVector(perm.iter().map(|&p| self.0[p]).collect()))
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl TryFrom<&[f64]> for ParamVector {
    type Error = Error;

    fn try_from(values: &[f64]) -> Result<Self> {
        Self::new(values.to_vec())
    }
}

/// `Σ aᵢbᵢ`, accumulated left to right.
pub fn dot(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    Error::check_dims(a.len(), b.len())?;
    Ok(dot_slices(a.as_slice(), b.as_slice()))
}

pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Euclidean norm; exactly `0.0` for the zero vector.
pub fn norm(a: &ParamVector) -> f64 {
    norm_slice(a.as_slice())
}

pub(crate) fn norm_slice(a: &[f64]) -> f64 {
    dot_slices(a, a).sqrt()
}

/// `alpha * x + y`, elementwise.
pub fn axpy(alpha: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
    Error::check_dims(x.len(), y.len())?;
    let out = x.iter().zip(y.iter()).map(|(xi, yi)| alpha * xi + yi).collect();
    ParamVector::checked("axpy", out)
}

/// `‖a − b‖`.
pub fn distance(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    Error::check_dims(a.len(), b.len())?;
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        acc += d * d;
    }
    Ok(acc.sqrt())
}

/// Seeded pseudo-random stream.
///
/// Backed by ChaCha8 (`rand_chacha`), a counter-based generator whose output
/// depends only on the seed, never on platform or scheduling. The seed is
/// expanded with `SeedableRng::seed_from_u64`. This is the only place the
/// generator is chosen.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream for sub-task `index`, seeded by [`split_seed`].
    pub fn child(&self, index: u64) -> RngStream {
        RngStream::new(split_seed(self.seed, index))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn normal_vec(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.standard_normal()).collect()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }

    /// `k` distinct indices from `0..n` in random order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot sample {k} of {n}");
        let mut idx: Vec<usize> = (0..n).collect();
        let (chosen, _) = idx.partial_shuffle(&mut self.rng, k);
        chosen.to_vec()
    }
}
