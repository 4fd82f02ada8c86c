//! Seeded randomness.
//!
//! Every random draw in the simulator flows from an [`RngState`]. Child streams
//! are derived from `(seed, key, label)` without touching the parent's
//! position, so the stream used by, say, agent 3 in epoch 2 of iteration 17 of
//! run 4 is the same no matter which order (or which thread) the work runs in.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::vector::ModelVector;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// splitmix64 finalizer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn combine(key: u64, word: u64) -> u64 {
    mix64(key ^ mix64(word.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

fn hash_label(label: &str) -> u64 {
    label
        .bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// A deterministic random stream identified by a seed and a derivation key.
#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    key: u64,
    inner: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self::with_key(seed, 0)
    }

    fn with_key(seed: u64, key: u64) -> Self {
        let mut bytes = [0u8; 32];
        bytes[..8].copy_from_slice(&seed.to_le_bytes());
        bytes[8..16].copy_from_slice(&key.to_le_bytes());
        bytes[16..24].copy_from_slice(&combine(seed, key).to_le_bytes());
        bytes[24..].copy_from_slice(b"fedtrack");
        Self {
            seed,
            key,
            inner: ChaCha8Rng::from_seed(bytes),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream keyed by `label`. The parent is not advanced.
    pub fn derive_substream(&self, label: &str) -> RngState {
        Self::with_key(self.seed, combine(self.key, hash_label(label)))
    }

    /// Child stream keyed by `label` and an index, e.g. `("run", 3)`.
    /// Equivalent in spirit to `derive_substream(&format!("{label}:{index}"))`
    /// without the allocation.
    pub fn derive_indexed(&self, label: &str, index: u64) -> RngState {
        let labelled = combine(self.key, hash_label(label));
        Self::with_key(self.seed, combine(labelled, index))
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Distinct indices drawn from `{0, .., population - 1}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexSet {
    indices: Vec<usize>,
    population: usize,
}

impl IndexSet {
    /// Validates distinctness and range.
    pub fn new(indices: Vec<usize>, population: usize) -> Result<Self> {
        let mut seen = vec![false; population];
        for &i in &indices {
            if i >= population {
                return Err(Error::invalid(format!(
                    "index {i} out of range for population {population}"
                )));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid(format!("duplicate index {i}")));
            }
        }
        Ok(Self { indices, population })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn population(&self) -> usize {
        self.population
    }

    /// Indices in increasing order.
    pub fn sorted(&self) -> Vec<usize> {
        let mut v = self.indices.clone();
        v.sort_unstable();
        v
    }
}

/// Draws `draws` distinct indices uniformly from `{0, .., population - 1}`.
/// Every subset of that size is equally likely.
pub fn sample_without_replacement(rng: &mut RngState, population: usize, draws: usize) -> Result<IndexSet> {
    if draws == 0 || draws > population {
        return Err(Error::invalid(format!(
            "cannot draw {draws} distinct indices from a population of {population}"
        )));
    }
    let indices = rand::seq::index::sample(rng, population, draws).into_vec();
    Ok(IndexSet { indices, population })
}

/// Each coordinate i.i.d. `N(0, variance)`; the variance is per coordinate.
pub fn sample_gaussian_vector(rng: &mut RngState, dim: usize, variance: f64) -> Result<ModelVector> {
    if !(variance >= 0.0) || !variance.is_finite() {
        return Err(Error::invalid(format!(
            "variance must be finite and non-negative, got {variance}"
        )));
    }
    let sd = variance.sqrt();
    Ok(ModelVector::new((0..dim).map(|_| sd * rng.standard_normal()).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draws(rng: &mut RngState, n: usize) -> Vec<u64> {
        (0..n).map(|_| rng.next_u64()).collect()
    }

    #[test]
    fn same_seed_and_label_give_identical_streams() {
        let root = RngState::new(7);
        let mut a = root.derive_substream("run:0");
        let mut b = root.derive_substream("run:0");
        assert_eq!(draws(&mut a, 100), draws(&mut b, 100));
    }

    #[test]
    fn different_labels_or_seeds_differ() {
        let a = draws(&mut RngState::new(7).derive_substream("run:0"), 100);
        let b = draws(&mut RngState::new(7).derive_substream("run:1"), 100);
        let c = draws(&mut RngState::new(8).derive_substream("run:0"), 100);
        assert!(a.iter().zip(&b).any(|(x, y)| x != y));
        assert!(a.iter().zip(&c).any(|(x, y)| x != y));
    }

    #[test]
    fn deriving_does_not_advance_parent() {
        let mut parent = RngState::new(11);
        let mut untouched = parent.clone();
        let _child = parent.derive_substream("x");
        let _other = parent.derive_indexed("y", 4);
        assert_eq!(draws(&mut parent, 10), draws(&mut untouched, 10));
    }

    #[test]
    fn derivation_ignores_parent_position() {
        let mut parent = RngState::new(3);
        let before = draws(&mut parent.derive_indexed("agent", 2), 8);
        let _ = draws(&mut parent, 50);
        assert_eq!(before, draws(&mut parent.derive_indexed("agent", 2), 8));
    }

    #[test]
    fn exhaustive_draw_is_a_permutation() {
        let mut rng = RngState::new(1);
        let set = sample_without_replacement(&mut rng, 5, 5).unwrap();
        assert_eq!(set.sorted(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn invalid_draw_counts_are_rejected() {
        let mut rng = RngState::new(1);
        assert!(sample_without_replacement(&mut rng, 3, 4).is_err());
        assert!(sample_without_replacement(&mut rng, 3, 0).is_err());
    }

    #[test]
    fn single_draw_from_two_is_fair() {
        let mut rng = RngState::new(2024);
        let trials = 100_000;
        let ones = (0..trials)
            .filter(|_| sample_without_replacement(&mut rng, 2, 1).unwrap().indices()[0] == 1)
            .count();
        let p = ones as f64 / trials as f64;
        let se = (0.25f64 / trials as f64).sqrt();
        assert!((p - 0.5).abs() < 3.0 * se, "p = {p}");
    }

    #[test]
    fn pairs_from_four_are_uniform_over_subsets() {
        // Enumerate the C(4,2) = 6 subsets and count hits.
        let subsets: Vec<[usize; 2]> = (0..4).flat_map(|i| (i + 1..4).map(move |j| [i, j])).collect();
        assert_eq!(subsets.len(), 6);
        let mut counts = [0usize; 6];
        let mut rng = RngState::new(99);
        let trials = 100_000;
        for _ in 0..trials {
            let s = sample_without_replacement(&mut rng, 4, 2).unwrap().sorted();
            let pos = subsets.iter().position(|x| x[..] == s[..]).unwrap();
            counts[pos] += 1;
        }
        let p = 1.0 / 6.0;
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        for c in counts {
            let f = c as f64 / trials as f64;
            assert!((f - p).abs() < 3.0 * se, "frequency {f}");
        }
    }

    #[test]
    fn index_set_validation() {
        assert!(IndexSet::new(vec![0, 2], 3).is_ok());
        assert!(IndexSet::new(vec![0, 0], 3).is_err());
        assert!(IndexSet::new(vec![3], 3).is_err());
    }

    #[test]
    fn gaussian_zero_variance_is_zero_vector() {
        let mut rng = RngState::new(5);
        let v = sample_gaussian_vector(&mut rng, 4, 0.0).unwrap();
        assert_eq!(v, ModelVector::zeros(4));
        assert!(sample_gaussian_vector(&mut rng, 4, -1.0).is_err());
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = RngState::new(17);
        let n = 100_000;
        let var = (0..n)
            .map(|_| sample_gaussian_vector(&mut rng, 1, 1.0).unwrap()[0].powi(2))
            .sum::<f64>()
            / n as f64;
        assert!((var - 1.0).abs() < 0.05, "variance {var}");

        let sq = (0..n)
            .map(|_| sample_gaussian_vector(&mut rng, 3, 4.0).unwrap().norm_sq())
            .sum::<f64>()
            / n as f64;
        assert!((sq - 12.0).abs() < 0.05 * 12.0, "squared norm {sq}");
    }
}
