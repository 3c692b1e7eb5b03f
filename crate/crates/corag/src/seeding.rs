//! Named random substreams derived from a single root seed.
//!
//! Every randomized stage (QA partitioning, store sampling, synthetic
//! generation) draws from its own stream so that adding or reordering stages
//! never perturbs the others.

use rand::seq::index::sample as index_sample;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// Deterministic RNG for the substream `name` under `root`.
///
/// The stream seed is `sha256(root_le_bytes || name)`, so it is stable across
/// platforms and independent of call order.
pub fn substream(root: u64, name: &str) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha12Rng::from_seed(seed)
}

/// Uniform sample of `n` items from a deterministically ordered pool.
///
/// The pool must already be in a canonical order (callers pass sorted ids);
/// the draw itself is then a pure function of the RNG state.
pub fn sample_items<T: Clone>(pool: &[T], n: usize, rng: &mut ChaCha12Rng) -> Vec<T> {
    assert!(n <= pool.len(), "sample size {} exceeds pool {}", n, pool.len());
    let mut picked: Vec<usize> = index_sample(rng, pool.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| pool[i].clone()).collect()
}
