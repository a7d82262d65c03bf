use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Graph;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// `k` uniformly drawn non-edges per positive, as `(u, v)` with `u < v`.
///
/// Self-pairs and existing edges are rejected. Each positive gets a budget
/// of `100·k` draws.
pub fn sample_negative_edges(
    g: &Graph,
    positives: &[(usize, usize)],
    k: usize,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    if k == 0 {
        return Err(Error::config("negative sampling ratio k must be at least 1"));
    }
    let n = g.num_nodes();
    if n < 2 {
        return Err(Error::Sampling("graph has fewer than two nodes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(positives.len() * k);
    for _ in positives {
        let mut found = 0;
        let mut attempts = 0;
        while found < k {
            if attempts == 100 * k {
                return Err(Error::Sampling(format!(
                    "no non-edge found after {} attempts; graph is too dense",
                    100 * k
                )));
            }
            attempts += 1;
            let u = rng.random_range(0..n);
            let v = rng.random_range(0..n);
            if u == v || g.has_edge(u, v) {
                continue;
            }
            out.push((u.min(v), u.max(v)));
            found += 1;
        }
    }
    Ok(out)
}

/// `k` negatives per positive drawn as `(source, target)` pairs with the source
/// from `sources` and the target from `targets`, rejecting pairs for which
/// `is_positive` holds.
pub fn sample_negative_pairs(
    sources: &[usize],
    targets: &[usize],
    num_positives: usize,
    k: usize,
    seed: u64,
    is_positive: impl Fn(usize, usize) -> bool,
) -> Result<Vec<(usize, usize)>> {
    if k == 0 {
        return Err(Error::config("negative sampling ratio k must be at least 1"));
    }
    if sources.is_empty() || targets.is_empty() {
        return Err(Error::Sampling("empty candidate set for negatives".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(num_positives * k);
    for _ in 0..num_positives {
        let mut found = 0;
        let mut attempts = 0;
        while found < k {
            if attempts == 100 * k {
                return Err(Error::Sampling(format!(
                    "no negative pair found after {} attempts",
                    100 * k
                )));
            }
            attempts += 1;
            let u = sources[rng.random_range(0..sources.len())];
            let v = targets[rng.random_range(0..targets.len())];
            if u == v || is_positive(u, v) {
                continue;
            }
            out.push((u, v));
            found += 1;
        }
    }
    Ok(out)
}

/// Feature matrix with some rows zeroed, plus the original rows as targets.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedFeatures {
    pub features: Tensor,
    /// Masked node ids, ascending.
    pub masked: Vec<usize>,
    /// Original feature rows of `masked`, in the same order.
    pub targets: Tensor,
}

/// Zeroes `round(fraction·n)` seeded-random rows of the feature matrix.
pub fn mask_attributes(g: &Graph, fraction: f64, seed: u64) -> Result<MaskedFeatures> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(format!(
            "mask fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let n = g.num_nodes();
    let count = (fraction * n as f64).round() as usize;
    if count == 0 {
        return Err(Error::config(format!(
            "mask fraction {fraction} selects no node out of {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masked = index::sample(&mut rng, n, count).into_vec();
    masked.sort_unstable();
    let targets = g.features().select_rows(&masked)?;
    let mut features = g.features().clone();
    for &u in &masked {
        features.row_mut(u).iter_mut().for_each(|x| *x = 0.0);
    }
    Ok(MaskedFeatures {
        features,
        masked,
        targets,
    })
}

/// Seeded random split of a batch into a train part of `round(ratio·|batch|)`
/// items (half rounds up) and a meta part with the rest.
///
/// The train part is clamped to `[1, |batch| − 1]` so neither side is empty.
pub fn split_batch<T: Clone>(batch: &[T], ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if batch.len() < 2 {
        return Err(Error::usage(format!(
            "cannot split a batch of {} item(s); the meta part would be empty",
            batch.len()
        )));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let n = batch.len();
    let n_train = ((ratio * n as f64 + 0.5).floor() as usize).clamp(1, n - 1);
    let mut shuffled = batch.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let meta = shuffled.split_off(n_train);
    Ok((shuffled, meta))
}
