use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which side of a pretrain/finetune partition a split was drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionTag {
    Pretrain,
    Finetune,
    Whole,
}

/// Disjoint train/valid/test index sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
    pub partition: PartitionTag,
}

impl DataSplit {
    pub fn new(
        train: Vec<usize>,
        valid: Vec<usize>,
        test: Vec<usize>,
        partition: PartitionTag,
    ) -> Result<Self> {
        let mut all: Vec<usize> = train.iter().chain(&valid).chain(&test).copied().collect();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        if all.len() != n {
            return Err(Error::config("train/valid/test sets overlap"));
        }
        Ok(Self {
            train,
            valid,
            test,
            partition,
        })
    }
}

/// Shuffles `items` with `seed` and cuts it into consecutive pieces with the
/// given fractions; the last piece takes the remainder.
pub fn random_split(
    items: &[usize],
    fractions: (f64, f64),
    seed: u64,
    partition: PartitionTag,
) -> Result<DataSplit> {
    let (f_train, f_valid) = fractions;
    if f_train <= 0.0 || f_valid < 0.0 || f_train + f_valid > 1.0 {
        return Err(Error::config(format!(
            "invalid split fractions train={f_train} valid={f_valid}"
        )));
    }
    let mut shuffled = items.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = shuffled.len();
    let n_train = (f_train * n as f64).round() as usize;
    let n_valid = ((f_valid * n as f64).round() as usize).min(n - n_train);
    let test = shuffled.split_off(n_train + n_valid);
    let valid = shuffled.split_off(n_train);
    DataSplit::new(shuffled, valid, test, partition)
}

/// Seeded two-way partition of `0..n` (e.g. 70% pretrain / 30% finetune).
pub fn partition_nodes(n: usize, first_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&first_fraction) {
        return Err(Error::config(format!(
            "partition fraction must lie in [0, 1], got {first_fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = (first_fraction * n as f64).round() as usize;
    let second = idx.split_off(k);
    let mut first = idx;
    first.sort_unstable();
    let mut second = second;
    second.sort_unstable();
    Ok((first, second))
}
