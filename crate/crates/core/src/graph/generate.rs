//! Seeded synthetic graphs: a planted-partition SBM for node classification and
//! a typed user–item–genre graph for link prediction and meta-path tasks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{EdgeInput, Graph};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmConfig {
    pub blocks: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub noise: f64,
    pub seed: u64,
}

/// Stochastic block model; node label = block id, features = one-hot(block) + noise·N(0, 1).
pub fn generate_sbm(cfg: &SbmConfig) -> Result<Graph> {
    if cfg.blocks.is_empty() {
        return Err(Error::config("SBM needs at least one block"));
    }
    if let Some(b) = cfg.blocks.iter().position(|&s| s == 0) {
        return Err(Error::config(format!("SBM block {b} is empty")));
    }
    if !(0.0 <= cfg.p_out && cfg.p_out < cfg.p_in && cfg.p_in <= 1.0) {
        return Err(Error::config(format!(
            "SBM needs 0 <= p_out < p_in <= 1, got p_in={} p_out={}",
            cfg.p_in, cfg.p_out
        )));
    }
    if cfg.feature_dim < cfg.blocks.len() {
        return Err(Error::config(format!(
            "feature_dim {} cannot hold a one-hot code for {} blocks",
            cfg.feature_dim,
            cfg.blocks.len()
        )));
    }
    if !(cfg.noise >= 0.0) {
        return Err(Error::config("noise scale must be non-negative"));
    }
    let block_of: Vec<usize> = cfg
        .blocks
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
        .collect();
    let n = block_of.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut edges: Vec<EdgeInput> = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if block_of[u] == block_of[v] { cfg.p_in } else { cfg.p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v, None));
            }
        }
    }
    let mut feats = Vec::with_capacity(n * cfg.feature_dim);
    for &b in &block_of {
        for d in 0..cfg.feature_dim {
            let z: f64 = rng.sample(StandardNormal);
            feats.push(if d == b { 1.0 } else { 0.0 } + cfg.noise * z);
        }
    }
    let features = Tensor::matrix(n, cfg.feature_dim, feats)?;
    let labels = block_of.into_iter().map(Some).collect();
    Graph::from_edges(n, &edges, features, labels, None)
}

pub const USER: u8 = 0;
pub const ITEM: u8 = 1;
pub const GENRE: u8 = 2;
pub const USER_ITEM: u8 = 0;
pub const ITEM_GENRE: u8 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BipartiteConfig {
    pub users: usize,
    pub items: usize,
    pub communities: usize,
    /// Probability of a user–item edge inside a community.
    pub p_in: f64,
    /// Probability of a user–item edge across communities.
    pub p_out: f64,
    /// Probability that an item's genre edge points to its own community's genre.
    pub genre_fidelity: f64,
    pub feature_dim: usize,
    pub noise: f64,
    pub seed: u64,
}

/// Typed user–item–genre graph with planted communities.
///
/// Node order: users, then items, then one genre node per community. Node
/// types are `USER`/`ITEM`/`GENRE`; edge types `USER_ITEM`/`ITEM_GENRE`.
/// Every node's label is its community. Features: one-hot(node type) in the
/// first three columns, one-hot(community) in the next `communities`
/// columns, plus noise·N(0, 1) everywhere.
pub fn generate_bipartite(cfg: &BipartiteConfig) -> Result<Graph> {
    if cfg.users == 0 || cfg.items == 0 || cfg.communities == 0 {
        return Err(Error::config("bipartite graph needs users, items and communities"));
    }
    if !(0.0 <= cfg.p_out && cfg.p_out < cfg.p_in && cfg.p_in <= 1.0) {
        return Err(Error::config("bipartite graph needs 0 <= p_out < p_in <= 1"));
    }
    if !(0.0..=1.0).contains(&cfg.genre_fidelity) {
        return Err(Error::config("genre_fidelity must lie in [0, 1]"));
    }
    if cfg.feature_dim < 3 + cfg.communities {
        return Err(Error::config(format!(
            "feature_dim must be at least {} for this configuration",
            3 + cfg.communities
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.users + cfg.items + cfg.communities;
    let item0 = cfg.users;
    let genre0 = cfg.users + cfg.items;
    let mut community = Vec::with_capacity(n);
    let mut node_types = Vec::with_capacity(n);
    for _ in 0..cfg.users {
        community.push(rng.random_range(0..cfg.communities));
        node_types.push(USER);
    }
    for _ in 0..cfg.items {
        community.push(rng.random_range(0..cfg.communities));
        node_types.push(ITEM);
    }
    for c in 0..cfg.communities {
        community.push(c);
        node_types.push(GENRE);
    }
    let mut edges: Vec<EdgeInput> = Vec::new();
    for u in 0..cfg.users {
        for i in item0..genre0 {
            let p = if community[u] == community[i] { cfg.p_in } else { cfg.p_out };
            if rng.random::<f64>() < p {
                edges.push((u, i, Some(USER_ITEM)));
            }
        }
    }
    for i in item0..genre0 {
        let c = if rng.random::<f64>() < cfg.genre_fidelity {
            community[i]
        } else {
            rng.random_range(0..cfg.communities)
        };
        edges.push((i, genre0 + c, Some(ITEM_GENRE)));
    }
    let mut feats = Vec::with_capacity(n * cfg.feature_dim);
    for u in 0..n {
        for d in 0..cfg.feature_dim {
            let z: f64 = rng.sample(StandardNormal);
            let base = if d == node_types[u] as usize || d == 3 + community[u] {
                1.0
            } else {
                0.0
            };
            feats.push(base + cfg.noise * z);
        }
    }
    let features = Tensor::matrix(n, cfg.feature_dim, feats)?;
    let labels = community.into_iter().map(Some).collect();
    Graph::from_edges(n, &edges, features, labels, Some(node_types))
}
