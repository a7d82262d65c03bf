use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};

/// Typed walk pattern such as user → item → user → item.
///
/// `edge_types[j]` constrains hop `j` (between `node_types[j]` and
/// `node_types[j + 1]`); `None` accepts any edge type.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaPath {
    pub name: String,
    pub node_types: Vec<u8>,
    pub edge_types: Vec<Option<u8>>,
}

impl MetaPath {
    pub fn new(name: impl Into<String>, node_types: Vec<u8>, edge_types: Vec<Option<u8>>) -> Result<Self> {
        let name = name.into();
        if node_types.len() < 2 {
            return Err(Error::config(format!(
                "meta-path `{name}` needs at least two node types"
            )));
        }
        if edge_types.len() + 1 != node_types.len() {
            return Err(Error::config(format!(
                "meta-path `{name}` has {} hops but {} edge constraints",
                node_types.len() - 1,
                edge_types.len()
            )));
        }
        Ok(Self {
            name,
            node_types,
            edge_types,
        })
    }

    /// Pattern over node types only, any edge type per hop.
    pub fn untyped_edges(name: impl Into<String>, node_types: Vec<u8>) -> Result<Self> {
        let hops = node_types.len().saturating_sub(1);
        Self::new(name, node_types, vec![None; hops])
    }

    pub fn hops(&self) -> usize {
        self.edge_types.len()
    }

    fn step_ok(&self, g: &Graph, hop: usize, next: usize, etype: Option<u8>) -> bool {
        g.node_type(next) == Some(self.node_types[hop + 1])
            && match self.edge_types[hop] {
                None => true,
                Some(t) => etype == Some(t),
            }
    }

    /// Candidates for the next step of a walk currently at `u`.
    pub(crate) fn next_nodes(&self, g: &Graph, hop: usize, u: usize) -> Vec<usize> {
        let types = g.neighbor_edge_types(u);
        g.neighbors(u)
            .iter()
            .enumerate()
            .filter(|&(k, &v)| self.step_ok(g, hop, v, types.map(|t| t[k])))
            .map(|(_, &v)| v)
            .collect()
    }

    fn describe_hop(&self, hop: usize) -> String {
        format!(
            "hop {hop} of `{}` (node type {} -> {}{})",
            self.name,
            self.node_types[hop],
            self.node_types[hop + 1],
            self.edge_types[hop]
                .map(|t| format!(" via edge type {t}"))
                .unwrap_or_default()
        )
    }

    /// Checks that some walk realizes the pattern, naming the first hop that
    /// cannot be taken from any reachable node.
    pub fn check_feasible(&self, g: &Graph) -> Result<()> {
        let Some(types) = g.node_types() else {
            return Err(Error::Sampling(format!(
                "meta-path `{}` needs a graph with node types",
                self.name
            )));
        };
        let mut frontier: Vec<bool> = types.iter().map(|&t| t == self.node_types[0]).collect();
        if !frontier.iter().any(|&b| b) {
            return Err(Error::Sampling(format!(
                "no node of type {} to start `{}`",
                self.node_types[0], self.name
            )));
        }
        for hop in 0..self.hops() {
            let mut next = vec![false; g.num_nodes()];
            for u in (0..g.num_nodes()).filter(|&u| frontier[u]) {
                for v in self.next_nodes(g, hop, u) {
                    next[v] = true;
                }
            }
            if !next.iter().any(|&b| b) {
                return Err(Error::Sampling(format!(
                    "no walk exists: failed at {}",
                    self.describe_hop(hop)
                )));
            }
            frontier = next;
        }
        Ok(())
    }
}

/// Node pairs labeled by whether a seeded random walk following `mp` links them.
///
/// Positives are distinct `(start, end)` pairs (`start != end`) reached by
/// walks from uniformly drawn start nodes; dead-end walks are retried within a
/// budget of `100·n_pos` walks. Negatives are type-matched random pairs that
/// were not observed as positives.
pub fn sample_metapath_pairs(
    g: &Graph,
    mp: &MetaPath,
    n_pos: usize,
    n_neg: usize,
    seed: u64,
) -> Result<Vec<((usize, usize), f64)>> {
    mp.check_feasible(g)?;
    let types = g.node_types().expect("checked by check_feasible");
    let starts: Vec<usize> = (0..g.num_nodes())
        .filter(|&u| types[u] == mp.node_types[0])
        .collect();
    let ends: Vec<usize> = (0..g.num_nodes())
        .filter(|&u| types[u] == *mp.node_types.last().unwrap())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut seen = HashSet::new();
    let mut positives = Vec::with_capacity(n_pos);
    let mut walks = 0;
    while positives.len() < n_pos && walks < 100 * n_pos.max(1) {
        walks += 1;
        let start = starts[rng.random_range(0..starts.len())];
        let mut cur = start;
        let mut dead = false;
        for hop in 0..mp.hops() {
            let cand = mp.next_nodes(g, hop, cur);
            if cand.is_empty() {
                dead = true;
                break;
            }
            cur = cand[rng.random_range(0..cand.len())];
        }
        if dead || cur == start {
            continue;
        }
        if seen.insert((start, cur)) {
            positives.push((start, cur));
        }
    }
    if positives.is_empty() && n_pos > 0 {
        return Err(Error::Sampling(format!(
            "no distinct endpoint pair found for `{}` after {walks} walks",
            mp.name
        )));
    }

    let mut out: Vec<((usize, usize), f64)> = positives.into_iter().map(|p| (p, 1.0)).collect();
    let mut attempts = 0;
    let mut found = 0;
    while found < n_neg {
        if attempts == 100 * n_neg {
            return Err(Error::Sampling(format!(
                "could not draw {n_neg} negatives for `{}`",
                mp.name
            )));
        }
        attempts += 1;
        let a = starts[rng.random_range(0..starts.len())];
        let b = ends[rng.random_range(0..ends.len())];
        if a == b || seen.contains(&(a, b)) {
            continue;
        }
        out.push(((a, b), 0.0));
        found += 1;
    }
    Ok(out)
}
