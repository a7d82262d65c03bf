//! Graph storage, ingestion, synthetic generators, splits and samplers.

mod generate;
mod io;
mod metapath;
mod sampling;
mod split;

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

pub use generate::{generate_bipartite, generate_sbm, BipartiteConfig, SbmConfig};
pub use io::{load_graph, write_graph, write_id_map};
pub use metapath::{sample_metapath_pairs, MetaPath};
pub use sampling::{
    mask_attributes, sample_negative_edges, sample_negative_pairs, split_batch, MaskedFeatures,
};
pub use split::{partition_nodes, random_split, DataSplit, PartitionTag};

use crate::autodiff::{CsrMatrix, Propagator, Tensor};
use crate::error::{Error, Result};

/// An edge given to [`Graph::from_edges`]: `(src, dst, edge_type)`.
pub type EdgeInput = (usize, usize, Option<u8>);

/// Undirected graph in CSR form with node features and optional labels/types.
///
/// Every undirected edge is stored in both directions, neighbor lists are
/// sorted and self-loops are dropped.
#[derive(Clone, Debug)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    edge_types: Option<Vec<u8>>,
    node_types: Option<Vec<u8>>,
    features: Tensor,
    labels: Vec<Option<usize>>,
    original_ids: Option<Vec<String>>,
    gcn: OnceLock<Arc<Propagator>>,
    sum_aggregate: OnceLock<Arc<Propagator>>,
}

impl Graph {
    /// Builds a symmetric, deduplicated CSR graph.
    ///
    /// When the same unordered pair appears more than once, the first
    /// occurrence's edge type wins.
    pub fn from_edges(
        num_nodes: usize,
        edges: &[EdgeInput],
        features: Tensor,
        labels: Vec<Option<usize>>,
        node_types: Option<Vec<u8>>,
    ) -> Result<Self> {
        let (rows, _) = features.dims2()?;
        if rows != num_nodes {
            return Err(Error::config(format!(
                "feature matrix has {rows} rows for {num_nodes} nodes"
            )));
        }
        if labels.len() != num_nodes {
            return Err(Error::config(format!(
                "{} labels for {num_nodes} nodes",
                labels.len()
            )));
        }
        if let Some(t) = &node_types {
            if t.len() != num_nodes {
                return Err(Error::config(format!(
                    "{} node types for {num_nodes} nodes",
                    t.len()
                )));
            }
        }
        let typed = edges.iter().any(|e| e.2.is_some());
        let mut pairs: HashMap<(usize, usize), u8> = HashMap::with_capacity(edges.len());
        let mut order = Vec::with_capacity(edges.len());
        for &(u, v, t) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::config(format!(
                    "edge ({u}, {v}) references a node outside [0, {num_nodes})"
                )));
            }
            if u == v {
                continue;
            }
            let key = (u.min(v), u.max(v));
            if let std::collections::hash_map::Entry::Vacant(e) = pairs.entry(key) {
                e.insert(t.unwrap_or(0));
                order.push(key);
            }
        }
        let mut adj: Vec<Vec<(usize, u8)>> = vec![Vec::new(); num_nodes];
        for key in order {
            let t = pairs[&key];
            adj[key.0].push((key.1, t));
            adj[key.1].push((key.0, t));
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        let mut neighbors = Vec::new();
        let mut etypes = Vec::new();
        offsets.push(0);
        for list in &mut adj {
            list.sort_unstable();
            for &(v, t) in list.iter() {
                neighbors.push(v);
                etypes.push(t);
            }
            offsets.push(neighbors.len());
        }
        Ok(Self {
            offsets,
            neighbors,
            edge_types: typed.then_some(etypes),
            node_types,
            features,
            labels,
            original_ids: None,
            gcn: OnceLock::new(),
            sum_aggregate: OnceLock::new(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of stored directed edges (twice the undirected count).
    pub fn num_edges(&self) -> usize {
        self.neighbors.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.neighbors[self.offsets[u]..self.offsets[u + 1]]
    }

    /// Edge types aligned with [`Graph::neighbors`], if the graph is typed.
    pub fn neighbor_edge_types(&self, u: usize) -> Option<&[u8]> {
        self.edge_types
            .as_ref()
            .map(|t| &t[self.offsets[u]..self.offsets[u + 1]])
    }

    pub fn degree(&self, u: usize) -> usize {
        self.offsets[u + 1] - self.offsets[u]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.num_nodes() && self.neighbors(u).binary_search(&v).is_ok()
    }

    pub fn edge_type(&self, u: usize, v: usize) -> Option<u8> {
        let pos = self.neighbors(u).binary_search(&v).ok()?;
        self.neighbor_edge_types(u).map(|t| t[pos])
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in CSR order.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges() / 2);
        for u in 0..self.num_nodes() {
            for &v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn labeled_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&i| self.labels[i].is_some())
            .collect()
    }

    /// `1 + max label`, or 0 for an unlabeled graph.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().flatten().max().map_or(0, |m| m + 1)
    }

    pub fn node_types(&self) -> Option<&[u8]> {
        self.node_types.as_deref()
    }

    pub fn node_type(&self, u: usize) -> Option<u8> {
        self.node_types.as_ref().map(|t| t[u])
    }

    pub fn is_typed(&self) -> bool {
        self.edge_types.is_some()
    }

    pub fn original_ids(&self) -> Option<&[String]> {
        self.original_ids.as_deref()
    }

    pub(crate) fn set_original_ids(&mut self, ids: Vec<String>) {
        self.original_ids = Some(ids);
    }

    /// Keeps the listed nodes (in the given order) and the edges among them.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<Graph> {
        let mut map = vec![usize::MAX; self.num_nodes()];
        for (new, &old) in nodes.iter().enumerate() {
            if old >= self.num_nodes() {
                return Err(Error::usage(format!("node {old} out of range")));
            }
            if map[old] != usize::MAX {
                return Err(Error::usage(format!("node {old} listed twice")));
            }
            map[old] = new;
        }
        let mut edges = Vec::new();
        for &old_u in nodes {
            let types = self.neighbor_edge_types(old_u);
            for (k, &old_v) in self.neighbors(old_u).iter().enumerate() {
                if old_u < old_v && map[old_v] != usize::MAX {
                    edges.push((map[old_u], map[old_v], types.map(|t| t[k])));
                }
            }
        }
        let features = self.features.select_rows(nodes)?;
        let labels = nodes.iter().map(|&u| self.labels[u]).collect();
        let node_types = self
            .node_types
            .as_ref()
            .map(|t| nodes.iter().map(|&u| t[u]).collect());
        let mut g = Graph::from_edges(nodes.len(), &edges, features, labels, node_types)?;
        if self.is_typed() && g.edge_types.is_none() {
            g.edge_types = Some(Vec::new());
        }
        if let Some(ids) = &self.original_ids {
            g.original_ids = Some(nodes.iter().map(|&u| ids[u].clone()).collect());
        }
        Ok(g)
    }

    /// Same graph with some undirected edges removed (used to hide held-out links).
    pub fn without_edges(&self, removed: &[(usize, usize)]) -> Result<Graph> {
        let drop: std::collections::HashSet<(usize, usize)> = removed
            .iter()
            .map(|&(u, v)| (u.min(v), u.max(v)))
            .collect();
        let mut edges = Vec::new();
        for u in 0..self.num_nodes() {
            let types = self.neighbor_edge_types(u);
            for (k, &v) in self.neighbors(u).iter().enumerate() {
                if u < v && !drop.contains(&(u, v)) {
                    edges.push((u, v, types.map(|t| t[k])));
                }
            }
        }
        let mut g = Graph::from_edges(
            self.num_nodes(),
            &edges,
            self.features.clone(),
            self.labels.clone(),
            self.node_types.clone(),
        )?;
        if self.is_typed() && g.edge_types.is_none() {
            g.edge_types = Some(Vec::new());
        }
        g.original_ids = self.original_ids.clone();
        Ok(g)
    }

    /// Same structure with a different feature matrix.
    pub fn with_features(&self, features: Tensor) -> Result<Graph> {
        if features.dims2()?.0 != self.num_nodes() {
            return Err(Error::config("feature rows must equal node count"));
        }
        let mut g = self.clone();
        g.features = features;
        Ok(g)
    }

    /// Entries of `D̂^{-1/2}(A+I)D̂^{-1/2}` as a sparse matrix with self-loops.
    fn gcn_csr(&self) -> CsrMatrix {
        let n = self.num_nodes();
        let inv_sqrt: Vec<f64> = (0..n)
            .map(|u| 1.0 / ((self.degree(u) + 1) as f64).sqrt())
            .collect();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(self.num_edges() + n);
        let mut vals = Vec::with_capacity(self.num_edges() + n);
        offsets.push(0);
        for u in 0..n {
            let mut self_done = false;
            for &v in self.neighbors(u) {
                if !self_done && v > u {
                    cols.push(u);
                    vals.push(inv_sqrt[u] * inv_sqrt[u]);
                    self_done = true;
                }
                cols.push(v);
                vals.push(inv_sqrt[u] * inv_sqrt[v]);
            }
            if !self_done {
                cols.push(u);
                vals.push(inv_sqrt[u] * inv_sqrt[u]);
            }
            offsets.push(cols.len());
        }
        CsrMatrix {
            n,
            offsets,
            cols,
            vals,
        }
    }

    /// `A + I` with unit weights (GIN sum aggregation with ε = 0).
    fn sum_csr(&self) -> CsrMatrix {
        let n = self.num_nodes();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(self.num_edges() + n);
        offsets.push(0);
        for u in 0..n {
            let mut self_done = false;
            for &v in self.neighbors(u) {
                if !self_done && v > u {
                    cols.push(u);
                    self_done = true;
                }
                cols.push(v);
            }
            if !self_done {
                cols.push(u);
            }
            offsets.push(cols.len());
        }
        let vals = vec![1.0; cols.len()];
        CsrMatrix {
            n,
            offsets,
            cols,
            vals,
        }
    }

    /// Cached sparse GCN propagation operator.
    pub fn gcn_propagator(&self) -> Arc<Propagator> {
        self.gcn
            .get_or_init(|| Arc::new(Propagator::Sparse(self.gcn_csr())))
            .clone()
    }

    /// Cached sparse `A + I` operator.
    pub fn sum_propagator(&self) -> Arc<Propagator> {
        self.sum_aggregate
            .get_or_init(|| Arc::new(Propagator::Sparse(self.sum_csr())))
            .clone()
    }
}

/// Dense symmetric normalized adjacency with self-loops, `D̂^{-1/2}(A+I)D̂^{-1/2}`.
///
/// Isolated nodes get a self-loop weight of 1.
pub fn normalized_adjacency(g: &Graph) -> Tensor {
    g.gcn_propagator().to_dense()
}

#[cfg(test)]
mod tests;
