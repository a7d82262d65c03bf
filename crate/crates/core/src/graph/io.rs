//! Text formats: edge TSV (`src<TAB>dst[<TAB>edge_type]`), feature CSV
//! (`node_id,v1,...,vd`, one row per node) and label TSV
//! (`node_id<TAB>label`). Node ids are arbitrary strings, re-indexed densely
//! in feature-file order. Blank lines and lines starting with `#` are skipped.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{EdgeInput, Graph};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn ingest_err(path: &Path, line: usize, detail: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        detail: format!("line {line}: {}", detail.into()),
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

/// Reads a graph from the three text files; see the module docs for formats.
pub fn load_graph(edge_file: &Path, feature_file: &Path, label_file: &Path) -> Result<Graph> {
    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<f64> = Vec::new();
    let mut dim: Option<usize> = None;
    let text = read(feature_file)?;
    for (line, l) in content_lines(&text) {
        let mut fields = l.split(',');
        let id = fields.next().unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(ingest_err(feature_file, line, "missing node id"));
        }
        let values = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| ingest_err(feature_file, line, format!("bad value `{f}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(ingest_err(
                    feature_file,
                    line,
                    format!("ragged row: {} values, expected {d}", values.len()),
                ))
            }
            _ => {}
        }
        if index.insert(id.clone(), ids.len()).is_some() {
            return Err(ingest_err(feature_file, line, format!("duplicate node id `{id}`")));
        }
        ids.push(id);
        rows.extend(values);
    }
    let n = ids.len();
    let features = Tensor::matrix(n, dim.unwrap_or(0), rows)?;

    let lookup = |path: &Path, line: usize, id: &str| -> Result<usize> {
        index
            .get(id)
            .copied()
            .ok_or_else(|| ingest_err(path, line, format!("node id `{id}` has no feature row")))
    };

    let mut edges: Vec<EdgeInput> = Vec::new();
    let text = read(edge_file)?;
    for (line, l) in content_lines(&text) {
        let fields: Vec<&str> = l.split('\t').collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(ingest_err(edge_file, line, "expected src<TAB>dst[<TAB>edge_type]"));
        }
        let u = lookup(edge_file, line, fields[0].trim())?;
        let v = lookup(edge_file, line, fields[1].trim())?;
        let t = match fields.get(2) {
            Some(t) => Some(
                t.trim()
                    .parse::<u8>()
                    .map_err(|_| ingest_err(edge_file, line, format!("bad edge type `{t}`")))?,
            ),
            None => None,
        };
        edges.push((u, v, t));
    }

    let mut labels = vec![None; n];
    let text = read(label_file)?;
    for (line, l) in content_lines(&text) {
        let (id, lab) = l
            .split_once('\t')
            .ok_or_else(|| ingest_err(label_file, line, "expected node_id<TAB>label"))?;
        let u = lookup(label_file, line, id.trim())?;
        let lab = lab
            .trim()
            .parse::<usize>()
            .map_err(|_| ingest_err(label_file, line, format!("bad label `{lab}`")))?;
        labels[u] = Some(lab);
    }

    let mut g = Graph::from_edges(n, &edges, features, labels, None)?;
    g.set_original_ids(ids);
    Ok(g)
}

fn node_name(g: &Graph, u: usize) -> String {
    g.original_ids()
        .map_or_else(|| u.to_string(), |ids| ids[u].clone())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the three files read by [`load_graph`]. Values use Rust's shortest
/// round-trip float formatting, so a reload reproduces features bit-exactly.
pub fn write_graph(g: &Graph, edge_file: &Path, feature_file: &Path, label_file: &Path) -> Result<()> {
    let mut out = String::new();
    for (u, v) in g.undirected_edges() {
        let _ = write!(out, "{}\t{}", node_name(g, u), node_name(g, v));
        if let Some(t) = g.edge_type(u, v) {
            let _ = write!(out, "\t{t}");
        }
        out.push('\n');
    }
    write(edge_file, &out)?;

    let mut out = String::new();
    for u in 0..g.num_nodes() {
        out.push_str(&node_name(g, u));
        for x in g.features().row(u) {
            let _ = write!(out, ",{x}");
        }
        out.push('\n');
    }
    write(feature_file, &out)?;

    let mut out = String::new();
    for (u, lab) in g.labels().iter().enumerate() {
        if let Some(lab) = lab {
            let _ = writeln!(out, "{}\t{lab}", node_name(g, u));
        }
    }
    write(label_file, &out)
}

/// Persists `original_id<TAB>dense_id` for every node.
pub fn write_id_map(g: &Graph, path: &Path) -> Result<()> {
    let mut out = String::new();
    for u in 0..g.num_nodes() {
        let _ = writeln!(out, "{}\t{u}", node_name(g, u));
    }
    write(path, &out)
}
