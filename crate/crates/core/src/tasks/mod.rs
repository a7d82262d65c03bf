//! Target and auxiliary tasks: batch sources, per-task losses and per-task
//! gradients over the shared encoder parameters.

use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::index;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamGroup, ParamVector, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{mask_attributes, sample_negative_edges, sample_negative_pairs, split_batch, Graph};
use crate::models::{GnnEncoder, HeadKind, TaskHead};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    TargetNodeClassification,
    TargetLinkPrediction,
    AuxEdgeGeneration,
    AuxAttributeGeneration,
    AuxMetapathPrediction,
    /// Duplicate of the target task on the target's own batches.
    AuxTargetCopy,
}

impl TaskKind {
    pub fn is_target(self) -> bool {
        matches!(
            self,
            TaskKind::TargetNodeClassification | TaskKind::TargetLinkPrediction
        )
    }
}

/// One task of a run. Task 0 is the target.
#[derive(Clone, Debug)]
pub struct TaskSpec {
    pub task_id: usize,
    pub name: String,
    pub kind: TaskKind,
    pub head: TaskHead,
    pub loss_scale: f64,
    pub source: BatchSource,
}

impl TaskSpec {
    pub fn new(
        task_id: usize,
        name: impl Into<String>,
        kind: TaskKind,
        head: TaskHead,
        loss_scale: f64,
        source: BatchSource,
    ) -> Result<Self> {
        let name = name.into();
        if !(loss_scale > 0.0 && loss_scale.is_finite()) {
            return Err(Error::config(format!(
                "task `{name}`: loss_scale must be positive, got {loss_scale}"
            )));
        }
        let head_ok = match kind {
            TaskKind::TargetNodeClassification => matches!(head.kind(), HeadKind::NodeClassifier { .. }),
            TaskKind::TargetLinkPrediction | TaskKind::AuxEdgeGeneration => {
                matches!(head.kind(), HeadKind::EdgeScorer | HeadKind::PairClassifier { .. })
            }
            TaskKind::AuxAttributeGeneration => matches!(head.kind(), HeadKind::AttributeDecoder { .. }),
            TaskKind::AuxMetapathPrediction => matches!(head.kind(), HeadKind::PairClassifier { .. }),
            TaskKind::AuxTargetCopy => !matches!(head.kind(), HeadKind::AttributeDecoder { .. }),
        };
        if !head_ok {
            return Err(Error::config(format!(
                "task `{name}` ({kind:?}) cannot use a {:?} head",
                head.kind()
            )));
        }
        Ok(Self {
            task_id,
            name,
            kind,
            head,
            loss_scale,
            source,
        })
    }
}

/// Checks that task ids run `0..=K` in order and only task 0 is a target task.
pub fn validate_tasks(tasks: &[TaskSpec]) -> Result<()> {
    if tasks.is_empty() || !tasks[0].kind.is_target() {
        return Err(Error::config("task 0 must be the target task"));
    }
    for (i, t) in tasks.iter().enumerate() {
        if t.task_id != i {
            return Err(Error::config(format!(
                "task `{}` has id {} at position {i}",
                t.name, t.task_id
            )));
        }
        if i > 0 && t.kind.is_target() {
            return Err(Error::config(format!("task `{}` is a second target task", t.name)));
        }
    }
    Ok(())
}

/// Data for one task evaluation.
#[derive(Clone, Debug, PartialEq)]
pub enum TaskBatch {
    /// Nodes with class labels.
    Nodes { nodes: Arc<[usize]>, labels: Arc<[usize]> },
    /// Node pairs with 0/1 labels as an `m x 1` column.
    Pairs {
        src: Arc<[usize]>,
        dst: Arc<[usize]>,
        labels: Arc<Tensor>,
    },
    /// Masked feature matrix (for the encoder), masked node ids and their original rows.
    Masked {
        features: Arc<Tensor>,
        nodes: Arc<[usize]>,
        targets: Arc<Tensor>,
    },
}

impl TaskBatch {
    pub fn nodes(nodes: Vec<usize>, labels: Vec<usize>) -> Result<Self> {
        if nodes.len() != labels.len() {
            return Err(Error::usage("node batch: labels not aligned with nodes"));
        }
        Ok(TaskBatch::Nodes {
            nodes: nodes.into(),
            labels: labels.into(),
        })
    }

    pub fn pairs(pairs: &[(usize, usize)], labels: Vec<f64>) -> Result<Self> {
        if pairs.len() != labels.len() {
            return Err(Error::usage("pair batch: labels not aligned with pairs"));
        }
        let m = pairs.len();
        Ok(TaskBatch::Pairs {
            src: pairs.iter().map(|p| p.0).collect(),
            dst: pairs.iter().map(|p| p.1).collect(),
            labels: Arc::new(Tensor::matrix(m, 1, labels)?),
        })
    }

    pub fn len(&self) -> usize {
        match self {
            TaskBatch::Nodes { nodes, .. } | TaskBatch::Masked { nodes, .. } => nodes.len(),
            TaskBatch::Pairs { src, .. } => src.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Items at positions `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Result<TaskBatch> {
        if let Some(&i) = idx.iter().find(|&&i| i >= self.len()) {
            return Err(Error::usage(format!("batch position {i} out of range")));
        }
        let pick = |v: &[usize]| -> Arc<[usize]> { idx.iter().map(|&i| v[i]).collect() };
        Ok(match self {
            TaskBatch::Nodes { nodes, labels } => TaskBatch::Nodes {
                nodes: pick(nodes),
                labels: pick(labels),
            },
            TaskBatch::Pairs { src, dst, labels } => TaskBatch::Pairs {
                src: pick(src),
                dst: pick(dst),
                labels: Arc::new(labels.select_rows(idx)?),
            },
            TaskBatch::Masked {
                features,
                nodes,
                targets,
            } => TaskBatch::Masked {
                features: features.clone(),
                nodes: pick(nodes),
                targets: Arc::new(targets.select_rows(idx)?),
            },
        })
    }

    /// Seeded split into a train part and a meta part (see [`split_batch`]).
    pub fn split(&self, ratio: f64, seed: u64) -> Result<(TaskBatch, TaskBatch)> {
        let positions: Vec<usize> = (0..self.len()).collect();
        let (a, b) = split_batch(&positions, ratio, seed)?;
        Ok((self.subset(&a)?, self.subset(&b)?))
    }
}

/// Where a task's batches come from.
#[derive(Clone, Debug)]
pub enum BatchSource {
    /// Labeled nodes of the graph, drawn without replacement.
    Nodes { pool: Vec<usize> },
    /// Graph edges as positives with `k` random non-edges per positive.
    Edges { positives: Vec<(usize, usize)>, k: usize },
    /// Positive `(source, target)` pairs with `k` negatives per positive drawn
    /// from `sources × targets` outside `known`.
    TypedPairs {
        positives: Vec<(usize, usize)>,
        sources: Vec<usize>,
        targets: Vec<usize>,
        known: Arc<HashSet<(usize, usize)>>,
        k: usize,
    },
    /// A fixed pool of labeled pairs.
    LabeledPairs { pairs: Vec<((usize, usize), f64)> },
    /// Freshly masked attributes; `fraction` of all nodes per batch.
    Masked { fraction: f64 },
    /// `inner` sampled on a subgraph, with node ids mapped through `ids` into
    /// the graph passed to [`BatchSource::sample`].
    Lifted {
        graph: Arc<Graph>,
        ids: Arc<[usize]>,
        inner: Box<BatchSource>,
    },
}

fn draw<T: Clone>(pool: &[T], n: usize, rng: &mut dyn RngCore) -> Vec<T> {
    if n >= pool.len() {
        return pool.to_vec();
    }
    let mut idx = index::sample(rng, pool.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| pool[i].clone()).collect()
}

impl BatchSource {
    /// A batch of up to `batch_size` items (positives, for pair sources).
    pub fn sample(&self, g: &Graph, batch_size: usize, rng: &mut dyn RngCore) -> Result<TaskBatch> {
        if batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        let batch = match self {
            BatchSource::Nodes { pool } => {
                let nodes = draw(pool, batch_size, rng);
                let labels = nodes
                    .iter()
                    .map(|&u| {
                        g.labels()[u]
                            .ok_or_else(|| Error::config(format!("node {u} has no label")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                TaskBatch::nodes(nodes, labels)?
            }
            BatchSource::Edges { positives, k } => {
                let pos = draw(positives, batch_size, rng);
                let neg = sample_negative_edges(g, &pos, *k, rng.random())?;
                labeled(pos, neg)?
            }
            BatchSource::TypedPairs {
                positives,
                sources,
                targets,
                known,
                k,
            } => {
                let pos = draw(positives, batch_size, rng);
                let neg = sample_negative_pairs(sources, targets, pos.len(), *k, rng.random(), |u, v| {
                    known.contains(&(u, v))
                })?;
                labeled(pos, neg)?
            }
            BatchSource::LabeledPairs { pairs } => {
                let picked = draw(pairs, batch_size, rng);
                let (p, y): (Vec<_>, Vec<_>) = picked.into_iter().unzip();
                TaskBatch::pairs(&p, y)?
            }
            BatchSource::Masked { fraction } => {
                let m = mask_attributes(g, *fraction, rng.random())?;
                let keep = draw(&(0..m.masked.len()).collect::<Vec<_>>(), batch_size, rng);
                TaskBatch::Masked {
                    features: Arc::new(m.features),
                    nodes: keep.iter().map(|&i| m.masked[i]).collect(),
                    targets: Arc::new(m.targets.select_rows(&keep)?),
                }
            }
            BatchSource::Lifted { graph, ids, inner } => lift(inner.sample(graph, batch_size, rng)?, ids, g)?,
        };
        if batch.is_empty() {
            return Err(Error::Sampling("batch source produced an empty batch".into()));
        }
        Ok(batch)
    }
}

fn lift(batch: TaskBatch, ids: &[usize], g: &Graph) -> Result<TaskBatch> {
    let map = |v: &[usize]| -> Result<Arc<[usize]>> {
        v.iter()
            .map(|&u| match ids.get(u) {
                Some(&w) if w < g.num_nodes() => Ok(w),
                _ => Err(Error::usage(format!("subgraph node {u} has no id in the graph"))),
            })
            .collect()
    };
    Ok(match batch {
        TaskBatch::Nodes { nodes, labels } => TaskBatch::Nodes {
            nodes: map(&nodes)?,
            labels,
        },
        TaskBatch::Pairs { src, dst, labels } => TaskBatch::Pairs {
            src: map(&src)?,
            dst: map(&dst)?,
            labels,
        },
        TaskBatch::Masked { nodes, targets, features } => {
            if features.cols() != g.feature_dim() {
                return Err(Error::usage("subgraph and graph feature widths differ"));
            }
            let nodes = map(&nodes)?;
            // Every masked subgraph row, not just the kept ones, is hidden.
            let mut full = g.features().clone();
            for (u, row) in ids.iter().enumerate() {
                if features.row(u).iter().all(|&x| x == 0.0) {
                    full.row_mut(*row).iter_mut().for_each(|x| *x = 0.0);
                }
            }
            TaskBatch::Masked {
                features: Arc::new(full),
                nodes,
                targets,
            }
        }
    })
}

fn labeled(pos: Vec<(usize, usize)>, neg: Vec<(usize, usize)>) -> Result<TaskBatch> {
    let labels: Vec<f64> = std::iter::repeat_n(1.0, pos.len())
        .chain(std::iter::repeat_n(0.0, neg.len()))
        .collect();
    let pairs: Vec<_> = pos.into_iter().chain(neg).collect();
    TaskBatch::pairs(&pairs, labels)
}

fn nonempty(batch: &TaskBatch, what: &str) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::usage(format!("{what}: empty batch")));
    }
    Ok(())
}

/// Mean binary cross-entropy on logits: `mean(softplus(s) − y·s)`.
pub fn bce_with_logits(tape: &mut Tape, scores: Var, labels: Arc<Tensor>) -> Result<Var> {
    let sp = tape.softplus(scores)?;
    let ys = tape.mul_const(scores, labels)?;
    let per = tape.sub(sp, ys)?;
    tape.mean(per)
}

/// Mean cross-entropy of the head's logits against class labels, times `scale`.
pub fn target_node_classification_loss(
    tape: &mut Tape,
    z: Var,
    head: &TaskHead,
    batch: &TaskBatch,
    scale: f64,
) -> Result<Var> {
    nonempty(batch, "node classification loss")?;
    let TaskBatch::Nodes { nodes, labels } = batch else {
        return Err(Error::usage("node classification needs a node batch"));
    };
    let logits = head.node_logits(tape, z, nodes.clone())?;
    let logp = tape.log_softmax(logits)?;
    let picked = tape.pick_cols(logp, labels.clone())?;
    let nll = tape.mean(picked)?;
    tape.scale(nll, -scale)
}

/// Mean BCE of pair scores against 0/1 labels, times `scale`. Used by the
/// link-prediction target, edge generation and meta-path prediction.
pub fn pair_bce_loss(tape: &mut Tape, z: Var, head: &TaskHead, batch: &TaskBatch, scale: f64) -> Result<Var> {
    nonempty(batch, "pair loss")?;
    let TaskBatch::Pairs { src, dst, labels } = batch else {
        return Err(Error::usage("pair loss needs a pair batch"));
    };
    let scores = head.pair_scores(tape, z, src.clone(), dst.clone())?;
    let l = bce_with_logits(tape, scores, labels.clone())?;
    tape.scale(l, scale)
}

pub fn target_link_prediction_loss(tape: &mut Tape, z: Var, head: &TaskHead, batch: &TaskBatch, scale: f64) -> Result<Var> {
    pair_bce_loss(tape, z, head, batch, scale)
}

pub fn aux_edge_generation_loss(tape: &mut Tape, z: Var, head: &TaskHead, batch: &TaskBatch, scale: f64) -> Result<Var> {
    pair_bce_loss(tape, z, head, batch, scale)
}

pub fn aux_metapath_prediction_loss(tape: &mut Tape, z: Var, head: &TaskHead, batch: &TaskBatch, scale: f64) -> Result<Var> {
    pair_bce_loss(tape, z, head, batch, scale)
}

/// Mean squared error between decoded rows and original features over the
/// masked nodes, times `scale`. `z` must come from the masked feature matrix.
pub fn aux_attribute_generation_loss(
    tape: &mut Tape,
    z: Var,
    head: &TaskHead,
    batch: &TaskBatch,
    scale: f64,
) -> Result<Var> {
    let TaskBatch::Masked { nodes, targets, .. } = batch else {
        return Err(Error::usage("attribute generation needs a masked batch"));
    };
    if nodes.is_empty() {
        return Err(Error::usage("attribute generation: no masked nodes"));
    }
    let pred = head.decode(tape, z, nodes.clone())?;
    let t = tape.constant(targets.as_ref().clone())?;
    let diff = tape.sub(pred, t)?;
    let sq = tape.mul(diff, diff)?;
    let l = tape.mean(sq)?;
    tape.scale(l, scale)
}

/// The task's loss on `batch` given embeddings `z` of the right feature matrix.
pub fn task_loss(tape: &mut Tape, task: &TaskSpec, z: Var, batch: &TaskBatch) -> Result<Var> {
    let (h, s) = (&task.head, task.loss_scale);
    match task.kind {
        TaskKind::TargetNodeClassification => target_node_classification_loss(tape, z, h, batch, s),
        TaskKind::TargetLinkPrediction => target_link_prediction_loss(tape, z, h, batch, s),
        TaskKind::AuxEdgeGeneration => aux_edge_generation_loss(tape, z, h, batch, s),
        TaskKind::AuxAttributeGeneration => aux_attribute_generation_loss(tape, z, h, batch, s),
        TaskKind::AuxMetapathPrediction => aux_metapath_prediction_loss(tape, z, h, batch, s),
        TaskKind::AuxTargetCopy => match batch {
            TaskBatch::Nodes { .. } => target_node_classification_loss(tape, z, h, batch, s),
            _ => pair_bce_loss(tape, z, h, batch, s),
        },
    }
}

/// Builds the losses of several tasks on one tape.
///
/// The clean feature matrix is encoded once (only if some task needs it) and
/// each masked batch gets its own encoder pass. With `dropout`, masks for the
/// clean pass are drawn first, then for masked passes in task order.
pub fn forward_losses(
    tape: &mut Tape,
    encoder: &GnnEncoder,
    g: &Graph,
    tasks: &[&TaskSpec],
    batches: &[&TaskBatch],
    mut dropout: Option<&mut dyn RngCore>,
) -> Result<Vec<Var>> {
    if tasks.len() != batches.len() {
        return Err(Error::usage("one batch per task required"));
    }
    let needs_clean = batches.iter().any(|b| !matches!(b, TaskBatch::Masked { .. }));
    let clean = if needs_clean {
        let x = tape.constant(g.features().clone())?;
        Some(encoder.encode(tape, g, x, reborrow(&mut dropout))?)
    } else {
        None
    };
    let mut out = Vec::with_capacity(tasks.len());
    for (task, batch) in tasks.iter().zip(batches) {
        let z = match batch {
            TaskBatch::Masked { features, .. } => {
                let x = tape.constant(features.as_ref().clone())?;
                encoder.encode(tape, g, x, reborrow(&mut dropout))?
            }
            _ => clean.expect("clean pass built above"),
        };
        out.push(task_loss(tape, task, z, batch)?);
    }
    Ok(out)
}

fn reborrow<'a>(d: &'a mut Option<&mut dyn RngCore>) -> Option<&'a mut dyn RngCore> {
    match d {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

/// Loss and full gradient (encoder and every head) of each task, without dropout.
pub fn task_losses_and_grads(
    params: &ParamVector,
    encoder: &GnnEncoder,
    g: &Graph,
    tasks: &[&TaskSpec],
    batches: &[&TaskBatch],
) -> Result<Vec<(f64, ParamVector)>> {
    let mut tape = Tape::new(params);
    let losses = forward_losses(&mut tape, encoder, g, tasks, batches, None)?;
    losses
        .into_iter()
        .map(|l| Ok((tape.scalar(l)?, tape.backward(l)?)))
        .collect()
}

/// Unweighted loss of one task and its gradient over the shared encoder parameters only.
pub fn task_gradient(
    task: &TaskSpec,
    encoder: &GnnEncoder,
    params: &ParamVector,
    g: &Graph,
    batch: &TaskBatch,
) -> Result<(f64, ParamVector)> {
    let mut res = task_losses_and_grads(params, encoder, g, &[task], &[batch])?;
    let (loss, grad) = res.pop().expect("one task");
    Ok((loss, grad.restrict_group(ParamGroup::Shared)))
}

#[cfg(test)]
mod tests;
