use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;

use super::config::{AuxData, AuxKind, PartitionMode, Scheme, TargetConfig, TrainConfig};
use super::{stream, streams};
use crate::autodiff::{ParamRegistry, ParamVector, Tape};
use crate::error::{Error, Result};
use crate::graph::{
    partition_nodes, random_split, sample_metapath_pairs, sample_negative_pairs, DataSplit, Graph, MetaPath,
    PartitionTag,
};
use crate::metrics::{self, Metric};
use crate::models::{EncoderConfig, GnnEncoder, HeadKind, TaskHead};
use crate::tasks::{BatchSource, TaskBatch, TaskKind, TaskSpec};

/// Target-task data of a prepared run.
#[derive(Clone, Debug)]
pub enum TargetData {
    Nodes {
        split: DataSplit,
        classes: usize,
    },
    Links {
        train: Vec<(usize, usize)>,
        valid: Vec<(usize, usize)>,
        test: Vec<(usize, usize)>,
        /// `k` fixed negatives per valid/test positive, grouped by positive.
        valid_neg: Vec<(usize, usize)>,
        test_neg: Vec<(usize, usize)>,
        sources: Vec<usize>,
        targets: Vec<usize>,
        known: Arc<HashSet<(usize, usize)>>,
        k: usize,
    },
}

impl TargetData {
    pub fn primary_metric(&self) -> Metric {
        match self {
            TargetData::Nodes { .. } => Metric::MicroF1,
            TargetData::Links { .. } => Metric::Auc,
        }
    }

    /// Items of the target train pool (nodes or positive links).
    pub fn train_len(&self) -> usize {
        match self {
            TargetData::Nodes { split, .. } => split.train.len(),
            TargetData::Links { train, .. } => train.len(),
        }
    }
}

/// Graphs and target data of one seeded run.
#[derive(Clone, Debug)]
pub struct Prepared {
    /// Graph for pre-training (the pretrain partition, or the whole graph).
    pub pretrain_graph: Graph,
    /// Graph for joint training and fine-tuning, with held-out target links removed.
    pub graph: Graph,
    pub target: TargetData,
    /// Source of the auxiliary batches when it differs from `graph`.
    pub aux_graph: Option<AuxGraph>,
}

/// A subgraph feeding the auxiliary tasks, with its node ids in the training graph.
#[derive(Clone, Debug)]
pub struct AuxGraph {
    pub graph: Arc<Graph>,
    pub ids: Arc<[usize]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSplit {
    Valid,
    Test,
}

/// Partitions `g`, splits the target data and hides held-out links.
pub fn prepare(cfg: &TrainConfig, g: &Graph) -> Result<Prepared> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, streams::DATA);
    let (pretrain, finetune, ids, tag) = match cfg.partition {
        PartitionMode::NodeSplit => {
            let (pre, fine) = partition_nodes(g.num_nodes(), cfg.pretrain_fraction, rng.random())?;
            let (pg, fg) = (g.induced_subgraph(&pre)?, g.induced_subgraph(&fine)?);
            (Some(pg), fg, Some((pre, fine)), PartitionTag::Finetune)
        }
        PartitionMode::SameGraph => (None, g.clone(), None, PartitionTag::Whole),
    };
    let (graph, target) = match &cfg.target {
        TargetConfig::NodeClassification => {
            let labeled = finetune.labeled_nodes();
            if labeled.is_empty() {
                return Err(Error::config("target node classification needs labeled nodes"));
            }
            let split = random_split(&labeled, (1.0 / 3.0, 1.0 / 3.0), rng.random(), tag)?;
            if split.train.is_empty() || split.valid.is_empty() || split.test.is_empty() {
                return Err(Error::config(format!(
                    "{} labeled nodes are too few for a train/valid/test split",
                    labeled.len()
                )));
            }
            let classes = finetune.num_classes();
            (finetune, TargetData::Nodes { split, classes })
        }
        TargetConfig::LinkPrediction { edge_type, held_out } => {
            link_target(&finetune, *edge_type, *held_out, cfg.negatives, &mut rng)?
        }
    };
    // MTL has no pre-training phase, so it trains on the whole graph with the
    // finetune partition's target split mapped back to original node ids.
    let pretrain_aux = cfg.scheme == Scheme::PretrainFinetune && cfg.aux_data == AuxData::Pretrain;
    let mut aux_graph = None;
    let (graph, target) = match ids {
        Some((pre, fine)) if cfg.scheme == Scheme::Mtl || pretrain_aux => {
            if pretrain_aux {
                let sub = pretrain.as_ref().expect("node split has a pretrain side").clone();
                aux_graph = Some(AuxGraph {
                    graph: Arc::new(sub),
                    ids: pre.into(),
                });
            }
            lift_to_whole(g, &fine, target)?
        }
        _ => (graph, target),
    };
    let pretrain_graph = pretrain.unwrap_or_else(|| graph.clone());
    Ok(Prepared {
        pretrain_graph,
        graph,
        target,
        aux_graph,
    })
}

fn lift_to_whole(g: &Graph, ids: &[usize], target: TargetData) -> Result<(Graph, TargetData)> {
    let lift = |v: &[usize]| v.iter().map(|&u| ids[u]).collect::<Vec<_>>();
    let lift_pairs = |v: &[(usize, usize)]| v.iter().map(|&(u, w)| (ids[u], ids[w])).collect::<Vec<_>>();
    Ok(match target {
        TargetData::Nodes { split, classes } => {
            let split = DataSplit {
                train: lift(&split.train),
                valid: lift(&split.valid),
                test: lift(&split.test),
                partition: split.partition,
            };
            (g.clone(), TargetData::Nodes { split, classes })
        }
        TargetData::Links {
            train,
            valid,
            test,
            valid_neg,
            test_neg,
            sources,
            targets,
            known,
            k,
        } => {
            let (valid, test) = (lift_pairs(&valid), lift_pairs(&test));
            let hidden: Vec<(usize, usize)> = valid.iter().chain(&test).copied().collect();
            let known = known.iter().map(|&(u, w)| (ids[u], ids[w])).collect();
            (
                g.without_edges(&hidden)?,
                TargetData::Links {
                    train: lift_pairs(&train),
                    valid,
                    test,
                    valid_neg: lift_pairs(&valid_neg),
                    test_neg: lift_pairs(&test_neg),
                    sources: lift(&sources),
                    targets: lift(&targets),
                    known: Arc::new(known),
                    k,
                },
            )
        }
    })
}

fn link_target(
    g: &Graph,
    edge_type: Option<u8>,
    held_out: f64,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Graph, TargetData)> {
    if !(held_out > 0.0 && held_out < 1.0) {
        return Err(Error::config(format!("held_out must lie in (0, 1), got {held_out}")));
    }
    let types = g.node_types();
    let orient = |(u, v): (usize, usize)| match types {
        Some(t) if t[v] < t[u] => (v, u),
        _ => (u, v),
    };
    let links: Vec<(usize, usize)> = g
        .undirected_edges()
        .into_iter()
        .filter(|&(u, v)| edge_type.is_none() || g.edge_type(u, v) == edge_type)
        .map(orient)
        .collect();
    if links.len() < 3 {
        return Err(Error::config("link prediction needs at least three target links"));
    }
    let (sources, targets) = match types {
        Some(t) => {
            let (su, tv) = (t[links[0].0], t[links[0].1]);
            let of = |ty: u8| (0..g.num_nodes()).filter(|&u| t[u] == ty).collect::<Vec<_>>();
            (of(su), of(tv))
        }
        None => ((0..g.num_nodes()).collect(), (0..g.num_nodes()).collect()),
    };
    let mut known: HashSet<(usize, usize)> = links.iter().copied().collect();
    if types.is_none() {
        known.extend(links.iter().map(|&(u, v)| (v, u)));
    }
    let idx: Vec<usize> = (0..links.len()).collect();
    let s = random_split(&idx, (1.0 - held_out, held_out / 2.0), rng.random(), PartitionTag::Finetune)?;
    let pick = |ids: &[usize]| ids.iter().map(|&i| links[i]).collect::<Vec<_>>();
    let (train, valid, test) = (pick(&s.train), pick(&s.valid), pick(&s.test));
    if valid.is_empty() || test.is_empty() || train.is_empty() {
        return Err(Error::config("too few links for a train/valid/test split"));
    }
    let hidden: Vec<(usize, usize)> = valid.iter().chain(&test).copied().collect();
    let graph = g.without_edges(&hidden)?;
    let is_known = |u: usize, v: usize| known.contains(&(u, v)) || u == v;
    let valid_neg = sample_negative_pairs(&sources, &targets, valid.len(), k, rng.random(), is_known)?;
    let test_neg = sample_negative_pairs(&sources, &targets, test.len(), k, rng.random(), is_known)?;
    Ok((
        graph,
        TargetData::Links {
            train,
            valid,
            test,
            valid_neg,
            test_neg,
            sources,
            targets,
            known: Arc::new(known),
            k,
        },
    ))
}

/// Encoder, tasks and their parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub encoder: GnnEncoder,
    pub tasks: Vec<TaskSpec>,
    pub params: ParamVector,
}

impl Model {
    pub fn k(&self) -> usize {
        self.tasks.len().saturating_sub(1)
    }
}

fn target_spec(target: &TargetData, emb_dim: usize) -> Result<(TaskKind, TaskHead, BatchSource)> {
    Ok(match target {
        TargetData::Nodes { split, classes } => (
            TaskKind::TargetNodeClassification,
            TaskHead::new(HeadKind::NodeClassifier { classes: *classes }, "target", emb_dim)?,
            BatchSource::Nodes {
                pool: split.train.clone(),
            },
        ),
        TargetData::Links {
            train,
            sources,
            targets,
            known,
            k,
            ..
        } => (
            TaskKind::TargetLinkPrediction,
            TaskHead::new(HeadKind::EdgeScorer, "target", emb_dim)?,
            BatchSource::TypedPairs {
                positives: train.clone(),
                sources: sources.clone(),
                targets: targets.clone(),
                known: known.clone(),
                k: *k,
            },
        ),
    })
}

/// Registers the encoder, then the target head (if any), then one head per
/// auxiliary task, drawing initial values from `init`. Auxiliary batches come
/// from `aux` when given.
pub fn build_model(
    cfg: &TrainConfig,
    g: &Graph,
    target: Option<&TargetData>,
    aux_graph: Option<&AuxGraph>,
    init: &mut ChaCha8Rng,
) -> Result<Model> {
    let ag = aux_graph.map_or(g, |a| &*a.graph);
    let enc_cfg = EncoderConfig {
        kind: cfg.encoder.kind,
        input_dim: g.feature_dim(),
        hidden_dims: cfg.encoder.hidden_dims.clone(),
        dropout: cfg.encoder.dropout,
    };
    let mut reg = ParamRegistry::new();
    let encoder = GnnEncoder::register(enc_cfg, &mut reg, init)?;
    let d = encoder.output_dim();
    let mut tasks = Vec::new();
    let target_parts = target.map(|t| target_spec(t, d)).transpose()?;
    if let Some((kind, head, source)) = &target_parts {
        let head = TaskHead::register(head.kind().clone(), "target", 0, d, &mut reg, init)?;
        tasks.push(TaskSpec::new(0, "target", *kind, head, 1.0, source.clone())?);
    }
    let mut pool_rng = stream(cfg.seed, streams::TASK_DATA);
    for (i, aux) in cfg.aux_tasks.iter().enumerate() {
        let id = i + 1;
        let pool_seed: u64 = pool_rng.random();
        let (kind, head_kind, source) = match &aux.kind {
            AuxKind::EdgeGeneration => (
                TaskKind::AuxEdgeGeneration,
                HeadKind::EdgeScorer,
                BatchSource::Edges {
                    positives: ag.undirected_edges(),
                    k: cfg.negatives,
                },
            ),
            AuxKind::AttributeGeneration { mask_fraction } => (
                TaskKind::AuxAttributeGeneration,
                HeadKind::AttributeDecoder {
                    out_dim: ag.feature_dim(),
                },
                BatchSource::Masked {
                    fraction: *mask_fraction,
                },
            ),
            AuxKind::MetapathPrediction {
                node_types,
                edge_types,
                pairs,
            } => {
                let mp = match edge_types {
                    Some(e) => MetaPath::new(aux.name.clone(), node_types.clone(), e.clone())?,
                    None => MetaPath::untyped_edges(aux.name.clone(), node_types.clone())?,
                };
                let pool = sample_metapath_pairs(ag, &mp, *pairs, *pairs, pool_seed)?;
                (
                    TaskKind::AuxMetapathPrediction,
                    HeadKind::PairClassifier {
                        hidden: cfg.pair_hidden,
                    },
                    BatchSource::LabeledPairs { pairs: pool },
                )
            }
            AuxKind::TargetCopy => {
                let (_, head, source) = target_parts
                    .as_ref()
                    .ok_or_else(|| Error::config(format!("task `{}` copies a target that is not present", aux.name)))?;
                (TaskKind::AuxTargetCopy, head.kind().clone(), source.clone())
            }
        };
        if kind == TaskKind::AuxEdgeGeneration && ag.num_edges() == 0 {
            return Err(Error::config(format!("task `{}` needs a graph with edges", aux.name)));
        }
        let source = match aux_graph {
            Some(a) if kind != TaskKind::AuxTargetCopy => BatchSource::Lifted {
                graph: a.graph.clone(),
                ids: a.ids.clone(),
                inner: Box::new(source),
            },
            _ => source,
        };
        let head = TaskHead::register(head_kind, &aux.name, id, d, &mut reg, init)?;
        tasks.push(TaskSpec::new(id, aux.name.clone(), kind, head, aux.loss_scale, source)?);
    }
    let mut params = reg.freeze();
    // A copy starts from the target head's values so both stay in lockstep.
    if target.is_some() {
        for t in tasks.iter().filter(|t| t.kind == TaskKind::AuxTargetCopy) {
            copy_head(&mut params, "head.target", t.head.prefix())?;
        }
    }
    Ok(Model { encoder, tasks, params })
}

fn copy_head(params: &mut ParamVector, from: &str, to: &str) -> Result<()> {
    let names: Vec<String> = params
        .layout()
        .entries()
        .iter()
        .filter_map(|e| e.name.strip_prefix(&format!("{from}.")).map(str::to_owned))
        .collect();
    for suffix in names {
        let t = params.tensor(&format!("{from}.{suffix}"))?;
        params.set(&format!("{to}.{suffix}"), &t)?;
    }
    Ok(())
}

/// The target batches of one epoch: the train pool shuffled and cut into
/// `batch_size` chunks. Link batches get `k` fresh negatives per positive.
pub fn epoch_batches(target: &TargetData, g: &Graph, pool: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<TaskBatch>> {
    let mut order = pool.to_vec();
    order.shuffle(rng);
    let mut out = Vec::new();
    for chunk in order.chunks(batch_size) {
        out.push(match target {
            TargetData::Nodes { .. } => {
                let labels = chunk
                    .iter()
                    .map(|&u| g.labels()[u].ok_or_else(|| Error::config(format!("node {u} has no label"))))
                    .collect::<Result<Vec<_>>>()?;
                TaskBatch::nodes(chunk.to_vec(), labels)?
            }
            TargetData::Links {
                train,
                sources,
                targets,
                known,
                k,
                ..
            } => {
                let pos: Vec<(usize, usize)> = chunk.iter().map(|&i| train[i]).collect();
                let neg = sample_negative_pairs(sources, targets, pos.len(), *k, rng.random(), |u, v| {
                    u == v || known.contains(&(u, v))
                })?;
                labeled_pairs(pos, neg)?
            }
        });
    }
    Ok(out)
}

fn labeled_pairs(pos: Vec<(usize, usize)>, neg: Vec<(usize, usize)>) -> Result<TaskBatch> {
    let labels: Vec<f64> = std::iter::repeat_n(1.0, pos.len())
        .chain(std::iter::repeat_n(0.0, neg.len()))
        .collect();
    let pairs: Vec<_> = pos.into_iter().chain(neg).collect();
    TaskBatch::pairs(&pairs, labels)
}

/// Indices into the target train pool (nodes themselves for node targets).
pub fn train_pool(target: &TargetData) -> Vec<usize> {
    match target {
        TargetData::Nodes { split, .. } => split.train.clone(),
        TargetData::Links { train, .. } => (0..train.len()).collect(),
    }
}

/// Target metrics with dropout off.
pub fn evaluate(model: &Model, params: &ParamVector, g: &Graph, target: &TargetData, which: EvalSplit) -> Result<BTreeMap<Metric, f64>> {
    let head = &model.tasks.first().ok_or_else(|| Error::usage("model has no target task"))?.head;
    let mut tape = Tape::new(params);
    let x = tape.constant(g.features().clone())?;
    let z = model.encoder.encode(&mut tape, g, x, None::<&mut dyn RngCore>)?;
    let mut out = BTreeMap::new();
    match target {
        TargetData::Nodes { split, .. } => {
            let nodes = match which {
                EvalSplit::Valid => &split.valid,
                EvalSplit::Test => &split.test,
            };
            let logits = head.node_logits(&mut tape, z, nodes.as_slice().into())?;
            let logits = tape.value(logits).clone();
            let truth: Vec<usize> = nodes.iter().map(|&u| g.labels()[u].expect("split nodes are labeled")).collect();
            let mut pred = Vec::with_capacity(nodes.len());
            let mut ranks = Vec::with_capacity(nodes.len());
            let mut rels = Vec::with_capacity(nodes.len());
            for (r, &t) in truth.iter().enumerate() {
                let row = logits.row(r);
                pred.push(metrics::argmax(row));
                ranks.push(metrics::rank_of(row, t)?);
                rels.push(metrics::ranked_relevance(row, t)?);
            }
            out.insert(Metric::MicroF1, metrics::micro_f1(&pred, &truth)?);
            out.insert(Metric::Mrr, metrics::mrr(&ranks)?);
            out.insert(Metric::Ndcg, metrics::ndcg(&rels)?);
        }
        TargetData::Links {
            valid,
            test,
            valid_neg,
            test_neg,
            k,
            ..
        } => {
            let (pos, neg) = match which {
                EvalSplit::Valid => (valid, valid_neg),
                EvalSplit::Test => (test, test_neg),
            };
            let pairs: Vec<(usize, usize)> = pos.iter().chain(neg).copied().collect();
            let src: Arc<[usize]> = pairs.iter().map(|p| p.0).collect();
            let dst: Arc<[usize]> = pairs.iter().map(|p| p.1).collect();
            let s = head.pair_scores(&mut tape, z, src, dst)?;
            let scores = tape.value(s).data().to_vec();
            let labels: Vec<bool> = (0..pairs.len()).map(|i| i < pos.len()).collect();
            out.insert(Metric::Auc, metrics::auc(&scores, &labels)?);
            let (ps, ns) = scores.split_at(pos.len());
            let mut ranks = Vec::with_capacity(pos.len());
            let mut rels = Vec::with_capacity(pos.len());
            for (j, &p) in ps.iter().enumerate() {
                let mut cand = vec![p];
                cand.extend_from_slice(&ns[j * k..(j + 1) * k]);
                ranks.push(metrics::rank_of(&cand, 0)?);
                rels.push(metrics::ranked_relevance(&cand, 0)?);
            }
            out.insert(Metric::Mrr, metrics::mrr(&ranks)?);
            out.insert(Metric::Ndcg, metrics::ndcg(&rels)?);
        }
    }
    if let Some((m, v)) = out.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::numeric("evaluate", format!("{m} = {v}")));
    }
    Ok(out)
}
