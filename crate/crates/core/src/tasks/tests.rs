use std::collections::HashSet;
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{finite_diff_grad, relative_error, ParamRegistry, ParamVector, Tape, Tensor};
use crate::graph::{generate_bipartite, sample_metapath_pairs, BipartiteConfig, MetaPath};
use crate::models::{EncoderConfig, EncoderKind};

fn ln2() -> f64 {
    std::f64::consts::LN_2
}

/// Tape with a constant embedding matrix and one registered head.
fn head_only(kind: HeadKind, emb_dim: usize) -> (TaskHead, ParamVector) {
    let mut reg = ParamRegistry::new();
    let h = TaskHead::register(kind, "t", 0, emb_dim, &mut reg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    (h, reg.freeze())
}

#[test]
fn uniform_logits_give_log_c() {
    let (h, mut p) = head_only(HeadKind::NodeClassifier { classes: 4 }, 3);
    p.set("head.t.w", &Tensor::zeros(&[3, 4])).unwrap();
    let mut tape = Tape::new(&p);
    let z = tape.constant(Tensor::filled(&[5, 3], 0.2)).unwrap();
    let b = TaskBatch::nodes(vec![0, 1, 4], vec![0, 3, 2]).unwrap();
    let l = target_node_classification_loss(&mut tape, z, &h, &b, 1.0).unwrap();
    assert!((tape.scalar(l).unwrap() - 4f64.ln()).abs() < 1e-15);
}

#[test]
fn large_margin_gives_tiny_cross_entropy() {
    let (h, mut p) = head_only(HeadKind::NodeClassifier { classes: 3 }, 3);
    p.set("head.t.w", &Tensor::identity(3).map(|x| 20.0 * x)).unwrap();
    let mut tape = Tape::new(&p);
    let z = tape.constant(Tensor::identity(3)).unwrap();
    let b = TaskBatch::nodes(vec![0, 1, 2], vec![0, 1, 2]).unwrap();
    let l = target_node_classification_loss(&mut tape, z, &h, &b, 1.0).unwrap();
    let v = tape.scalar(l).unwrap();
    assert!((0.0..1e-8).contains(&v), "{v}");
}

#[test]
fn cross_entropy_matches_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (h, p) = head_only(HeadKind::NodeClassifier { classes: 5 }, 4);
    let zt = Tensor::matrix(8, 4, (0..32).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let labels: Vec<usize> = (0..8).map(|_| rng.random_range(0..5)).collect();
    let mut tape = Tape::new(&p);
    let z = tape.constant(zt.clone()).unwrap();
    let b = TaskBatch::nodes((0..8).collect(), labels.clone()).unwrap();
    let l = target_node_classification_loss(&mut tape, z, &h, &b, 1.0).unwrap();

    let w = p.tensor("head.t.w").unwrap();
    let bias = p.get("head.t.b").unwrap();
    let mut want = 0.0;
    for i in 0..8 {
        let logits: Vec<f64> = (0..5)
            .map(|c| (0..4).map(|k| zt.get(i, k) * w.get(k, c)).sum::<f64>() + bias[c])
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        want += lse - logits[labels[i]];
    }
    want /= 8.0;
    assert!((tape.scalar(l).unwrap() - want).abs() <= 1e-10);
}

#[test]
fn zero_scores_give_ln2_and_margins_give_tiny_loss() {
    let (h, p) = head_only(HeadKind::EdgeScorer, 2);
    let mut tape = Tape::new(&p);
    let z = tape.constant(Tensor::zeros(&[4, 2])).unwrap();
    let b = TaskBatch::pairs(&[(0, 1), (2, 3), (0, 3)], vec![1.0, 0.0, 1.0]).unwrap();
    let l = target_link_prediction_loss(&mut tape, z, &h, &b, 1.0).unwrap();
    assert!((tape.scalar(l).unwrap() - ln2()).abs() < 1e-15);

    let s = 20f64.sqrt();
    let mut tape = Tape::new(&p);
    let z = tape
        .constant(Tensor::from_rows(&[vec![s, 0.0], vec![s, 0.0], vec![-s, 0.0]]).unwrap())
        .unwrap();
    let b = TaskBatch::pairs(&[(0, 1), (0, 2)], vec![1.0, 0.0]).unwrap();
    let l = target_link_prediction_loss(&mut tape, z, &h, &b, 1.0).unwrap();
    assert!(tape.scalar(l).unwrap() < 1e-8);
}

#[test]
fn one_edge_graph_with_one_negative_gives_ln2() {
    let g = Graph::from_edges(3, &[(0, 1, None)], Tensor::zeros(&[3, 2]), vec![None; 3], None).unwrap();
    let src = BatchSource::Edges {
        positives: g.undirected_edges(),
        k: 1,
    };
    let batch = src.sample(&g, 10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(batch.len(), 2);
    let (h, p) = head_only(HeadKind::EdgeScorer, 2);
    let mut tape = Tape::new(&p);
    let z = tape.constant(Tensor::zeros(&[3, 2])).unwrap();
    let l = aux_edge_generation_loss(&mut tape, z, &h, &batch, 1.0).unwrap();
    assert_eq!(tape.scalar(l).unwrap(), 2.0 * ln2() / 2.0);
    let l5 = aux_edge_generation_loss(&mut tape, z, &h, &batch, 5.0).unwrap();
    assert_eq!(tape.scalar(l5).unwrap(), 5.0 * tape.scalar(l).unwrap());
}

fn direct_bce(scores: &[f64], labels: &[f64]) -> f64 {
    let n = scores.len() as f64;
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let p = 1.0 / (1.0 + (-s).exp());
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n
}

#[test]
fn pair_losses_match_direct_bce() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (h, mut p) = head_only(HeadKind::EdgeScorer, 3);
    let proj: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
    p.get_mut("head.t.p").unwrap().copy_from_slice(&proj);
    let zt = Tensor::matrix(6, 3, (0..18).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap();
    let pairs: Vec<(usize, usize)> = (0..10).map(|_| (rng.random_range(0..6), rng.random_range(0..6))).collect();
    let labels: Vec<f64> = (0..10).map(|_| rng.random_range(0..2) as f64).collect();
    let scores: Vec<f64> = pairs
        .iter()
        .map(|&(u, v)| {
            (0..3)
                .map(|j| (0..3).map(|i| zt.get(u, i) * proj[i * 3 + j]).sum::<f64>() * zt.get(v, j))
                .sum()
        })
        .collect();
    let want = direct_bce(&scores, &labels);
    let b = TaskBatch::pairs(&pairs, labels).unwrap();
    let mut tape = Tape::new(&p);
    let z = tape.constant(zt).unwrap();
    for f in [target_link_prediction_loss, aux_edge_generation_loss] {
        let l = f(&mut tape, z, &h, &b, 1.0).unwrap();
        assert!((tape.scalar(l).unwrap() - want).abs() <= 1e-10);
    }
}

#[test]
fn metapath_loss_cases() {
    let (h, mut p) = head_only(HeadKind::PairClassifier { hidden: 4 }, 3);
    p.set("head.t.w2", &Tensor::zeros(&[4, 1])).unwrap();
    let mut tape = Tape::new(&p);
    let z = tape.constant(Tensor::filled(&[4, 3], 0.5)).unwrap();
    let b = TaskBatch::pairs(&[(0, 1), (2, 3)], vec![1.0, 1.0]).unwrap();
    let l = aux_metapath_prediction_loss(&mut tape, z, &h, &b, 1.0).unwrap();
    assert!((tape.scalar(l).unwrap() - ln2()).abs() < 1e-15);

    // Separated logits through the output bias: ±20 with matching labels.
    p.set("head.t.b2", &Tensor::scalar(20.0)).unwrap();
    let mut tape = Tape::new(&p);
    let z = tape.constant(Tensor::filled(&[4, 3], 0.5)).unwrap();
    let l = aux_metapath_prediction_loss(&mut tape, z, &h, &b, 1.0).unwrap();
    assert!(tape.scalar(l).unwrap() < 1e-8);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (h, p) = head_only(HeadKind::PairClassifier { hidden: 4 }, 3);
    let zt = Tensor::matrix(5, 3, (0..15).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let pairs = [(0, 1), (1, 4), (3, 2), (4, 4)];
    let labels = vec![1.0, 0.0, 0.0, 1.0];
    let (w1, b1, w2, b2) = (
        p.tensor("head.t.w1").unwrap(),
        p.get("head.t.b1").unwrap(),
        p.get("head.t.w2").unwrap(),
        p.get("head.t.b2").unwrap()[0],
    );
    let scores: Vec<f64> = pairs
        .iter()
        .map(|&(u, v)| {
            let x: Vec<f64> = zt.row(u).iter().chain(zt.row(v)).copied().collect();
            (0..4)
                .map(|j| {
                    let pre = (0..6).map(|i| x[i] * w1.get(i, j)).sum::<f64>() + b1[j];
                    pre.max(0.0) * w2[j]
                })
                .sum::<f64>()
                + b2
        })
        .collect();
    let want = direct_bce(&scores, &labels);
    let b = TaskBatch::pairs(&pairs, labels).unwrap();
    let mut tape = Tape::new(&p);
    let z = tape.constant(zt).unwrap();
    let l = aux_metapath_prediction_loss(&mut tape, z, &h, &b, 1.0).unwrap();
    assert!((tape.scalar(l).unwrap() - want).abs() <= 1e-10);
}

fn masked(nodes: Vec<usize>, targets: Tensor) -> TaskBatch {
    let n = targets.rows().max(8);
    TaskBatch::Masked {
        features: Arc::new(Tensor::zeros(&[n, targets.cols()])),
        nodes: nodes.into(),
        targets: Arc::new(targets),
    }
}

#[test]
fn attribute_loss_cases() {
    let (h, mut p) = head_only(HeadKind::AttributeDecoder { out_dim: 3 }, 3);
    p.set("head.t.w", &Tensor::identity(3)).unwrap();
    let zt = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.5, -1.0, 4.0]]).unwrap();
    let mut tape = Tape::new(&p);
    let z = tape.constant(zt.clone()).unwrap();
    let l = aux_attribute_generation_loss(&mut tape, z, &h, &masked(vec![0, 1], zt.clone()), 1.0).unwrap();
    assert_eq!(tape.scalar(l).unwrap(), 0.0);

    p.set("head.t.w", &Tensor::zeros(&[3, 3])).unwrap();
    let mut tape = Tape::new(&p);
    let z = tape.constant(zt.clone()).unwrap();
    let l = aux_attribute_generation_loss(&mut tape, z, &h, &masked(vec![0, 1], Tensor::filled(&[2, 3], 1.0)), 1.0)
        .unwrap();
    assert_eq!(tape.scalar(l).unwrap(), 1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (h, p) = head_only(HeadKind::AttributeDecoder { out_dim: 2 }, 3);
    let zt = Tensor::matrix(4, 3, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let tg = Tensor::matrix(2, 2, (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let (w, b) = (p.tensor("head.t.w").unwrap(), p.get("head.t.b").unwrap());
    let mut want = 0.0;
    for (r, &u) in [3usize, 1].iter().enumerate() {
        for c in 0..2 {
            let pred = (0..3).map(|k| zt.get(u, k) * w.get(k, c)).sum::<f64>() + b[c];
            want += (pred - tg.get(r, c)).powi(2);
        }
    }
    want /= 4.0;
    let mut tape = Tape::new(&p);
    let z = tape.constant(zt).unwrap();
    let l = aux_attribute_generation_loss(&mut tape, z, &h, &masked(vec![3, 1], tg), 1.0).unwrap();
    assert!((tape.scalar(l).unwrap() - want).abs() <= 1e-12);
    let empty = masked(vec![], Tensor::zeros(&[0, 2]));
    assert!(matches!(
        aux_attribute_generation_loss(&mut tape, z, &h, &empty, 1.0),
        Err(Error::Usage(_))
    ));
}

#[test]
fn empty_batches_are_usage_errors() {
    let (h, p) = head_only(HeadKind::NodeClassifier { classes: 2 }, 2);
    let mut tape = Tape::new(&p);
    let z = tape.constant(Tensor::zeros(&[2, 2])).unwrap();
    let b = TaskBatch::nodes(vec![], vec![]).unwrap();
    assert!(matches!(
        target_node_classification_loss(&mut tape, z, &h, &b, 1.0),
        Err(Error::Usage(_))
    ));
    let b = TaskBatch::pairs(&[], vec![]).unwrap();
    let (h, _) = head_only(HeadKind::EdgeScorer, 2);
    assert!(matches!(pair_bce_loss(&mut tape, z, &h, &b, 1.0), Err(Error::Usage(_))));
}

/// A small typed graph with an encoder and one task of every kind.
struct Fixture {
    g: Graph,
    encoder: GnnEncoder,
    params: ParamVector,
    tasks: Vec<TaskSpec>,
}

fn fixture(kind: EncoderKind, seed: u64) -> Fixture {
    let g = generate_bipartite(&BipartiteConfig {
        users: 6,
        items: 5,
        communities: 2,
        p_in: 0.6,
        p_out: 0.15,
        genre_fidelity: 0.8,
        feature_dim: 5,
        noise: 0.2,
        seed,
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reg = ParamRegistry::new();
    let cfg = EncoderConfig {
        kind,
        input_dim: 5,
        hidden_dims: vec![6, 4],
        dropout: 0.0,
    };
    let encoder = GnnEncoder::register(cfg, &mut reg, &mut rng).unwrap();
    let mp = MetaPath::untyped_edges("iui", vec![1, 0, 1]).unwrap();
    let mp_pairs = sample_metapath_pairs(&g, &mp, 6, 6, seed).unwrap();
    let users: Vec<usize> = (0..6).collect();
    let items: Vec<usize> = (6..11).collect();
    let known: HashSet<_> = g.undirected_edges().into_iter().collect();
    let ui: Vec<_> = known.iter().copied().filter(|&(u, v)| u < 6 && v < 11).collect();
    let mut ui = ui;
    ui.sort_unstable();
    let specs = [
        ("target", TaskKind::TargetNodeClassification, HeadKind::NodeClassifier { classes: 2 }, BatchSource::Nodes { pool: (0..11).collect() }),
        ("edge", TaskKind::AuxEdgeGeneration, HeadKind::EdgeScorer, BatchSource::Edges { positives: g.undirected_edges(), k: 2 }),
        ("attr", TaskKind::AuxAttributeGeneration, HeadKind::AttributeDecoder { out_dim: 5 }, BatchSource::Masked { fraction: 0.3 }),
        ("mp", TaskKind::AuxMetapathPrediction, HeadKind::PairClassifier { hidden: 3 }, BatchSource::LabeledPairs { pairs: mp_pairs }),
        (
            "link",
            TaskKind::TargetLinkPrediction,
            HeadKind::EdgeScorer,
            BatchSource::TypedPairs { positives: ui, sources: users, targets: items, known: Arc::new(known), k: 1 },
        ),
    ];
    let mut tasks = Vec::new();
    for (i, (name, kind, hk, src)) in specs.into_iter().enumerate() {
        let head = TaskHead::register(hk, name, i, 4, &mut reg, &mut rng).unwrap();
        tasks.push(TaskSpec::new(i, name, kind, head, 1.0, src).unwrap());
    }
    // Nonzero biases keep masked (all-zero) rows away from the ReLU kink.
    let mut params = reg.freeze();
    for e in params.layout().clone().entries() {
        if e.name.ends_with(".b") {
            for v in params.get_mut(&e.name).unwrap() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }
    Fixture {
        g,
        encoder,
        params,
        tasks,
    }
}

fn batch_for(f: &Fixture, t: &TaskSpec, seed: u64) -> TaskBatch {
    t.source.sample(&f.g, 16, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn task_gradients_match_finite_differences_over_shared_params() {
    for kind in [EncoderKind::Gcn, EncoderKind::Gin] {
        let f = fixture(kind, 4);
        let shared_len = f.params.layout().group_len(ParamGroup::Shared);
        for t in &f.tasks {
            let batch = batch_for(&f, t, 1);
            let (loss, grad) = task_gradient(t, &f.encoder, &f.params, &f.g, &batch).unwrap();
            assert_eq!(grad.len(), shared_len);
            let shared0 = f.params.restrict_group(ParamGroup::Shared);
            let numeric = finite_diff_grad(
                |s| {
                    let mut p = f.params.clone();
                    p.overwrite_from(s)?;
                    Ok(task_gradient(t, &f.encoder, &p, &f.g, &batch)?.0)
                },
                &shared0,
                1e-6,
            )
            .unwrap();
            let err = relative_error(grad.values(), numeric.values());
            assert!(err <= 1e-5, "{kind} {}: {err}", t.name);
            assert!(loss.is_finite() && loss >= 0.0);
        }
    }
}

#[test]
fn head_only_loss_has_zero_shared_gradient() {
    let mut f = fixture(EncoderKind::Gcn, 1);
    f.params.set("head.target.w", &Tensor::zeros(&[4, 2])).unwrap();
    let batch = batch_for(&f, &f.tasks[0], 0);
    let (_, grad) = task_gradient(&f.tasks[0], &f.encoder, &f.params, &f.g, &batch).unwrap();
    assert!(grad.values().iter().all(|&v| v == 0.0));
    assert_eq!(grad.len(), f.params.layout().group_len(ParamGroup::Shared));
}

#[test]
fn identical_tasks_give_identical_gradients() {
    let f = fixture(EncoderKind::Gin, 2);
    let mut copy = f.tasks[0].clone();
    copy.task_id = 1;
    let batch = batch_for(&f, &f.tasks[0], 3);
    let res = task_losses_and_grads(&f.params, &f.encoder, &f.g, &[&f.tasks[0], &copy], &[&batch, &batch]).unwrap();
    assert_eq!(res[0].0, res[1].0);
    assert_eq!(res[0].1, res[1].1);
}

#[test]
fn batches_split_and_sample_deterministically() {
    let f = fixture(EncoderKind::Gcn, 3);
    for t in &f.tasks {
        let a = batch_for(&f, t, 9);
        assert_eq!(a, batch_for(&f, t, 9));
        let (tr, me) = a.split(0.5, 4).unwrap();
        assert_eq!(tr.len() + me.len(), a.len());
        assert_eq!((tr.len(), me.len()), a.split(0.5, 4).map(|(x, y)| (x.len(), y.len())).unwrap());
    }
}

#[test]
fn task_validation_rules() {
    let f = fixture(EncoderKind::Gcn, 0);
    assert!(validate_tasks(&f.tasks[..4]).is_ok());
    assert!(validate_tasks(&f.tasks).is_err());
    assert!(validate_tasks(&f.tasks[1..2]).is_err());
    let t = &f.tasks[1];
    assert!(TaskSpec::new(1, "x", t.kind, t.head.clone(), 0.0, t.source.clone()).is_err());
    assert!(TaskSpec::new(1, "x", TaskKind::AuxAttributeGeneration, t.head.clone(), 1.0, t.source.clone()).is_err());
}

#[test]
fn lifted_sources_map_subgraph_ids() {
    let g = crate::graph::generate_sbm(&crate::graph::SbmConfig {
        blocks: vec![15, 15],
        p_in: 0.4,
        p_out: 0.05,
        feature_dim: 3,
        noise: 0.5,
        seed: 2,
    })
    .unwrap();
    let ids: Vec<usize> = (0..30).filter(|u| u % 3 != 0).collect();
    let sub = Arc::new(g.induced_subgraph(&ids).unwrap());
    let lifted = |inner| BatchSource::Lifted {
        graph: sub.clone(),
        ids: ids.clone().into(),
        inner: Box::new(inner),
    };
    let inside: HashSet<usize> = ids.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    let edges = lifted(BatchSource::Edges {
        positives: sub.undirected_edges(),
        k: 2,
    });
    let TaskBatch::Pairs { src, dst, labels } = edges.sample(&g, 8, &mut rng).unwrap() else { panic!() };
    for i in 0..src.len() {
        assert!(inside.contains(&src[i]) && inside.contains(&dst[i]));
        if labels.data()[i] == 1.0 {
            assert!(g.neighbors(src[i]).contains(&dst[i]));
        }
    }

    let masked = lifted(BatchSource::Masked { fraction: 0.5 });
    let TaskBatch::Masked { features, nodes, targets } = masked.sample(&g, 4, &mut rng).unwrap() else { panic!() };
    assert_eq!(features.rows(), 30);
    for (i, &u) in nodes.iter().enumerate() {
        assert!(inside.contains(&u));
        assert!(features.row(u).iter().all(|&x| x == 0.0));
        assert_eq!(targets.row(i), g.features().row(u));
    }
    let hidden = (0..30).filter(|&u| features.row(u) != g.features().row(u)).count();
    assert_eq!(hidden, 10);
    assert!((0..30).step_by(3).all(|u| features.row(u) == g.features().row(u)));

    let bad = BatchSource::Lifted {
        graph: sub.clone(),
        ids: vec![0usize; 3].into(),
        inner: Box::new(BatchSource::Masked { fraction: 1.0 }),
    };
    assert!(bad.sample(&g, 4, &mut rng).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn loss_scale_is_pure_scaling(seed in 0u64..1000, which in 0usize..4, s in 0.1f64..10.0) {
        let f = fixture(EncoderKind::Gcn, seed);
        let batch = batch_for(&f, &f.tasks[which], seed);
        let mut scaled = f.tasks[which].clone();
        scaled.loss_scale = s;
        let (l1, g1) = task_gradient(&f.tasks[which], &f.encoder, &f.params, &f.g, &batch).unwrap();
        let (ls, gs) = task_gradient(&scaled, &f.encoder, &f.params, &f.g, &batch).unwrap();
        prop_assert_eq!(ls, s * l1);
        let want = g1.scale(s);
        prop_assert!(relative_error(gs.values(), want.values()) <= 1e-14);
        let again = task_gradient(&scaled, &f.encoder, &f.params, &f.g, &batch).unwrap();
        prop_assert_eq!(again.1, gs);
    }
}
