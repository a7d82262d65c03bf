use std::collections::HashSet;

use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::generate::{GENRE, ITEM, ITEM_GENRE, USER, USER_ITEM};
use super::*;
use crate::autodiff::Tensor;

fn plain(n: usize, edges: &[(usize, usize)]) -> Graph {
    let edges: Vec<EdgeInput> = edges.iter().map(|&(u, v)| (u, v, None)).collect();
    Graph::from_edges(n, &edges, Tensor::zeros(&[n, 1]), vec![None; n], None).unwrap()
}

fn sbm(blocks: Vec<usize>, p_in: f64, p_out: f64, seed: u64) -> Graph {
    generate_sbm(&SbmConfig {
        blocks,
        p_in,
        p_out,
        feature_dim: 4,
        noise: 0.5,
        seed,
    })
    .unwrap()
}

fn write_files(dir: &std::path::Path, edges: &str, feats: &str, labels: &str) -> [std::path::PathBuf; 3] {
    let e = dir.join("edges.tsv");
    let f = dir.join("features.csv");
    let l = dir.join("labels.tsv");
    std::fs::write(&e, edges).unwrap();
    std::fs::write(&f, feats).unwrap();
    std::fs::write(&l, labels).unwrap();
    [e, f, l]
}

#[test]
fn two_node_file_stores_both_directions() {
    let dir = tempfile::tempdir().unwrap();
    let [e, f, l] = write_files(dir.path(), "a\tb\n", "a,1.0\nb,2.0\n", "a\t0\n");
    let g = load_graph(&e, &f, &l).unwrap();
    assert_eq!(g.num_nodes(), 2);
    assert_eq!(g.num_edges(), 2);
    assert!(g.has_edge(0, 1) && g.has_edge(1, 0));
    assert_eq!(g.labels(), &[Some(0), None]);
}

#[test]
fn duplicate_edge_lines_are_merged() {
    let dir = tempfile::tempdir().unwrap();
    let [e, f, l] = write_files(
        dir.path(),
        "# comment\na\tb\nb\ta\na\tb\nb\tc\n",
        "a,0\nb,0\nc,0\n",
        "",
    );
    let g = load_graph(&e, &f, &l).unwrap();
    assert_eq!(g.num_edges(), 4);
}

#[test]
fn dangling_id_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let [e, f, l] = write_files(dir.path(), "a\tghost\n", "a,0\n", "");
    let err = load_graph(&e, &f, &l).unwrap_err();
    assert!(matches!(err, Error::Ingestion { .. }));
    assert!(err.to_string().contains("ghost"), "{err}");
}

#[test]
fn ragged_feature_rows_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let [e, f, l] = write_files(dir.path(), "", "a,0,1\nb,0\n", "");
    let err = load_graph(&e, &f, &l).unwrap_err();
    assert!(matches!(err, Error::Ingestion { .. }));
    assert!(err.to_string().contains("ragged"), "{err}");
}

#[test]
fn fifty_node_graph_round_trips() {
    let g = sbm(vec![25, 25], 0.3, 0.05, 7);
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s);
    write_graph(&g, &p("e.tsv"), &p("f.csv"), &p("l.tsv")).unwrap();
    let h = load_graph(&p("e.tsv"), &p("f.csv"), &p("l.tsv")).unwrap();
    assert_eq!(h.offsets(), g.offsets());
    for u in 0..g.num_nodes() {
        assert_eq!(h.neighbors(u), g.neighbors(u));
    }
    assert_eq!(h.features(), g.features());
    assert_eq!(h.labels(), g.labels());

    write_id_map(&h, &p("ids.tsv")).unwrap();
    let map = std::fs::read_to_string(p("ids.tsv")).unwrap();
    assert_eq!(map.lines().count(), 50);
    assert_eq!(map.lines().nth(3).unwrap(), "3\t3");
}

#[test]
fn typed_edges_survive_round_trip() {
    let g = generate_bipartite(&BipartiteConfig {
        users: 10,
        items: 10,
        communities: 2,
        p_in: 0.5,
        p_out: 0.1,
        genre_fidelity: 0.9,
        feature_dim: 5,
        noise: 0.1,
        seed: 3,
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s);
    write_graph(&g, &p("e.tsv"), &p("f.csv"), &p("l.tsv")).unwrap();
    let h = load_graph(&p("e.tsv"), &p("f.csv"), &p("l.tsv")).unwrap();
    for (u, v) in g.undirected_edges() {
        assert_eq!(h.edge_type(u, v), g.edge_type(u, v));
    }
}

#[test]
fn sbm_with_certain_blocks_gives_cliques() {
    let g = sbm(vec![3, 3], 1.0, 0.0, 1);
    assert_eq!(g.num_edges(), 12);
    for u in 0..6 {
        for v in 0..6 {
            if u != v {
                assert_eq!(g.has_edge(u, v), (u < 3) == (v < 3));
            }
        }
    }
}

#[test]
fn sbm_is_deterministic_per_seed() {
    let a = sbm(vec![20, 30], 0.3, 0.05, 42);
    let b = sbm(vec![20, 30], 0.3, 0.05, 42);
    let c = sbm(vec![20, 30], 0.3, 0.05, 43);
    assert_eq!(a.undirected_edges(), b.undirected_edges());
    assert_eq!(a.features(), b.features());
    assert_ne!(a.undirected_edges(), c.undirected_edges());
}

#[test]
fn sbm_edge_counts_match_binomial_expectation() {
    let g = sbm(vec![50, 50], 0.2, 0.02, 11);
    let (mut inside, mut cross) = (0.0, 0.0);
    for (u, v) in g.undirected_edges() {
        if (u < 50) == (v < 50) {
            inside += 1.0;
        } else {
            cross += 1.0;
        }
    }
    let within = |count: f64, trials: f64, p: f64| {
        let mean = trials * p;
        let sd = (trials * p * (1.0 - p)).sqrt();
        (count - mean).abs() <= 3.0 * sd
    };
    assert!(within(cross, 2500.0, 0.02), "cross={cross}");
    assert!(within(inside, 2.0 * 1225.0, 0.2), "inside={inside}");
    let expected_frac = 50.0 / (50.0 + 490.0);
    let frac = cross / (cross + inside);
    assert!((frac - expected_frac).abs() < 0.05, "fraction {frac}");
}

#[test]
fn sbm_rejects_bad_configs() {
    let base = SbmConfig {
        blocks: vec![3, 0],
        p_in: 0.5,
        p_out: 0.1,
        feature_dim: 2,
        noise: 0.0,
        seed: 0,
    };
    assert!(matches!(generate_sbm(&base), Err(Error::Config(_))));
    let swapped = SbmConfig {
        blocks: vec![3, 3],
        p_in: 0.1,
        p_out: 0.5,
        ..base
    };
    assert!(matches!(generate_sbm(&swapped), Err(Error::Config(_))));
}

#[test]
fn normalized_adjacency_small_cases() {
    assert_eq!(normalized_adjacency(&plain(1, &[])).data(), &[1.0]);
    let a = normalized_adjacency(&plain(2, &[(0, 1)]));
    assert!(a.data().iter().all(|&x| (x - 0.5).abs() < 1e-15));
}

/// `D̂^{-1/2}(A+I)D̂^{-1/2}` evaluated as two dense matrix products.
fn dense_oracle(n: usize, edges: &[(usize, usize)]) -> Vec<f64> {
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        a[i * n + i] = 1.0;
    }
    for &(u, v) in edges {
        a[u * n + v] = 1.0;
        a[v * n + u] = 1.0;
    }
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        let deg: f64 = a[i * n..(i + 1) * n].iter().sum();
        d[i * n + i] = deg.powf(-0.5);
    }
    let mul = |x: &[f64], y: &[f64]| {
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = (0..n).map(|k| x[i * n + k] * y[k * n + j]).sum();
            }
        }
        out
    };
    mul(&mul(&d, &a), &d)
}

#[test]
fn normalized_adjacency_matches_dense_formula_on_path() {
    let edges = [(0, 1), (1, 2)];
    let got = normalized_adjacency(&plain(3, &edges));
    let want = dense_oracle(3, &edges);
    for (g, w) in got.data().iter().zip(&want) {
        assert!((g - w).abs() < 1e-15, "{g} vs {w}");
    }
    assert!((got.get(0, 1) - 1.0 / 6f64.sqrt()).abs() < 1e-15);
}

#[test]
fn normalized_adjacency_is_cached() {
    let g = plain(3, &[(0, 1)]);
    assert!(std::sync::Arc::ptr_eq(&g.gcn_propagator(), &g.gcn_propagator()));
}

#[test]
fn negative_sampling_finds_the_only_non_edge() {
    let mut edges = Vec::new();
    for u in 0..5 {
        for v in u + 1..5 {
            if (u, v) != (1, 3) {
                edges.push((u, v));
            }
        }
    }
    let g = plain(5, &edges);
    let negs = sample_negative_edges(&g, &[(0, 1), (2, 4)], 1, 9).unwrap();
    assert_eq!(negs, vec![(1, 3), (1, 3)]);
}

#[test]
fn negative_sampling_errors_on_complete_graph() {
    let g = plain(3, &[(0, 1), (0, 2), (1, 2)]);
    let err = sample_negative_edges(&g, &[(0, 1)], 2, 0).unwrap_err();
    assert!(matches!(err, Error::Sampling(_)));
    assert!(matches!(sample_negative_edges(&g, &[(0, 1)], 0, 0), Err(Error::Config(_))));
}

#[test]
fn negative_sampling_is_uniform_over_non_edges() {
    let g = sbm(vec![50, 50], 0.2, 0.02, 5);
    let mut non_edges = Vec::new();
    for u in 0..100 {
        for v in u + 1..100 {
            if !g.has_edge(u, v) {
                non_edges.push((u, v));
            }
        }
    }
    let draws = 10_000;
    let negs = sample_negative_edges(&g, &vec![(0, 0); draws], 1, 77).unwrap();
    // Pool non-edges into equal-probability bins so each expected count is large.
    let bins = 40;
    let bin_of = |pair: &(usize, usize)| {
        let idx = non_edges.binary_search(pair).expect("sampled an edge");
        idx * bins / non_edges.len()
    };
    let mut counts = vec![0.0; bins];
    for p in &negs {
        counts[bin_of(p)] += 1.0;
    }
    let mut stat = 0.0;
    for (b, &c) in counts.iter().enumerate() {
        let size = (0..non_edges.len()).filter(|i| i * bins / non_edges.len() == b).count();
        let expected = draws as f64 * size as f64 / non_edges.len() as f64;
        stat += (c - expected) * (c - expected) / expected;
    }
    let critical = ChiSquared::new((bins - 1) as f64).unwrap().inverse_cdf(0.99);
    assert!(stat < critical, "chi2 {stat} >= {critical}");
}

#[test]
fn mask_counts_and_untouched_rows() {
    let g = sbm(vec![50, 50], 0.1, 0.01, 2);
    let all = mask_attributes(&g, 1.0, 0).unwrap();
    assert_eq!(all.masked, (0..100).collect::<Vec<_>>());
    assert!(all.features.data().iter().all(|&x| x == 0.0));
    assert_eq!(&all.targets, g.features());

    let m = mask_attributes(&g, 0.3, 4).unwrap();
    assert_eq!(m.masked.len(), 30);
    assert_eq!(m, mask_attributes(&g, 0.3, 4).unwrap());
    let masked: HashSet<usize> = m.masked.iter().copied().collect();
    for u in 0..100 {
        if masked.contains(&u) {
            assert!(m.features.row(u).iter().all(|&x| x == 0.0));
        } else {
            assert_eq!(m.features.row(u), g.features().row(u));
        }
    }
    assert!(matches!(mask_attributes(&g, 0.001, 0), Err(Error::Config(_))));
    assert!(matches!(mask_attributes(&g, 0.0, 0), Err(Error::Config(_))));
}

fn user_item_graph() -> Graph {
    // users 0..3, items 3..6, genre 6
    let edges = [
        (0, 3, Some(USER_ITEM)),
        (0, 4, Some(USER_ITEM)),
        (1, 4, Some(USER_ITEM)),
        (2, 5, Some(USER_ITEM)),
        (3, 6, Some(ITEM_GENRE)),
        (5, 6, Some(ITEM_GENRE)),
    ];
    let types = vec![USER, USER, USER, ITEM, ITEM, ITEM, GENRE];
    Graph::from_edges(7, &edges, Tensor::zeros(&[7, 1]), vec![None; 7], Some(types)).unwrap()
}

#[test]
fn single_edge_meta_path_has_one_positive() {
    let g = Graph::from_edges(
        2,
        &[(0, 1, Some(USER_ITEM))],
        Tensor::zeros(&[2, 1]),
        vec![None; 2],
        Some(vec![USER, ITEM]),
    )
    .unwrap();
    let mp = MetaPath::new("ui", vec![USER, ITEM], vec![Some(USER_ITEM)]).unwrap();
    let pairs = sample_metapath_pairs(&g, &mp, 5, 0, 0).unwrap();
    assert_eq!(pairs, vec![((0, 1), 1.0)]);
}

/// Whether some walk from `a` to `b` realizes `mp`, by exhaustive enumeration.
fn walk_exists(g: &Graph, mp: &MetaPath, a: usize, b: usize) -> bool {
    fn go(g: &Graph, mp: &MetaPath, hop: usize, u: usize, b: usize) -> bool {
        if hop == mp.hops() {
            return u == b;
        }
        let types = g.neighbor_edge_types(u);
        g.neighbors(u).iter().enumerate().any(|(k, &v)| {
            g.node_type(v) == Some(mp.node_types[hop + 1])
                && mp.edge_types[hop].is_none_or(|t| types.map(|ts| ts[k]) == Some(t))
                && go(g, mp, hop + 1, v, b)
        })
    }
    g.node_type(a) == Some(mp.node_types[0]) && go(g, mp, 0, a, b)
}

#[test]
fn meta_path_positives_are_real_walks() {
    let g = generate_bipartite(&BipartiteConfig {
        users: 60,
        items: 60,
        communities: 3,
        p_in: 0.15,
        p_out: 0.02,
        genre_fidelity: 0.8,
        feature_dim: 6,
        noise: 0.1,
        seed: 8,
    })
    .unwrap();
    assert!(g.num_nodes() <= 200);
    let paths = [
        MetaPath::new("uiui", vec![USER, ITEM, USER, ITEM], vec![Some(USER_ITEM); 3]).unwrap(),
        MetaPath::new(
            "uigi",
            vec![USER, ITEM, GENRE, ITEM],
            vec![Some(USER_ITEM), Some(ITEM_GENRE), Some(ITEM_GENRE)],
        )
        .unwrap(),
        MetaPath::untyped_edges("iui", vec![ITEM, USER, ITEM]).unwrap(),
    ];
    for mp in &paths {
        let pairs = sample_metapath_pairs(&g, mp, 80, 80, 1).unwrap();
        assert_eq!(pairs, sample_metapath_pairs(&g, mp, 80, 80, 1).unwrap());
        let pos: Vec<_> = pairs.iter().filter(|p| p.1 == 1.0).collect();
        assert!(!pos.is_empty());
        for &&((a, b), _) in &pos {
            assert!(walk_exists(&g, mp, a, b), "{}: ({a}, {b})", mp.name);
        }
        let pos_set: HashSet<_> = pos.iter().map(|p| p.0).collect();
        for &((a, b), y) in &pairs {
            if y == 0.0 {
                assert!(!pos_set.contains(&(a, b)));
                assert_eq!(g.node_type(a), Some(mp.node_types[0]));
                assert_eq!(g.node_type(b), mp.node_types.last().copied());
            }
        }
    }
}

#[test]
fn infeasible_meta_path_names_the_hop() {
    let g = user_item_graph();
    let mp = MetaPath::new("ugi", vec![USER, GENRE, ITEM], vec![None, None]).unwrap();
    let err = sample_metapath_pairs(&g, &mp, 3, 3, 0).unwrap_err();
    assert!(matches!(err, Error::Sampling(_)));
    assert!(err.to_string().contains("hop 0"), "{err}");
    let untyped = plain(2, &[(0, 1)]);
    let mp = MetaPath::untyped_edges("ui", vec![USER, ITEM]).unwrap();
    assert!(sample_metapath_pairs(&untyped, &mp, 1, 1, 0).is_err());
}

#[test]
fn split_batch_sizes_and_determinism() {
    let batch: Vec<usize> = (0..10).collect();
    let (t, m) = split_batch(&batch, 0.5, 3).unwrap();
    assert_eq!((t.len(), m.len()), (5, 5));
    let mut all: Vec<_> = t.iter().chain(&m).copied().collect();
    all.sort_unstable();
    assert_eq!(all, batch);
    assert_eq!((t, m), split_batch(&batch, 0.5, 3).unwrap());

    let (t, m) = split_batch(&[1, 2, 3], 0.5, 0).unwrap();
    assert_eq!((t.len(), m.len()), (2, 1));
    assert!(matches!(split_batch(&[1], 0.5, 0), Err(Error::Usage(_))));
    assert!(matches!(split_batch(&[1, 2], 1.0, 0), Err(Error::Config(_))));
}

#[test]
fn random_split_is_disjoint_and_complete() {
    let items: Vec<usize> = (0..30).collect();
    let s = random_split(&items, (1.0 / 3.0, 1.0 / 3.0), 5, PartitionTag::Finetune).unwrap();
    assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (10, 10, 10));
    let (a, b) = partition_nodes(100, 0.7, 1).unwrap();
    assert_eq!((a.len(), b.len()), (70, 30));
    assert!(DataSplit::new(vec![1], vec![1], vec![], PartitionTag::Whole).is_err());
}

#[test]
fn induced_subgraph_keeps_internal_edges() {
    let g = plain(4, &[(0, 1), (1, 2), (2, 3)]);
    let h = g.induced_subgraph(&[3, 2, 0]).unwrap();
    assert_eq!(h.num_nodes(), 3);
    assert_eq!(h.undirected_edges(), vec![(0, 1)]);
    let w = g.without_edges(&[(2, 1)]).unwrap();
    assert_eq!(w.undirected_edges(), vec![(0, 1), (2, 3)]);
}

fn arb_graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (1usize..12).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n), 0..30)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn csr_is_symmetric_and_well_formed((n, edges) in arb_graph()) {
        let g = plain(n, &edges);
        prop_assert_eq!(*g.offsets().last().unwrap(), g.num_edges());
        prop_assert!(g.offsets().windows(2).all(|w| w[0] <= w[1]));
        for u in 0..n {
            for &v in g.neighbors(u) {
                prop_assert!(v < n && v != u);
                prop_assert!(g.has_edge(v, u));
            }
        }
    }

    #[test]
    fn normalized_adjacency_is_symmetric((n, edges) in arb_graph()) {
        let g = plain(n, &edges);
        let a = normalized_adjacency(&g);
        let want = dense_oracle(n, &g.undirected_edges());
        let d_half: Vec<f64> = (0..n).map(|u| ((g.degree(u) + 1) as f64).sqrt()).collect();
        for i in 0..n {
            let mut row_sum = 0.0;
            let mut eig = 0.0;
            for j in 0..n {
                prop_assert_eq!(a.get(i, j), a.get(j, i));
                prop_assert!((a.get(i, j) - want[i * n + j]).abs() < 1e-14);
                row_sum += a.get(i, j);
                eig += a.get(i, j) * d_half[j];
            }
            prop_assert!(row_sum > 0.0);
            // D̂^{1/2}·1 is an eigenvector with eigenvalue 1.
            prop_assert!((eig - d_half[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn regular_graph_rows_sum_to_one(n in 3usize..20) {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        let a = normalized_adjacency(&plain(n, &edges));
        for i in 0..n {
            let s: f64 = a.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn samplers_are_pure_in_seed(seed in any::<u64>()) {
        let g = sbm(vec![10, 10], 0.4, 0.05, 1);
        let pos = g.undirected_edges();
        prop_assert_eq!(
            sample_negative_edges(&g, &pos, 2, seed).unwrap(),
            sample_negative_edges(&g, &pos, 2, seed).unwrap()
        );
        prop_assert_eq!(mask_attributes(&g, 0.4, seed).unwrap(), mask_attributes(&g, 0.4, seed).unwrap());
        let batch: Vec<usize> = (0..17).collect();
        prop_assert_eq!(split_batch(&batch, 0.5, seed).unwrap(), split_batch(&batch, 0.5, seed).unwrap());
    }
}
