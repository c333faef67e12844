//! Structure-aware views of a task's embeddings: multi-hop adjacency
//! aggregation and an ensemble of untrained random GCNs.

use ndarray::{concatenate, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::graph::{binary_matmul, build_knn_graph, normalize_adjacency, NormalizedAdjacency, TaskGraph};
use crate::linalg::normalize_rows;

/// Weights of one random GCN, `d_in × hidden` then `hidden × hidden` per extra layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnMember {
    pub weights: Vec<Array2<f64>>,
}

impl GcnMember {
    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnEnsemble {
    pub members: Vec<GcnMember>,
    pub d_in: usize,
    pub hidden: usize,
    pub seed: u64,
}

/// Glorot-uniform matrix drawn from the ChaCha stream `(seed, member, layer)`.
fn glorot(seed: u64, member: usize, layer: usize, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((member as u64) << 32) | layer as u64);
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-bound..bound))
}

/// One GCN per entry of `layer_spec`, with that many layers. Parameters are a
/// pure function of `(seed, member index, layer index)`.
pub fn init_gnn_ensemble(seed: u64, layer_spec: &[usize], d_in: usize, hidden: usize) -> GnnEnsemble {
    assert!(!layer_spec.is_empty(), "layer_spec must be non-empty");
    let members = layer_spec
        .iter()
        .enumerate()
        .map(|(m, &n_layers)| GcnMember {
            weights: (0..n_layers)
                .map(|t| {
                    let fan_in = if t == 0 { d_in } else { hidden };
                    glorot(seed, m, t, fan_in, hidden)
                })
                .collect(),
        })
        .collect();
    GnnEnsemble {
        members,
        d_in,
        hidden,
        seed,
    }
}

/// `H_t = ReLU(Â H_{t-1} W_t)`, no bias.
pub fn gcn_forward(adj: &NormalizedAdjacency, x: &Array2<f64>, member: &GcnMember) -> Array2<f64> {
    let mut h = x.clone();
    for w in &member.weights {
        h = adj.matmul(&h.dot(w));
        h.mapv_inplace(|v| v.max(0.0));
    }
    h
}

/// Member outputs concatenated in member order, each block optionally
/// row-normalized.
pub fn gnn_aggregate(
    adj: &NormalizedAdjacency,
    x: &Array2<f64>,
    ensemble: &GnnEnsemble,
    normalize_blocks: bool,
) -> Array2<f64> {
    let blocks: Vec<Array2<f64>> = ensemble
        .members
        .par_iter()
        .map(|m| {
            let mut h = gcn_forward(adj, x, m);
            if normalize_blocks {
                normalize_rows(&mut h);
            }
            h
        })
        .collect();
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    concatenate(Axis(1), &views).expect("blocks share row count")
}

/// `[A X ‖ A² X ‖ … ‖ A^l X]` with `A` the binary adjacency, computed as
/// `Y_t = A Y_{t-1}`. Each block is optionally row-normalized.
pub fn adjacency_aggregate(
    adjacency: &[Vec<usize>],
    x: &Array2<f64>,
    hops: usize,
    normalize_blocks: bool,
) -> Array2<f64> {
    assert!(hops >= 1, "hops must be at least 1");
    let mut blocks = Vec::with_capacity(hops);
    let mut y = x.clone();
    for _ in 0..hops {
        y = binary_matmul(adjacency, &y);
        let mut block = y.clone();
        if normalize_blocks {
            normalize_rows(&mut block);
        }
        blocks.push(block);
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    concatenate(Axis(1), &views).expect("blocks share row count")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViewOptions {
    pub k: usize,
    pub hops: usize,
    pub symmetric: bool,
    pub normalize_blocks: bool,
    pub adjacency_view: bool,
    pub gnn_view: bool,
}

/// The three embedding views of one task. Disabled views are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub task: String,
    pub base: Array2<f64>,
    pub adj_view: Option<Array2<f64>>,
    pub gnn_view: Option<Array2<f64>>,
}

impl ViewSet {
    pub fn n_rows(&self) -> usize {
        self.base.nrows()
    }

    /// Plain embeddings only, for single-view similarity.
    pub fn base_only(task: impl Into<String>, base: Array2<f64>) -> Self {
        ViewSet {
            task: task.into(),
            base,
            adj_view: None,
            gnn_view: None,
        }
    }
}

/// Builds the task graph and the enabled views. The same `ensemble` must be
/// used for every task that will be compared.
pub fn build_views(
    task: &str,
    x: &Array2<f64>,
    opts: &ViewOptions,
    ensemble: &GnnEnsemble,
) -> (TaskGraph, ViewSet) {
    let graph = build_knn_graph(x, opts.k);
    let adj_view = opts.adjacency_view.then(|| {
        adjacency_aggregate(graph.adjacency(opts.symmetric), x, opts.hops, opts.normalize_blocks)
    });
    let gnn_view = opts.gnn_view.then(|| {
        let norm = normalize_adjacency(&graph);
        gnn_aggregate(&norm, x, ensemble, opts.normalize_blocks)
    });
    let views = ViewSet {
        task: task.to_owned(),
        base: x.clone(),
        adj_view,
        gnn_view,
    };
    (graph, views)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::TaskGraph;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, s};
    use proptest::prelude::*;

    fn path3() -> TaskGraph {
        TaskGraph::from_directed(1, vec![vec![1], vec![2], vec![1]])
    }

    fn dense_adjacency(g: &TaskGraph) -> Array2<f64> {
        let mut a = Array2::zeros((g.n_nodes, g.n_nodes));
        for (i, l) in g.neighbors.iter().enumerate() {
            for &j in l {
                a[(i, j)] = 1.0;
            }
        }
        a
    }

    #[test]
    fn path_hops_before_normalization() {
        let x = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let v = adjacency_aggregate(&path3().neighbors, &x, 2, false);
        assert_eq!(v.slice(s![.., 0..2]), array![[0.0, 1.0], [2.0, 1.0], [0.0, 1.0]]);
        assert_eq!(v.slice(s![.., 2..4]), array![[2.0, 1.0], [0.0, 2.0], [2.0, 1.0]]);
    }

    #[test]
    fn empty_graph_gives_zero_view() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let g = build_knn_graph(&x, 0);
        let v = adjacency_aggregate(&g.neighbors, &x, 3, true);
        assert!(v.iter().all(|&e| e == 0.0));
        assert_eq!(v.ncols(), 6);

        let lone = build_knn_graph(&array![[1.0, 1.0]], 4);
        assert_eq!(adjacency_aggregate(&lone.neighbors, &array![[1.0, 1.0]], 1, true), array![[0.0, 0.0]]);
    }

    #[test]
    fn ensemble_shapes() {
        let e = init_gnn_ensemble(7, &[1, 1, 2, 2], 10, 128);
        let shapes: Vec<Vec<(usize, usize)>> = e
            .members
            .iter()
            .map(|m| m.weights.iter().map(|w| w.dim()).collect())
            .collect();
        assert_eq!(
            shapes,
            vec![
                vec![(10, 128)],
                vec![(10, 128)],
                vec![(10, 128), (128, 128)],
                vec![(10, 128), (128, 128)],
            ]
        );
        let bound = (6.0f64 / 138.0).sqrt();
        assert!(e.members[0].weights[0].iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn ensemble_is_deterministic_with_independent_members() {
        let a = init_gnn_ensemble(3, &[1, 1], 4, 8);
        let b = init_gnn_ensemble(3, &[1, 1], 4, 8);
        assert_eq!(a, b);
        assert_ne!(a.members[0], a.members[1]);
        assert_ne!(a, init_gnn_ensemble(4, &[1, 1], 4, 8));
    }

    #[test]
    fn gcn_single_node_identity() {
        let g = build_knn_graph(&array![[-1.0, 2.0]], 3);
        let adj = normalize_adjacency(&g);
        let member = GcnMember {
            weights: vec![Array2::eye(2)],
        };
        assert_eq!(gcn_forward(&adj, &array![[-1.0, 2.0]], &member), array![[0.0, 2.0]]);
    }

    #[test]
    fn gcn_matches_dense_reference() {
        let g = TaskGraph::from_directed(1, vec![vec![1], vec![0]]);
        let adj = normalize_adjacency(&g);
        let x = array![[0.5, -1.0], [2.0, 0.25]];
        let member = GcnMember {
            weights: vec![array![[0.3, -0.2, 0.1], [0.4, 0.5, -0.6]], array![[1.0, 0.0, -1.0], [0.5, 0.5, 0.5], [-0.3, 0.2, 0.9]]],
        };
        // dense reference: Â = [[.5,.5],[.5,.5]]
        let a_hat = array![[0.5, 0.5], [0.5, 0.5]];
        let mut h = x.clone();
        for w in &member.weights {
            h = a_hat.dot(&h).dot(w).mapv(|v: f64| v.max(0.0));
        }
        let got = gcn_forward(&adj, &x, &member);
        for (a, b) in got.iter().zip(h.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let zero = Array2::zeros((2, 2));
        assert!(gcn_forward(&adj, &zero, &member).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ensemble_view_widths() {
        let x = Array2::from_shape_fn((12, 5), |(i, j)| ((i * 7 + j * 3) % 11) as f64 + 0.5);
        let g = build_knn_graph(&x, 3);
        let adj = normalize_adjacency(&g);
        let e = init_gnn_ensemble(1, &[1, 1, 2, 2], 5, 128);
        assert_eq!(gnn_aggregate(&adj, &x, &e, true).ncols(), 512);

        let single = init_gnn_ensemble(1, &[2], 5, 16);
        let mut want = gcn_forward(&adj, &x, &single.members[0]);
        normalize_rows(&mut want);
        assert_eq!(gnn_aggregate(&adj, &x, &single, true), want);
    }

    #[test]
    fn member_permutation_permutes_blocks() {
        let x = Array2::from_shape_fn((9, 4), |(i, j)| ((i * 5 + j) % 7) as f64 - 2.5);
        let adj = normalize_adjacency(&build_knn_graph(&x, 2));
        let e = init_gnn_ensemble(11, &[1, 2, 1], 4, 6);
        let mut swapped = e.clone();
        swapped.members.swap(0, 2);
        let a = gnn_aggregate(&adj, &x, &e, true);
        let b = gnn_aggregate(&adj, &x, &swapped, true);
        assert_eq!(a.slice(s![.., 0..6]), b.slice(s![.., 12..18]));
        assert_eq!(a.slice(s![.., 6..12]), b.slice(s![.., 6..12]));
    }

    fn graph_and_features() -> impl Strategy<Value = (TaskGraph, Array2<f64>)> {
        (2usize..20, 1usize..5).prop_flat_map(|(n, d)| {
            (
                prop::collection::vec(prop::collection::vec(0..n, 0..4), n),
                prop::collection::vec(-2.0f64..2.0, n * d),
            )
                .prop_map(move |(picks, vals)| {
                    let directed = picks
                        .into_iter()
                        .enumerate()
                        .map(|(i, mut p)| {
                            p.retain(|&j| j != i);
                            p.sort_unstable();
                            p.dedup();
                            p
                        })
                        .collect();
                    (
                        TaskGraph::from_directed(3, directed),
                        Array2::from_shape_vec((n, d), vals).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn hops_match_dense_powers((g, x) in graph_and_features(), hops in 1usize..4) {
            let v = adjacency_aggregate(&g.neighbors, &x, hops, false);
            let a = dense_adjacency(&g);
            let d = x.ncols();
            let mut p = x.clone();
            for t in 0..hops {
                p = a.dot(&p);
                let block = v.slice(s![.., t * d..(t + 1) * d]);
                for (got, want) in block.iter().zip(p.iter()) {
                    prop_assert!((got - want).abs() <= 1e-6 * want.abs().max(1.0));
                }
            }
        }

        #[test]
        fn views_are_permutation_equivariant((g, x) in graph_and_features(), seed in any::<u64>()) {
            let n = g.n_nodes;
            let perm: Vec<usize> = (0..n).rev().collect(); // new i holds old perm[i]
            let inv: Vec<usize> = { let mut v = vec![0; n]; for (i, &p) in perm.iter().enumerate() { v[p] = i; } v };
            let directed: Vec<Vec<usize>> = perm.iter().map(|&old| g.directed[old].iter().map(|&j| inv[j]).collect()).collect();
            let gp = TaskGraph::from_directed(g.k, directed);
            let xp = x.select(Axis(0), &perm);

            let e = init_gnn_ensemble(seed, &[1, 2], x.ncols(), 4);
            let a = adjacency_aggregate(&g.neighbors, &x, 2, true);
            let ap = adjacency_aggregate(&gp.neighbors, &xp, 2, true);
            let m = gnn_aggregate(&normalize_adjacency(&g), &x, &e, true);
            let mp = gnn_aggregate(&normalize_adjacency(&gp), &xp, &e, true);
            for (i, &pi) in perm.iter().enumerate() {
                for (u, v) in a.row(pi).iter().zip(ap.row(i).iter()) {
                    prop_assert!((u - v).abs() < 1e-9);
                }
                for (u, v) in m.row(pi).iter().zip(mp.row(i).iter()) {
                    prop_assert!((u - v).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn normalized_blocks_have_unit_or_zero_norm((g, x) in graph_and_features()) {
            let d = x.ncols();
            let v = adjacency_aggregate(&g.neighbors, &x, 2, true);
            for row in v.outer_iter() {
                for t in 0..2 {
                    let n = row.slice(s![t * d..(t + 1) * d]).iter().map(|a| a * a).sum::<f64>().sqrt();
                    prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
