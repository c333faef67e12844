//! Binary kNN task graphs over embedding rows and their GCN normalization.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, row_norms};

/// kNN graph. `directed[i]` holds node i's own top-k picks in rank order;
/// `neighbors[i]` is the OR-symmetrized neighbor list, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskGraph {
    pub n_nodes: usize,
    pub k: usize,
    pub directed: Vec<Vec<usize>>,
    pub neighbors: Vec<Vec<usize>>,
}

impl TaskGraph {
    /// Builds a graph from directed picks, symmetrizing as `A ∨ Aᵀ`.
    pub fn from_directed(k: usize, directed: Vec<Vec<usize>>) -> Self {
        let n = directed.len();
        let mut neighbors = vec![Vec::new(); n];
        for (i, picks) in directed.iter().enumerate() {
            for &j in picks {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        TaskGraph {
            n_nodes: n,
            k,
            directed,
            neighbors,
        }
    }

    /// Neighbor lists of either the symmetrized or the raw directed adjacency.
    pub fn adjacency(&self, symmetric: bool) -> &[Vec<usize>] {
        if symmetric {
            &self.neighbors
        } else {
            &self.directed
        }
    }

    pub fn n_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    /// JSONL `{node, neighbors}` dump of the symmetrized adjacency.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            node: usize,
            neighbors: &'a [usize],
        }
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        for (node, neighbors) in self.neighbors.iter().enumerate() {
            let line = serde_json::to_string(&Row { node, neighbors }).expect("row serializes");
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Ranks by similarity descending, then by index ascending.
fn rank_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Indices of the `k` best candidates under [`rank_order`], best first.
pub(crate) fn top_k(mut scored: Vec<(f64, usize)>, k: usize) -> Vec<(f64, usize)> {
    if k == 0 {
        return Vec::new();
    }
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank_order);
    scored
}

/// Cosine kNN where `allow(i, j)` filters the candidates of node i.
/// Rows must have nonzero norm.
pub fn build_knn_graph_filtered<F>(x: &Array2<f64>, k: usize, allow: F) -> TaskGraph
where
    F: Fn(usize, usize) -> bool + Sync,
{
    let n = x.nrows();
    let norms = row_norms(x);
    let directed: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            if k == 0 {
                return Vec::new();
            }
            let xi: ArrayView1<'_, f64> = x.row(i);
            let scored: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i && allow(i, j))
                .map(|j| (dot(xi, x.row(j)) / (norms[i] * norms[j]), j))
                .collect();
            top_k(scored, k).into_iter().map(|(_, j)| j).collect()
        })
        .collect();
    TaskGraph::from_directed(k, directed)
}

/// Connects each row to its `k` most cosine-similar other rows (ties to the
/// lower index), then OR-symmetrizes.
pub fn build_knn_graph(x: &Array2<f64>, k: usize) -> TaskGraph {
    build_knn_graph_filtered(x, k, |_, _| true)
}

/// `D^{-1/2} (A + I) D^{-1/2}` over the symmetrized adjacency, stored as
/// sorted sparse rows that include the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    pub n_nodes: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

pub fn normalize_adjacency(g: &TaskGraph) -> NormalizedAdjacency {
    let degree: Vec<f64> = g.neighbors.iter().map(|l| l.len() as f64 + 1.0).collect();
    let rows = g
        .neighbors
        .iter()
        .enumerate()
        .map(|(i, list)| {
            let mut row: Vec<(usize, f64)> = list
                .iter()
                .chain(std::iter::once(&i))
                .map(|&j| (j, 1.0 / (degree[i] * degree[j]).sqrt()))
                .collect();
            row.sort_unstable_by_key(|&(j, _)| j);
            row
        })
        .collect();
    NormalizedAdjacency {
        n_nodes: g.n_nodes,
        rows,
    }
}

impl NormalizedAdjacency {
    pub fn matmul(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_nodes, x.ncols()));
        for (i, row) in self.rows.iter().enumerate() {
            let mut dst = out.row_mut(i);
            for &(j, w) in row {
                dst.scaled_add(w, &x.row(j));
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut d = Array2::zeros((self.n_nodes, self.n_nodes));
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                d[(i, j)] = w;
            }
        }
        d
    }
}

/// `A · X` for a binary adjacency given as neighbor lists.
pub fn binary_matmul(adjacency: &[Vec<usize>], x: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((adjacency.len(), x.ncols()));
    for (i, list) in adjacency.iter().enumerate() {
        let mut dst = out.row_mut(i);
        for &j in list {
            dst += &x.row(j);
        }
    }
    out
}
