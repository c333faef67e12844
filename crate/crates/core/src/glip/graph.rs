use std::collections::HashMap;

use ndarray::Array2;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::build_knn_graph_filtered;
use crate::labels::PseudoLabeledSet;

/// Query-choice node graph. Node `offsets[e] + c` holds choice `c` of
/// example `e`; examples are the seed set followed by the unlabeled set.
#[derive(Debug, Clone, PartialEq)]
pub struct GlipGraph {
    pub features: Array2<f64>,
    pub example_ids: Vec<String>,
    /// First node of each example, plus a final sentinel equal to `n_nodes`.
    pub offsets: Vec<usize>,
    /// `Some(1)` for the chosen node of a labeled example, `Some(0)` for its
    /// other choices, `None` when unlabeled.
    pub labels: Vec<Option<u8>>,
    /// Symmetric positive adjacency, sorted, no self-loops, never within an example.
    pub pos_adj: Vec<Vec<usize>>,
    /// Within-example pairs `(i, j)` with `i < j`.
    pub neg_edges: Vec<(usize, usize)>,
    node_example: Vec<usize>,
}

impl GlipGraph {
    /// Assembles a graph from explicit parts. `choice_counts[e]` is the number
    /// of nodes of example `e`; `labels` maps example index to its chosen
    /// choice. Duplicate or reversed positive edges collapse to one edge;
    /// edges inside one example are rejected.
    pub fn from_parts(
        features: Array2<f64>,
        example_ids: Vec<String>,
        choice_counts: &[usize],
        labels: &HashMap<usize, usize>,
        pos_edges: &[(usize, usize)],
    ) -> Result<Self> {
        let mut offsets = Vec::with_capacity(choice_counts.len() + 1);
        let mut node_example = Vec::new();
        let mut acc = 0;
        for (e, &n) in choice_counts.iter().enumerate() {
            offsets.push(acc);
            node_example.extend(std::iter::repeat_n(e, n));
            acc += n;
        }
        offsets.push(acc);
        if features.nrows() != acc || example_ids.len() != choice_counts.len() {
            return Err(Error::Validation(format!(
                "propagation graph expects {acc} feature rows and {} ids, got {} and {}",
                choice_counts.len(),
                features.nrows(),
                example_ids.len()
            )));
        }

        let mut node_labels = vec![None; acc];
        for (&e, &choice) in labels {
            if e >= choice_counts.len() || choice >= choice_counts[e] {
                return Err(Error::Validation(format!(
                    "label {choice} for example index {e} is out of range"
                )));
            }
            for c in 0..choice_counts[e] {
                node_labels[offsets[e] + c] = Some(u8::from(c == choice));
            }
        }

        let mut pos_adj = vec![Vec::new(); acc];
        for &(i, j) in pos_edges {
            if i >= acc || j >= acc {
                return Err(Error::Validation(format!("edge ({i}, {j}) out of range")));
            }
            if node_example[i] == node_example[j] {
                return Err(Error::Validation(format!(
                    "positive edge ({i}, {j}) joins choices of the same example"
                )));
            }
            pos_adj[i].push(j);
            pos_adj[j].push(i);
        }
        for l in &mut pos_adj {
            l.sort_unstable();
            l.dedup();
        }

        let mut neg_edges = Vec::new();
        for e in 0..choice_counts.len() {
            for i in offsets[e]..offsets[e + 1] {
                for j in i + 1..offsets[e + 1] {
                    neg_edges.push((i, j));
                }
            }
        }

        Ok(GlipGraph {
            features,
            example_ids,
            offsets,
            labels: node_labels,
            pos_adj,
            neg_edges,
            node_example,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_examples(&self) -> usize {
        self.example_ids.len()
    }

    pub fn example_of(&self, node: usize) -> usize {
        self.node_example[node]
    }

    pub fn nodes_of(&self, example: usize) -> std::ops::Range<usize> {
        self.offsets[example]..self.offsets[example + 1]
    }

    pub fn n_pos_edges(&self) -> usize {
        self.pos_adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn n_labeled_nodes(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    /// Attention neighborhood of each node: positive neighbors plus itself,
    /// in ascending order.
    pub fn attention_neighborhoods(&self) -> Vec<Vec<usize>> {
        self.pos_adj
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let mut n = l.clone();
                let at = n.partition_point(|&j| j < i);
                n.insert(at, i);
                n
            })
            .collect()
    }
}

/// Builds the propagation graph over `seed` followed by `unlabeled`.
/// `pair_features` holds one row per (example, choice) in that order.
/// Seed examples without an entry in `seed_labels` stay unlabeled.
pub fn build_glip_graph(
    seed_labels: &PseudoLabeledSet,
    seed: &Dataset,
    unlabeled: &Dataset,
    pair_features: &Array2<f64>,
    k_pos: usize,
) -> Result<GlipGraph> {
    let examples: Vec<_> = seed.examples.iter().chain(&unlabeled.examples).collect();
    let index: HashMap<&str, usize> = examples
        .iter()
        .enumerate()
        .map(|(i, e)| (e.id.as_str(), i))
        .collect();
    let seed_ids: HashMap<&str, usize> = seed
        .examples
        .iter()
        .enumerate()
        .map(|(i, e)| (e.id.as_str(), i))
        .collect();
    let mut labels = HashMap::new();
    for (id, entry) in seed_labels.iter() {
        let e = *seed_ids.get(id).ok_or_else(|| {
            if index.contains_key(id) {
                Error::Validation(format!("label for {id:?} refers to an unlabeled-set example"))
            } else {
                Error::Validation(format!("label for unknown example id {id:?}"))
            }
        })?;
        labels.insert(e, entry.choice);
    }

    let counts: Vec<usize> = examples.iter().map(|e| e.n_choices()).collect();
    let total: usize = counts.iter().sum();
    if pair_features.nrows() != total {
        return Err(Error::Validation(format!(
            "pair embeddings have {} rows, expected {total}",
            pair_features.nrows()
        )));
    }
    let mut node_example = Vec::with_capacity(total);
    for (e, &n) in counts.iter().enumerate() {
        node_example.extend(std::iter::repeat_n(e, n));
    }
    let knn = build_knn_graph_filtered(pair_features, k_pos, |i, j| node_example[i] != node_example[j]);
    let pos_edges: Vec<(usize, usize)> = knn
        .directed
        .iter()
        .enumerate()
        .flat_map(|(i, l)| l.iter().map(move |&j| (i, j)))
        .collect();
    GlipGraph::from_parts(
        pair_features.clone(),
        examples.iter().map(|e| e.id.clone()).collect(),
        &counts,
        &labels,
        &pos_edges,
    )
}
