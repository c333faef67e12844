//! Cross-task similarity averaged over embedding views, and top-K source
//! demonstration selection.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{s, Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::ViewSet;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::top_k;
use crate::linalg::{cosine_or_zero, normalize_rows};

fn paired_views<'a>(
    target: &'a ViewSet,
    source: &'a ViewSet,
) -> Result<Vec<(&'a Array2<f64>, &'a Array2<f64>)>> {
    let mut pairs = vec![(&target.base, &source.base)];
    for (name, t, s) in [
        ("adjacency", &target.adj_view, &source.adj_view),
        ("gnn", &target.gnn_view, &source.gnn_view),
    ] {
        match (t, s) {
            (Some(t), Some(s)) => pairs.push((t, s)),
            (None, None) => {}
            _ => {
                return Err(Error::Config(format!(
                    "{name} view enabled for only one of tasks {:?} and {:?}",
                    target.task, source.task
                )))
            }
        }
    }
    for (t, s) in &pairs {
        if t.ncols() != s.ncols() {
            return Err(Error::Config(format!(
                "view width mismatch across tasks: {} vs {}",
                t.ncols(),
                s.ncols()
            )));
        }
    }
    Ok(pairs)
}

/// Mean of the per-view cosines between target row `ti` and source row `sj`.
/// An all-zero row makes its view contribute 0.
pub fn cross_task_similarity(target: &ViewSet, source: &ViewSet, ti: usize, sj: usize) -> Result<f64> {
    let pairs = paired_views(target, source)?;
    let sum: f64 = pairs
        .iter()
        .map(|(t, s)| cosine_or_zero(t.row(ti), s.row(sj)))
        .sum();
    Ok((sum / pairs.len() as f64).clamp(-1.0, 1.0))
}

/// Averaged similarity for every (target row, source row) pair.
pub fn similarity_matrix(target: &ViewSet, source: &ViewSet) -> Result<Array2<f64>> {
    let pairs = paired_views(target, source)?;
    let normalized: Vec<(Array2<f64>, Array2<f64>)> = pairs
        .iter()
        .map(|(t, s)| {
            let (mut t, mut s) = ((*t).clone(), (*s).clone());
            normalize_rows(&mut t);
            normalize_rows(&mut s);
            (t, s)
        })
        .collect();
    let n_views = normalized.len() as f64;
    let nt = target.n_rows();
    // fixed row chunks keep the result independent of the thread count
    const CHUNK: usize = 64;
    let starts: Vec<usize> = (0..nt).step_by(CHUNK).collect();
    let blocks: Vec<Array2<f64>> = starts
        .into_par_iter()
        .map(|r0| {
            let r1 = (r0 + CHUNK).min(nt);
            let mut acc: Option<Array2<f64>> = None;
            for (tv, sv) in &normalized {
                let mut block = tv.slice(s![r0..r1, ..]).dot(&sv.t());
                block.mapv_inplace(|v| v.clamp(-1.0, 1.0));
                match &mut acc {
                    Some(a) => *a += &block,
                    None => acc = Some(block),
                }
            }
            let mut a = acc.expect("at least the base view");
            a.mapv_inplace(|v| (v / n_views).clamp(-1.0, 1.0));
            a
        })
        .collect();
    if blocks.is_empty() {
        return Ok(Array2::zeros((0, source.n_rows())));
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    Ok(ndarray::concatenate(ndarray::Axis(0), &views).expect("blocks share width"))
}

/// Indices of the `k` highest scores, best first, ties to the lower index.
pub fn rank_top_k(scores: ArrayView1<'_, f64>, k: usize) -> Vec<(usize, f64)> {
    let scored: Vec<(f64, usize)> = scores.iter().copied().zip(0..).collect();
    top_k(scored, k).into_iter().map(|(s, j)| (j, s)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedSource {
    pub source_id: String,
    #[serde(skip)]
    pub source_index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub target_id: String,
    /// Highest score first.
    pub selected: Vec<SelectedSource>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SelectionResult {
    pub selections: Vec<Selection>,
}

impl SelectionResult {
    pub fn get(&self, target_id: &str) -> Option<&Selection> {
        self.selections.iter().find(|s| s.target_id == target_id)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        for s in &self.selections {
            writeln!(w, "{}", serde_json::to_string(s).expect("selection serializes"))
                .map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a dump, resolving source ids against `source`.
    pub fn read_jsonl(path: impl AsRef<Path>, source: &Dataset) -> Result<Self> {
        let path = path.as_ref();
        let index: HashMap<&str, usize> = source
            .examples
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.as_str(), i))
            .collect();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut selections = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message,
            };
            let mut sel: Selection = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            for s in &mut sel.selected {
                s.source_index = *index
                    .get(s.source_id.as_str())
                    .ok_or_else(|| parse_err(format!("unknown source id {:?}", s.source_id)))?;
            }
            selections.push(sel);
        }
        Ok(SelectionResult { selections })
    }
}

/// For each target example, the `k` source examples with the highest score
/// (row of `scores`), best first. `k` beyond the source size ranks all of it.
pub fn select_source_examples(
    target: &Dataset,
    source: &Dataset,
    scores: &Array2<f64>,
    k: usize,
) -> Result<SelectionResult> {
    if source.is_empty() {
        return Err(Error::Validation("cannot select from an empty source set".into()));
    }
    if k == 0 {
        return Err(Error::Config("number of demonstrations must be at least 1".into()));
    }
    if scores.dim() != (target.len(), source.len()) {
        return Err(Error::Validation(format!(
            "score matrix is {:?}, expected ({}, {})",
            scores.dim(),
            target.len(),
            source.len()
        )));
    }
    let selections = target
        .examples
        .iter()
        .enumerate()
        .map(|(i, ex)| Selection {
            target_id: ex.id.clone(),
            selected: rank_top_k(scores.row(i), k)
                .into_iter()
                .map(|(j, score)| SelectedSource {
                    source_id: source.examples[j].id.clone(),
                    source_index: j,
                    score,
                })
                .collect(),
        })
        .collect();
    Ok(SelectionResult { selections })
}
