//! Deterministic stand-in for a real model, driven by a cluster sidecar.
//!
//! The sidecar maps each question text to a hidden cluster id and its correct
//! choice. Given a prompt, the mock answers the query correctly iff at least
//! one demonstration belongs to the query's cluster; otherwise it picks a
//! letter from a hash of the prompt and its seed.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::client::LanguageModel;
use super::prompt::choice_letter;
use crate::error::{Error, LlmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub cluster: u32,
    pub answer: usize,
}

/// Question text → hidden cluster and correct answer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterOracle {
    pub queries: HashMap<String, OracleEntry>,
}

impl ClusterOracle {
    pub fn insert(&mut self, query: impl Into<String>, cluster: u32, answer: usize) {
        self.queries.insert(query.into(), OracleEntry { cluster, answer });
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        // sorted keys keep the file byte-stable
        let sorted: std::collections::BTreeMap<_, _> = self.queries.iter().collect();
        let text = serde_json::to_string_pretty(&serde_json::json!({ "queries": sorted }))
            .expect("oracle serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// A question block recovered from prompt text.
#[derive(Debug, PartialEq)]
struct Block<'a> {
    question: &'a str,
    n_choices: usize,
}

fn parse_block(block: &str) -> Option<Block<'_>> {
    let body = block.strip_prefix("Question: ")?;
    let end = body.find("\nA. ").unwrap_or(body.len());
    let question = &body[..end];
    let n_choices = body[end..]
        .lines()
        .filter(|l| {
            let b = l.as_bytes();
            b.len() >= 3 && b[0].is_ascii_uppercase() && &b[1..3] == b". "
        })
        .count();
    Some(Block { question, n_choices })
}

pub struct MockLlm {
    oracle: ClusterOracle,
    seed: u64,
    calls: AtomicUsize,
}

impl MockLlm {
    pub fn new(oracle: ClusterOracle, seed: u64) -> Self {
        MockLlm {
            oracle,
            seed,
            calls: AtomicUsize::new(0),
        }
    }

    /// Number of `complete` calls served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn fallback_letter(&self, prompt: &str, n_choices: usize) -> usize {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(prompt.as_bytes());
        let digest = h.finalize();
        let v = u64::from_le_bytes(digest[..8].try_into().unwrap());
        (v % n_choices.max(1) as u64) as usize
    }

    /// Answer index the mock gives for `prompt`.
    pub fn answer_index(&self, prompt: &str) -> usize {
        let blocks: Vec<Block<'_>> = prompt.split("\n\n").filter_map(parse_block).collect();
        let Some((query, demos)) = blocks.split_last() else {
            return 0;
        };
        let Some(target) = self.oracle.queries.get(query.question) else {
            return self.fallback_letter(prompt, query.n_choices);
        };
        let supported = demos.iter().any(|d| {
            self.oracle
                .queries
                .get(d.question)
                .is_some_and(|e| e.cluster == target.cluster)
        });
        if supported && target.answer < query.n_choices {
            target.answer
        } else {
            self.fallback_letter(prompt, query.n_choices)
        }
    }
}

impl LanguageModel for MockLlm {
    fn complete(&self, prompt: &str) -> std::result::Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(choice_letter(self.answer_index(prompt)).to_string())
    }
}
