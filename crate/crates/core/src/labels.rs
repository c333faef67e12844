use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Gold,
    LlmSeed,
    /// Labeled by in-task ICL over a gold seed pool.
    LlmInTask,
    Glip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub choice: usize,
    pub provenance: Provenance,
    pub score: f64,
}

/// Predicted choice per example id. Iteration is ordered by id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabeledSet {
    entries: BTreeMap<String, LabelEntry>,
}

#[derive(Serialize, Deserialize)]
struct LabelRecord {
    id: String,
    choice: usize,
    provenance: Provenance,
    score: f64,
}

impl PseudoLabeledSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Gold labels of every labeled example in `dataset`.
    pub fn from_gold(dataset: &Dataset) -> Self {
        let mut set = Self::new();
        for ex in &dataset.examples {
            if let Some(label) = ex.gold_label {
                set.insert(&ex.id, label, Provenance::Gold, 1.0);
            }
        }
        set
    }

    pub fn insert(&mut self, id: impl Into<String>, choice: usize, provenance: Provenance, score: f64) {
        self.entries.insert(
            id.into(),
            LabelEntry {
                choice,
                provenance,
                score,
            },
        );
    }

    pub fn get(&self, id: &str) -> Option<&LabelEntry> {
        self.entries.get(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &LabelEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Union; entries of `other` win on id collisions.
    pub fn merged(&self, other: &PseudoLabeledSet) -> PseudoLabeledSet {
        let mut out = self.clone();
        out.entries
            .extend(other.entries.iter().map(|(k, v)| (k.clone(), *v)));
        out
    }

    /// Checks that every id exists in one of `datasets` and its choice is in range.
    pub fn validate_against(&self, datasets: &[&Dataset]) -> Result<()> {
        for (id, entry) in &self.entries {
            let ex = datasets
                .iter()
                .flat_map(|d| d.examples.iter())
                .find(|e| &e.id == id)
                .ok_or_else(|| Error::Validation(format!("label for unknown example id {id:?}")))?;
            if entry.choice >= ex.n_choices() {
                return Err(Error::Validation(format!(
                    "label {} for {id:?} out of range for {} choices",
                    entry.choice,
                    ex.n_choices()
                )));
            }
        }
        Ok(())
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (id, e) in &self.entries {
            let rec = LabelRecord {
                id: id.clone(),
                choice: e.choice,
                provenance: e.provenance,
                score: e.score,
            };
            writeln!(w, "{}", serde_json::to_string(&rec).expect("label serializes"))
                .map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut set = Self::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: LabelRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: e.to_string(),
            })?;
            set.insert(rec.id, rec.choice, rec.provenance, rec.score);
        }
        Ok(set)
    }
}
