//! Multiple-choice examples, role-tagged datasets and their JSONL form.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Choices are letter-labeled at the prompt boundary, so at most A..Z.
pub const MAX_CHOICES: usize = 26;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub query: String,
    pub choices: Vec<String>,
    /// 0-based index into `choices`.
    #[serde(rename = "label", default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<usize>,
}

impl Example {
    pub fn new(
        id: impl Into<String>,
        query: impl Into<String>,
        choices: Vec<String>,
        gold_label: Option<usize>,
    ) -> Result<Self> {
        let ex = Example {
            id: id.into(),
            query: query.into(),
            choices,
            gold_label,
        };
        ex.validate()?;
        Ok(ex)
    }

    pub fn n_choices(&self) -> usize {
        self.choices.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.choices.is_empty() || self.choices.len() > MAX_CHOICES {
            return Err(Error::Validation(format!(
                "example {:?} has {} choices (allowed 1..={MAX_CHOICES})",
                self.id,
                self.choices.len()
            )));
        }
        if let Some(label) = self.gold_label {
            if label >= self.choices.len() {
                return Err(Error::Validation(format!(
                    "example {:?} label {label} out of range for {} choices",
                    self.id,
                    self.choices.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Source,
    TargetSeed,
    TargetUnlabeled,
    TargetTest,
}

impl Role {
    pub fn requires_gold(self) -> bool {
        matches!(self, Role::Source | Role::TargetTest)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Source => "source",
            Role::TargetSeed => "target_seed",
            Role::TargetUnlabeled => "target_unlabeled",
            Role::TargetTest => "target_test",
        }
    }
}

/// An ordered collection of examples. The order is the canonical row order
/// for every embedding matrix aligned to this dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub role: Role,
    pub task_name: String,
    pub task_definition: String,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(
        role: Role,
        task_name: impl Into<String>,
        task_definition: impl Into<String>,
        examples: Vec<Example>,
    ) -> Result<Self> {
        let ds = Dataset {
            role,
            task_name: task_name.into(),
            task_definition: task_definition.into(),
            examples,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Total number of (example, choice) pairs.
    pub fn n_pairs(&self) -> usize {
        self.examples.iter().map(Example::n_choices).sum()
    }

    /// Row offset of each example's first pair in a pair-text matrix.
    pub fn pair_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.examples.len());
        let mut acc = 0;
        for ex in &self.examples {
            offsets.push(acc);
            acc += ex.n_choices();
        }
        offsets
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.examples.iter().position(|e| e.id == id)
    }

    pub fn has_full_gold(&self) -> bool {
        self.examples.iter().all(|e| e.gold_label.is_some())
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.examples.len());
        for ex in &self.examples {
            ex.validate()?;
            if !seen.insert(ex.id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate example id {:?} in {} dataset",
                    ex.id,
                    self.role.as_str()
                )));
            }
            if self.role.requires_gold() && ex.gold_label.is_none() {
                return Err(Error::Validation(format!(
                    "example {:?} has no label but role {} requires one",
                    ex.id,
                    self.role.as_str()
                )));
            }
        }
        Ok(())
    }

    /// Same examples under a different role, revalidated.
    pub fn with_role(&self, role: Role) -> Result<Dataset> {
        Dataset::new(
            role,
            self.task_name.clone(),
            self.task_definition.clone(),
            self.examples.clone(),
        )
    }

    /// Copy of the dataset with every gold label removed.
    pub fn without_gold(&self) -> Dataset {
        let mut ds = self.clone();
        for ex in &mut ds.examples {
            ex.gold_label = None;
        }
        ds
    }
}

/// Reads a JSONL dataset, one `{"id","query","choices","label"?}` object per line.
/// Blank lines are skipped; line numbers in errors are 1-based.
pub fn load_dataset(
    path: impl AsRef<Path>,
    role: Role,
    task_name: &str,
    task_definition: &str,
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut examples = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: Example = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        examples.push(ex);
    }
    Dataset::new(role, task_name, task_definition, examples)
}

pub fn write_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in &dataset.examples {
        let line = serde_json::to_string(ex).expect("example serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Seeded uniform shuffle of the pool; the first `seed_size` examples become
/// the seed set and the rest the unlabeled set. Both keep pool order.
pub fn split_target(pool: &Dataset, seed_size: usize, rng_seed: u64) -> Result<(Dataset, Dataset)> {
    if seed_size > pool.len() {
        return Err(Error::Validation(format!(
            "seed size {seed_size} exceeds pool size {}",
            pool.len()
        )));
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let mut chosen = vec![false; pool.len()];
    for &i in &order[..seed_size] {
        chosen[i] = true;
    }
    let (seed, unlabeled): (Vec<_>, Vec<_>) = pool
        .examples
        .iter()
        .cloned()
        .zip(chosen)
        .partition(|(_, c)| *c);
    let strip = |v: Vec<(Example, bool)>| v.into_iter().map(|(e, _)| e).collect::<Vec<_>>();
    Ok((
        Dataset::new(
            Role::TargetSeed,
            &pool.task_name,
            &pool.task_definition,
            strip(seed),
        )?,
        Dataset::new(
            Role::TargetUnlabeled,
            &pool.task_name,
            &pool.task_definition,
            strip(unlabeled),
        )?,
    ))
}
