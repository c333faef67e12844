//! Run configuration. Loaded from a TOML file; every field has a default so
//! a file only needs to list what it changes.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompts;

/// Which sources of demonstrations and labels a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Task definition only.
    ZeroShot,
    /// Cross-task demonstrations ranked by raw-embedding cosine.
    Embsim,
    /// Cross-task demonstrations ranked by averaged multi-view similarity.
    Graphsim,
    /// Gold seed set as pool; the LLM labels the unlabeled set by in-task ICL.
    LLlm,
    /// Gold seed set propagated to the unlabeled set by the GAT.
    GlipGold,
    /// Graphsim + LLM seed labeling, then GAT propagation.
    Ours,
    /// Entire gold target pool as demonstrations.
    Oracle,
}

impl Mode {
    pub const ALL: [Mode; 7] = [
        Mode::ZeroShot,
        Mode::Embsim,
        Mode::Graphsim,
        Mode::LLlm,
        Mode::GlipGold,
        Mode::Ours,
        Mode::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::ZeroShot => "zero_shot",
            Mode::Embsim => "embsim",
            Mode::Graphsim => "graphsim",
            Mode::LLlm => "l_llm",
            Mode::GlipGold => "glip_gold",
            Mode::Ours => "ours",
            Mode::Oracle => "oracle",
        }
    }

    /// Modes that answer test queries with cross-task (or no) demonstrations.
    pub fn prompts_directly(self) -> bool {
        matches!(self, Mode::ZeroShot | Mode::Embsim | Mode::Graphsim)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

/// Form of the mutual-exclusion penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MecForm {
    /// Mean cosine of negative-edge endpoints; minimizing pushes them apart.
    #[default]
    CosinePenalty,
    /// `-(1/|E|) Σ <h_i, h_j>` exactly as written, kept for comparison.
    NegatedInnerProduct,
}

/// Which pseudo-labeled examples form the test-time retrieval pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolScope {
    #[default]
    SeedAndPropagated,
    SeedOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmBackend {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    pub backend: LlmBackend,
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: String,
    pub max_in_flight: usize,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    /// Cluster/answer sidecar consumed by the mock backend.
    pub mock_sidecar: Option<PathBuf>,
    pub mock_seed: u64,
}

impl Default for LlmSettings {
    fn default() -> Self {
        LlmSettings {
            backend: LlmBackend::Mock,
            base_url: "http://localhost:8000/v1".into(),
            model: "default".into(),
            token_env: "CROSSLABEL_API_TOKEN".into(),
            max_in_flight: 4,
            max_attempts: 5,
            initial_backoff_ms: 500,
            temperature: 0.0,
            max_tokens: 16,
            timeout_secs: 60,
            mock_sidecar: None,
            mock_seed: 0,
        }
    }
}

/// Task definition text: a shipped asset name, a file, or inline text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskDefinition {
    Asset(String),
    File(PathBuf),
    Text(String),
}

impl Default for TaskDefinition {
    fn default() -> Self {
        TaskDefinition::Text(String::new())
    }
}

impl TaskDefinition {
    pub fn resolve(&self) -> Result<String> {
        match self {
            TaskDefinition::Asset(name) => prompts::task_definition(name)
                .map(str::to_owned)
                .ok_or_else(|| Error::Config(format!("no shipped task definition named {name:?}"))),
            TaskDefinition::File(p) => fs::read_to_string(p)
                .map(|s| s.trim_end().to_owned())
                .map_err(|e| Error::io(p, e)),
            TaskDefinition::Text(t) => Ok(t.clone()),
        }
    }
}

/// Input file locations; only the CLI reads these.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source_task: String,
    pub target_task: String,
    pub source_definition: TaskDefinition,
    pub target_definition: TaskDefinition,
    pub source: Option<PathBuf>,
    pub source_embeddings: Option<PathBuf>,
    /// Target pool, split into seed and unlabeled sets at run time.
    pub target_pool: Option<PathBuf>,
    pub target_pool_embeddings: Option<PathBuf>,
    pub target_pool_pair_embeddings: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub test_embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    /// kNN neighbor budget for task graphs.
    pub k_graph: usize,
    /// Hops of adjacency aggregation.
    pub l_hops: usize,
    /// Layer count of each random GCN in the view ensemble.
    pub gnn_layer_spec: Vec<usize>,
    pub gnn_hidden: usize,
    /// Demonstrations per prompt.
    pub k_shots: usize,
    pub gat_hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub lambda_mec: f64,
    pub mec_form: MecForm,
    /// Positive-edge budget in the propagation graph; `None` reuses `k_graph`.
    pub k_pos: Option<usize>,
    pub seed_size: usize,
    /// L2-normalize each hop/member block of the structural views.
    pub normalize_view_blocks: bool,
    /// Aggregate over the OR-symmetrized adjacency instead of the directed one.
    pub symmetric_aggregation: bool,
    pub pool_scope: PoolScope,
    pub llm: LlmSettings,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Ours,
            seed: 0,
            k_graph: 20,
            l_hops: 2,
            gnn_layer_spec: vec![1, 1, 2, 2],
            gnn_hidden: 128,
            k_shots: 1,
            gat_hidden: 64,
            lr: 0.005,
            epochs: 25,
            lambda_mec: 0.4,
            mec_form: MecForm::CosinePenalty,
            k_pos: None,
            seed_size: 100,
            normalize_view_blocks: true,
            symmetric_aggregation: true,
            pool_scope: PoolScope::SeedAndPropagated,
            llm: LlmSettings::default(),
            data: DataConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn k_pos(&self) -> usize {
        self.k_pos.unwrap_or(self.k_graph)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k_graph", self.k_graph),
            ("l_hops", self.l_hops),
            ("gnn_hidden", self.gnn_hidden),
            ("k_shots", self.k_shots),
            ("gat_hidden", self.gat_hidden),
            ("epochs", self.epochs),
            ("llm.max_in_flight", self.llm.max_in_flight),
            ("llm.max_attempts", self.llm.max_attempts as usize),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.gnn_layer_spec.is_empty() || self.gnn_layer_spec.contains(&0) {
            return Err(Error::Config(
                "gnn_layer_spec must be a non-empty list of positive layer counts".into(),
            ));
        }
        if !(self.lambda_mec >= 0.0 && self.lambda_mec.is_finite()) {
            return Err(Error::Config("lambda_mec must be a finite value >= 0".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }
}
