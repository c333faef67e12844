//! End-to-end orchestration of the baseline modes and in-task ICL evaluation.
//!
//! Every stage is a separate function that can persist its artifact into an
//! output directory, so a run can be resumed from any stage.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::aggregate::{build_views, init_gnn_ensemble, ViewOptions, ViewSet};
use crate::config::{DataConfig, LlmBackend, LlmSettings, Mode, PoolScope, RunConfig};
use crate::data::{load_dataset, split_target, Dataset, Example, Role};
use crate::embedding::{load_embeddings, EmbeddingKind, EmbeddingMatrix};
use crate::error::{Error, LlmError, Result};
use crate::glip::dump::{write_model, write_train_state};
use crate::glip::{build_glip_graph, predict_labels, train_glip, GlipConfig, GlipGraph};
use crate::graph::TaskGraph;
use crate::graphsim::{rank_top_k, select_source_examples, similarity_matrix, SelectionResult};
use crate::labels::{Provenance, PseudoLabeledSet};
use crate::linalg::cosine_or_zero;
use crate::llm::client::Exchange;
use crate::llm::{answer_queries, pseudo_label_seed, ClusterOracle, ExchangeLog, HttpChatModel, IclRequest, LanguageModel, MockLlm, PromptSpec, SeedLabeling};
use crate::synth::ClusterPair;

/// File names written into the output directory.
pub mod artifacts {
    pub const SELECTIONS: &str = "selections.jsonl";
    pub const SEED_LABELS: &str = "seed_labels.jsonl";
    pub const PROPAGATED_LABELS: &str = "propagated_labels.jsonl";
    pub const MODEL: &str = "model.bin";
    pub const TRAIN_STATE: &str = "train_state.json";
    pub const PREDICTIONS: &str = "predictions.jsonl";
    pub const REPORT_JSON: &str = "report.json";
    pub const REPORT_TEXT: &str = "report.txt";
    pub const LLM_LOG: &str = "llm_log.jsonl";
    pub const GRAPHS: &str = "graphs";
}

/// Everything a run reads. Only the test split is mandatory; what else is
/// needed depends on the mode (see [`check_inputs`]).
#[derive(Debug, Clone)]
pub struct PipelineInputs {
    pub source: Option<Dataset>,
    pub source_emb: Option<EmbeddingMatrix>,
    /// Target pool, split into seed and unlabeled sets by the run seed.
    pub pool: Option<Dataset>,
    pub pool_emb: Option<EmbeddingMatrix>,
    pub pool_pair_emb: Option<EmbeddingMatrix>,
    pub test: Dataset,
    pub test_emb: Option<EmbeddingMatrix>,
    pub target_definition: String,
}

impl PipelineInputs {
    pub fn load(data: &DataConfig) -> Result<Self> {
        let source_def = data.source_definition.resolve()?;
        let target_def = data.target_definition.resolve()?;
        let test_path = data
            .test
            .as_ref()
            .ok_or_else(|| Error::Config("data.test is required".into()))?;
        let test = load_dataset(test_path, Role::TargetTest, &data.target_task, &target_def)?;
        let source = data
            .source
            .as_ref()
            .map(|p| load_dataset(p, Role::Source, &data.source_task, &source_def))
            .transpose()?;
        let pool = data
            .target_pool
            .as_ref()
            .map(|p| load_dataset(p, Role::TargetUnlabeled, &data.target_task, &target_def))
            .transpose()?;
        let emb = |path: &Option<PathBuf>, ds: Option<&Dataset>, kind: EmbeddingKind, what: &str| -> Result<Option<EmbeddingMatrix>> {
            match (path, ds) {
                (Some(p), Some(ds)) => load_embeddings(p, ds, kind).map(Some),
                (Some(_), None) => Err(Error::Config(format!("{what} embeddings given without their dataset"))),
                (None, _) => Ok(None),
            }
        };
        Ok(PipelineInputs {
            source_emb: emb(&data.source_embeddings, source.as_ref(), EmbeddingKind::ExampleText, "source")?,
            pool_emb: emb(&data.target_pool_embeddings, pool.as_ref(), EmbeddingKind::ExampleText, "target pool")?,
            pool_pair_emb: emb(&data.target_pool_pair_embeddings, pool.as_ref(), EmbeddingKind::PairText, "target pool pair")?,
            test_emb: emb(&data.test_embeddings, Some(&test), EmbeddingKind::ExampleText, "test")?,
            source,
            pool,
            test,
            target_definition: target_def,
        })
    }

    pub fn from_cluster_pair(c: &ClusterPair) -> Result<Self> {
        Ok(PipelineInputs {
            source_emb: Some(EmbeddingMatrix::from_array(c.source_emb.clone(), &c.source, EmbeddingKind::ExampleText)?),
            pool_emb: Some(EmbeddingMatrix::from_array(c.pool_emb.clone(), &c.pool, EmbeddingKind::ExampleText)?),
            pool_pair_emb: Some(EmbeddingMatrix::from_array(c.pool_pair_emb.clone(), &c.pool, EmbeddingKind::PairText)?),
            test_emb: Some(EmbeddingMatrix::from_array(c.test_emb.clone(), &c.test, EmbeddingKind::ExampleText)?),
            source: Some(c.source.clone()),
            pool: Some(c.pool.clone()),
            test: c.test.clone(),
            target_definition: String::new(),
        })
    }

    fn source(&self) -> Result<(&Dataset, &EmbeddingMatrix)> {
        match (&self.source, &self.source_emb) {
            (Some(d), Some(e)) => Ok((d, e)),
            _ => Err(Error::Config("source dataset and source embeddings are required".into())),
        }
    }

    fn pool(&self) -> Result<(&Dataset, &EmbeddingMatrix)> {
        match (&self.pool, &self.pool_emb) {
            (Some(d), Some(e)) => Ok((d, e)),
            _ => Err(Error::Config("target pool and its embeddings are required".into())),
        }
    }

    fn pool_pairs(&self) -> Result<&EmbeddingMatrix> {
        self.pool_pair_emb
            .as_ref()
            .ok_or_else(|| Error::Config("target pool pair embeddings are required".into()))
    }

    fn test_emb(&self) -> Result<&EmbeddingMatrix> {
        self.test_emb
            .as_ref()
            .ok_or_else(|| Error::Config("test embeddings are required".into()))
    }
}

/// Output locations and optional dumps.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub dump_graphs: bool,
    pub dump_selections: bool,
}

impl RunOptions {
    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        RunOptions {
            out_dir: Some(dir.into()),
            ..RunOptions::default()
        }
    }

    fn path(&self, name: &str) -> Option<PathBuf> {
        self.out_dir.as_ref().map(|d| d.join(name))
    }
}

pub fn run_id(cfg: &RunConfig) -> String {
    format!("{}-{:016x}", cfg.mode, cfg.seed)
}

/// Builds the configured language model. The mock backend needs a cluster
/// oracle sidecar.
pub fn model_from_settings(settings: &LlmSettings) -> Result<Box<dyn LanguageModel>> {
    match settings.backend {
        LlmBackend::Mock => {
            let path = settings
                .mock_sidecar
                .as_ref()
                .ok_or_else(|| Error::Config("llm.mock_sidecar is required for the mock backend".into()))?;
            Ok(Box::new(MockLlm::new(ClusterOracle::load(path)?, settings.mock_seed)))
        }
        LlmBackend::Http => Ok(Box::new(HttpChatModel::from_settings(settings)?)),
    }
}

/// Rejects mode/input combinations that cannot run. Called before any model
/// request is made.
pub fn check_inputs(cfg: &RunConfig, inputs: &PipelineInputs) -> Result<()> {
    cfg.validate()?;
    let mode = cfg.mode;
    if inputs.test.is_empty() {
        return Err(Error::Config("test set is empty".into()));
    }
    if matches!(mode, Mode::Embsim | Mode::Graphsim | Mode::Ours) {
        let (src, src_emb) = inputs.source()?;
        if src.is_empty() {
            return Err(Error::Config("source set is empty".into()));
        }
        let target_dim = if mode == Mode::Ours { inputs.pool()?.1.dim() } else { inputs.test_emb()?.dim() };
        if src_emb.dim() != target_dim {
            return Err(Error::Config(format!(
                "source embeddings have dimension {} but target embeddings have {target_dim}",
                src_emb.dim()
            )));
        }
    }
    if matches!(mode, Mode::LLlm | Mode::GlipGold | Mode::Ours | Mode::Oracle) {
        let (pool, pool_emb) = inputs.pool()?;
        let test_emb = inputs.test_emb()?;
        if pool_emb.dim() != test_emb.dim() {
            return Err(Error::Config(format!(
                "pool embeddings have dimension {} but test embeddings have {}",
                pool_emb.dim(),
                test_emb.dim()
            )));
        }
        if mode == Mode::Oracle {
            if !pool.has_full_gold() {
                return Err(Error::Config("oracle mode needs gold labels on the whole target pool".into()));
            }
        } else {
            if cfg.seed_size == 0 || cfg.seed_size > pool.len() {
                return Err(Error::Config(format!(
                    "seed_size {} must be in 1..={}",
                    cfg.seed_size,
                    pool.len()
                )));
            }
            if matches!(mode, Mode::LLlm | Mode::GlipGold) {
                let (seed, _) = split_pool(cfg, inputs)?;
                if let Some(ex) = seed.examples.iter().find(|e| e.gold_label.is_none()) {
                    return Err(Error::Config(format!(
                        "mode {mode} needs gold labels on the seed set; {:?} has none",
                        ex.id
                    )));
                }
            }
        }
        if matches!(mode, Mode::GlipGold | Mode::Ours) {
            inputs.pool_pairs()?;
        }
    }
    if matches!(mode, Mode::Embsim | Mode::Graphsim) || mode.uses_pool() {
        inputs.test_emb()?;
    }
    Ok(())
}

impl Mode {
    fn uses_pool(self) -> bool {
        matches!(self, Mode::LLlm | Mode::GlipGold | Mode::Ours | Mode::Oracle)
    }
}

/// Seed and unlabeled sets for this run's seed.
pub fn split_pool(cfg: &RunConfig, inputs: &PipelineInputs) -> Result<(Dataset, Dataset)> {
    let (pool, _) = inputs.pool()?;
    split_target(pool, cfg.seed_size, cfg.seed)
}

fn view_options(cfg: &RunConfig, structural: bool) -> ViewOptions {
    ViewOptions {
        k: cfg.k_graph,
        hops: cfg.l_hops,
        symmetric: cfg.symmetric_aggregation,
        normalize_blocks: cfg.normalize_view_blocks,
        adjacency_view: structural,
        gnn_view: structural,
    }
}

/// Views for the target task (graph built over `target_emb`) and the source
/// task. `structural = false` gives the raw-embedding-only views.
pub fn build_task_views(
    cfg: &RunConfig,
    target_name: &str,
    target_emb: &Array2<f64>,
    source_name: &str,
    source_emb: &Array2<f64>,
    structural: bool,
) -> ((TaskGraph, ViewSet), (TaskGraph, ViewSet)) {
    let ensemble = init_gnn_ensemble(cfg.seed, &cfg.gnn_layer_spec, source_emb.ncols(), cfg.gnn_hidden);
    let opts = view_options(cfg, structural);
    (
        build_views(target_name, target_emb, &opts, &ensemble),
        build_views(source_name, source_emb, &opts, &ensemble),
    )
}

fn write_graph(path: &Path, g: &TaskGraph) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    g.write_jsonl(path)
}

/// Cross-task demonstration selection. For `ours` the target graph spans the
/// whole pool and selections are made for the seed set; for the direct
/// modes the graph spans the test set.
pub fn stage_select(cfg: &RunConfig, inputs: &PipelineInputs, opts: &RunOptions) -> Result<SelectionResult> {
    let (source, source_emb) = inputs.source()?;
    let structural = cfg.mode != Mode::Embsim;
    let (target_all, target_emb, targets) = match cfg.mode {
        Mode::Ours => {
            let (pool, pool_emb) = inputs.pool()?;
            (pool, pool_emb, split_pool(cfg, inputs)?.0)
        }
        Mode::Embsim | Mode::Graphsim => (&inputs.test, inputs.test_emb()?, inputs.test.clone()),
        m => return Err(Error::Config(format!("mode {m} does not select cross-task demonstrations"))),
    };
    let ((tg, tv), (sg, sv)) = build_task_views(
        cfg,
        &target_all.task_name,
        &target_emb.data,
        &source.task_name,
        &source_emb.data,
        structural,
    );
    if opts.dump_graphs {
        if let Some(dir) = opts.path(artifacts::GRAPHS) {
            write_graph(&dir.join("target_graph.jsonl"), &tg)?;
            write_graph(&dir.join("source_graph.jsonl"), &sg)?;
        }
    }
    let scores = similarity_matrix(&tv, &sv)?;
    let rows: Vec<usize> = targets
        .examples
        .iter()
        .map(|e| target_all.position(&e.id).expect("subset of the target set"))
        .collect();
    let scores = scores.select(ndarray::Axis(0), &rows);
    let selection = select_source_examples(&targets, source, &scores, cfg.k_shots)?;
    if let Some(p) = opts.path(artifacts::SELECTIONS) {
        selection.write_jsonl(p)?;
    }
    Ok(selection)
}

/// LLM labeling of the seed set with the selected source demonstrations.
pub fn stage_label_seed<M: LanguageModel + ?Sized>(
    cfg: &RunConfig,
    inputs: &PipelineInputs,
    selection: &SelectionResult,
    model: &M,
    log: Option<&ExchangeLog>,
    opts: &RunOptions,
) -> Result<SeedLabeling> {
    let (source, _) = inputs.source()?;
    let (seed, _) = split_pool(cfg, inputs)?;
    let spec = PromptSpec::new(inputs.target_definition.clone());
    let result = pseudo_label_seed(&seed, selection, source, &spec, model, cfg.k_shots, cfg.llm.max_in_flight, log);
    if let (Err(Error::EndpointUnreachable { partial, .. }), Some(p)) = (&result, opts.path(artifacts::SEED_LABELS)) {
        partial.write_jsonl(p)?;
    }
    let labeling = result?;
    if let Some(p) = opts.path(artifacts::SEED_LABELS) {
        labeling.labels.write_jsonl(p)?;
    }
    Ok(labeling)
}

/// Propagated labels plus the training diagnostics.
#[derive(Debug, Clone)]
pub struct Propagation {
    pub labels: PseudoLabeledSet,
    pub graph: GlipGraph,
    pub final_loss: Option<f64>,
}

/// GAT propagation from `seed_labels` to every other pool example (including
/// seed examples whose label was dropped).
pub fn stage_propagate(
    cfg: &RunConfig,
    inputs: &PipelineInputs,
    seed_labels: &PseudoLabeledSet,
    opts: &RunOptions,
) -> Result<Propagation> {
    let (pool, _) = inputs.pool()?;
    let pairs = inputs.pool_pairs()?;
    let (seed, unlabeled) = split_pool(cfg, inputs)?;
    let ordered = Dataset::new(
        Role::TargetUnlabeled,
        pool.task_name.clone(),
        pool.task_definition.clone(),
        seed.examples.iter().chain(&unlabeled.examples).cloned().collect(),
    )?;
    let features = pairs.subset(pool, &ordered)?;
    let graph = build_glip_graph(seed_labels, &seed, &unlabeled, &features.data, cfg.k_pos())?;
    let (model, state) = train_glip(&graph, &GlipConfig::from_run(cfg))?;
    let to_predict = Dataset::new(
        Role::TargetUnlabeled,
        pool.task_name.clone(),
        pool.task_definition.clone(),
        ordered
            .examples
            .iter()
            .filter(|e| seed_labels.get(&e.id).is_none())
            .cloned()
            .collect(),
    )?;
    let labels = predict_labels(&model, &graph, &to_predict)?;
    if let Some(p) = opts.path(artifacts::MODEL) {
        write_model(p, &model)?;
    }
    if let Some(p) = opts.path(artifacts::TRAIN_STATE) {
        write_train_state(p, &state)?;
    }
    if let Some(p) = opts.path(artifacts::PROPAGATED_LABELS) {
        labels.write_jsonl(p)?;
    }
    if opts.dump_graphs {
        if let Some(dir) = opts.path(artifacts::GRAPHS) {
            write_glip_graph(&dir.join("propagation_graph.jsonl"), &graph)?;
        }
    }
    Ok(Propagation {
        labels,
        graph,
        final_loss: state.history.last().map(|l| l.total),
    })
}

fn write_glip_graph(path: &Path, g: &GlipGraph) -> Result<()> {
    #[derive(Serialize)]
    struct Node<'a> {
        node: usize,
        example: &'a str,
        label: Option<u8>,
        neighbors: &'a [usize],
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for i in 0..g.n_nodes() {
        let rec = Node {
            node: i,
            example: &g.example_ids[g.example_of(i)],
            label: g.labels[i],
            neighbors: &g.pos_adj[i],
        };
        writeln!(w, "{}", serde_json::to_string(&rec).expect("node serializes")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Top-`k` pool rows by cosine with `query`, ties to the lower index,
/// returned in prompt order (ascending similarity, best last).
pub fn retrieve_in_task_demos(query: ArrayView1<'_, f64>, pool_emb: &Array2<f64>, k: usize) -> Vec<usize> {
    let scores: ndarray::Array1<f64> = pool_emb.outer_iter().map(|r| cosine_or_zero(query, r)).collect();
    let mut top: Vec<usize> = rank_top_k(scores.view(), k).into_iter().map(|(i, _)| i).collect();
    top.reverse();
    top
}

/// In-task ICL answers for `queries` using labeled demonstrations retrieved
/// from `pool`.
#[allow(clippy::too_many_arguments)]
fn in_task_answers<M: LanguageModel + ?Sized>(
    model: &M,
    spec: &PromptSpec,
    queries: &[&Example],
    query_emb: &Array2<f64>,
    pool: &[(&Example, usize)],
    pool_emb: &Array2<f64>,
    k: usize,
    max_in_flight: usize,
    log: Option<(&ExchangeLog, &str)>,
) -> Vec<std::result::Result<usize, LlmError>> {
    let requests: Vec<IclRequest<'_>> = queries
        .iter()
        .enumerate()
        .map(|(qi, q)| IclRequest {
            demos: retrieve_in_task_demos(query_emb.row(qi), pool_emb, k)
                .into_iter()
                .map(|i| pool[i])
                .collect(),
            query: q,
        })
        .collect();
    answer_queries(model, spec, &requests, max_in_flight, log)
}

/// Unparseable answers are tolerated; any other failure aborts the stage.
fn fail_on_transport(answers: &[std::result::Result<usize, LlmError>]) -> Result<()> {
    match answers.iter().find(|a| matches!(a, Err(e) if !matches!(e, LlmError::Unparseable { .. }))) {
        Some(Err(e)) => Err(Error::Llm(e.clone())),
        _ => Ok(()),
    }
}

/// In-task ICL labeling of the unlabeled set with the gold seed as pool.
pub fn stage_label_unlabeled<M: LanguageModel + ?Sized>(
    cfg: &RunConfig,
    inputs: &PipelineInputs,
    model: &M,
    log: Option<&ExchangeLog>,
    opts: &RunOptions,
) -> Result<(PseudoLabeledSet, usize)> {
    let (pool, pool_emb) = inputs.pool()?;
    let (seed, unlabeled) = split_pool(cfg, inputs)?;
    let demos: Vec<(&Example, usize)> = seed
        .examples
        .iter()
        .map(|e| (e, e.gold_label.expect("checked before the run")))
        .collect();
    let seed_emb = pool_emb.subset(pool, &seed)?;
    let unl_emb = pool_emb.subset(pool, &unlabeled)?;
    let queries: Vec<&Example> = unlabeled.examples.iter().collect();
    let spec = PromptSpec::new(inputs.target_definition.clone());
    let answers = in_task_answers(
        model,
        &spec,
        &queries,
        &unl_emb.data,
        &demos,
        &seed_emb.data,
        cfg.k_shots,
        cfg.llm.max_in_flight,
        log.map(|l| (l, "unlabeled")),
    );
    fail_on_transport(&answers)?;
    let mut labels = PseudoLabeledSet::new();
    for (ex, a) in unlabeled.examples.iter().zip(&answers) {
        if let Ok(c) = a {
            labels.insert(&ex.id, *c, Provenance::LlmInTask, 1.0);
        }
    }
    if let Some(p) = opts.path(artifacts::PROPAGATED_LABELS) {
        labels.write_jsonl(p)?;
    }
    Ok((labels, answers.len()))
}

/// One test answer; `None` when the model's reply could not be parsed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub prediction: Option<usize>,
}

pub fn write_predictions(path: impl AsRef<Path>, predictions: &[Prediction]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in predictions {
        writeln!(w, "{}", serde_json::to_string(p).expect("prediction serializes")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Where test-time demonstrations come from.
#[derive(Debug, Clone, Copy)]
pub enum DemoSource<'a> {
    None,
    CrossTask(&'a SelectionResult),
    InTask(&'a PseudoLabeledSet),
}

/// Answers every test query.
pub fn stage_icl<M: LanguageModel + ?Sized>(
    cfg: &RunConfig,
    inputs: &PipelineInputs,
    demos: DemoSource<'_>,
    model: &M,
    log: Option<&ExchangeLog>,
    opts: &RunOptions,
) -> Result<Vec<Prediction>> {
    let spec = PromptSpec::new(inputs.target_definition.clone());
    let test = &inputs.test;
    let log = log.map(|l| (l, "test"));
    let answers = match demos {
        DemoSource::None => {
            let requests: Vec<IclRequest<'_>> = test
                .examples
                .iter()
                .map(|q| IclRequest { demos: Vec::new(), query: q })
                .collect();
            answer_queries(model, &spec, &requests, cfg.llm.max_in_flight, log)
        }
        DemoSource::CrossTask(selection) => {
            let (source, _) = inputs.source()?;
            let mut requests = Vec::with_capacity(test.len());
            for q in &test.examples {
                let sel = selection
                    .get(&q.id)
                    .ok_or_else(|| Error::Validation(format!("no selection for test example {:?}", q.id)))?;
                let demos = sel
                    .selected
                    .iter()
                    .take(cfg.k_shots)
                    .rev()
                    .map(|s| {
                        let d = &source.examples[s.source_index];
                        (d, d.gold_label.expect("source role requires gold"))
                    })
                    .collect();
                requests.push(IclRequest { demos, query: q });
            }
            answer_queries(model, &spec, &requests, cfg.llm.max_in_flight, log)
        }
        DemoSource::InTask(labels) => {
            let (pool, pool_emb) = inputs.pool()?;
            let members: Vec<(&Example, usize)> = pool
                .examples
                .iter()
                .filter_map(|e| labels.get(&e.id).map(|l| (e, l.choice)))
                .collect();
            if members.is_empty() {
                return Err(Error::Validation("no labeled pool examples to use as demonstrations".into()));
            }
            let member_ds = Dataset::new(
                Role::TargetUnlabeled,
                pool.task_name.clone(),
                "",
                members.iter().map(|(e, _)| (*e).clone()).collect(),
            )?;
            let member_emb = pool_emb.subset(pool, &member_ds)?;
            let queries: Vec<&Example> = test.examples.iter().collect();
            in_task_answers(
                model,
                &spec,
                &queries,
                &inputs.test_emb()?.data,
                &members,
                &member_emb.data,
                cfg.k_shots,
                cfg.llm.max_in_flight,
                log,
            )
        }
    };
    fail_on_transport(&answers)?;
    let predictions: Vec<Prediction> = test
        .examples
        .iter()
        .zip(answers)
        .map(|(e, a)| Prediction {
            id: e.id.clone(),
            prediction: a.ok(),
        })
        .collect();
    if let Some(p) = opts.path(artifacts::PREDICTIONS) {
        write_predictions(p, &predictions)?;
    }
    Ok(predictions)
}

/// Fraction of predictions equal to the gold choice. A `None` prediction
/// counts as wrong; an empty input or a prediction without gold is an error.
pub fn accuracy<'a, I>(predictions: I, gold: &Dataset) -> Result<f64>
where
    I: IntoIterator<Item = (&'a str, Option<usize>)>,
{
    let index: HashMap<&str, Option<usize>> = gold.examples.iter().map(|e| (e.id.as_str(), e.gold_label)).collect();
    let (mut n, mut correct) = (0usize, 0usize);
    for (id, pred) in predictions {
        let g = index
            .get(id)
            .copied()
            .flatten()
            .ok_or_else(|| Error::Validation(format!("no gold label for prediction {id:?}")))?;
        n += 1;
        correct += usize::from(pred == Some(g));
    }
    if n == 0 {
        return Err(Error::Validation("accuracy of an empty prediction set".into()));
    }
    Ok(correct as f64 / n as f64)
}

pub fn label_accuracy(labels: &PseudoLabeledSet, gold: &Dataset) -> Result<f64> {
    accuracy(labels.iter().map(|(id, e)| (id, Some(e.choice))), gold)
}

pub fn prediction_accuracy(predictions: &[Prediction], gold: &Dataset) -> Result<f64> {
    accuracy(predictions.iter().map(|p| (p.id.as_str(), p.prediction)), gold)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageCounts {
    pub seed: usize,
    pub seed_labeled: usize,
    pub seed_dropped: usize,
    pub unlabeled: usize,
    pub propagated: usize,
    /// Labeled pool examples available as test-time demonstrations.
    pub demo_pool: usize,
    pub test: usize,
    pub test_unparseable: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LlmCalls {
    pub seed: usize,
    pub unlabeled: usize,
    pub test: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    /// Seed pseudo-labels against gold, when the seed set has gold.
    pub seed_labels: Option<f64>,
    /// Propagated labels against gold, when available.
    pub propagation: Option<f64>,
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub mode: Mode,
    pub seed: u64,
    pub counts: StageCounts,
    pub llm_calls: LlmCalls,
    pub accuracy: Accuracies,
    pub timings: Vec<StageTiming>,
    pub config: RunConfig,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Same report without wall-clock fields, for reproducibility checks.
    pub fn without_timings(&self) -> RunReport {
        RunReport {
            timings: Vec::new(),
            ..self.clone()
        }
    }

    pub fn to_text(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("-".to_owned(), |v| format!("{:.2}", 100.0 * v));
        let mut s = String::new();
        let _ = writeln!(s, "run {} (mode {}, seed {})", self.run_id, self.mode, self.seed);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<24} {:>10}", "metric", "value");
        let c = &self.counts;
        for (k, v) in [
            ("seed examples", c.seed),
            ("seed labeled", c.seed_labeled),
            ("seed dropped", c.seed_dropped),
            ("unlabeled examples", c.unlabeled),
            ("propagated labels", c.propagated),
            ("demo pool", c.demo_pool),
            ("test examples", c.test),
            ("test unparseable", c.test_unparseable),
            ("llm calls (seed)", self.llm_calls.seed),
            ("llm calls (unlabeled)", self.llm_calls.unlabeled),
            ("llm calls (test)", self.llm_calls.test),
            ("llm calls (total)", self.llm_calls.total),
        ] {
            let _ = writeln!(s, "{k:<24} {v:>10}");
        }
        for (k, v) in [
            ("seed label acc %", pct(self.accuracy.seed_labels)),
            ("propagation acc %", pct(self.accuracy.propagation)),
            ("test acc %", pct(Some(self.accuracy.test))),
        ] {
            let _ = writeln!(s, "{k:<24} {v:>10}");
        }
        let _ = writeln!(s);
        for t in &self.timings {
            let _ = writeln!(s, "{:<24} {:>9.3}s", format!("time {}", t.stage), t.seconds);
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let j = dir.join(artifacts::REPORT_JSON);
        fs::write(&j, self.to_json()).map_err(|e| Error::io(&j, e))?;
        let t = dir.join(artifacts::REPORT_TEXT);
        fs::write(&t, self.to_text()).map_err(|e| Error::io(&t, e))
    }
}

pub fn write_exchanges(path: impl AsRef<Path>, exchanges: &[Exchange]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for x in exchanges {
        writeln!(w, "{}", serde_json::to_string(x).expect("exchange serializes")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

struct Timer {
    timings: Vec<StageTiming>,
}

impl Timer {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        info!(stage, "stage start");
        let out = f()?;
        let seconds = t0.elapsed().as_secs_f64();
        info!(stage, seconds, "stage done");
        self.timings.push(StageTiming {
            stage: stage.to_owned(),
            seconds,
        });
        Ok(out)
    }
}

fn optional_accuracy(labels: &PseudoLabeledSet, gold: &Dataset) -> Option<f64> {
    let all_gold = labels
        .iter()
        .all(|(id, _)| gold.position(id).and_then(|i| gold.examples[i].gold_label).is_some());
    if labels.is_empty() || !all_gold {
        return None;
    }
    label_accuracy(labels, gold).ok()
}

/// Runs `cfg.mode` end to end and returns the report. Artifacts go into
/// `opts.out_dir` when set.
pub fn run_mode<M: LanguageModel + ?Sized>(
    cfg: &RunConfig,
    inputs: &PipelineInputs,
    model: &M,
    opts: &RunOptions,
) -> Result<RunReport> {
    check_inputs(cfg, inputs)?;
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let run_id = run_id(cfg);
    let log = ExchangeLog::new(run_id.clone());
    let mut timer = Timer { timings: Vec::new() };
    let mut counts = StageCounts {
        test: inputs.test.len(),
        ..StageCounts::default()
    };
    let mut calls = LlmCalls::default();
    let mut seed_acc = None;
    let mut prop_acc = None;
    let sel_opts = RunOptions {
        out_dir: opts.out_dir.clone().filter(|_| opts.dump_selections),
        ..opts.clone()
    };

    let predictions = match cfg.mode {
        Mode::ZeroShot => timer.time("test", || stage_icl(cfg, inputs, DemoSource::None, model, Some(&log), opts))?,
        Mode::Embsim | Mode::Graphsim => {
            let selection = timer.time("select", || stage_select(cfg, inputs, &sel_opts))?;
            timer.time("test", || stage_icl(cfg, inputs, DemoSource::CrossTask(&selection), model, Some(&log), opts))?
        }
        Mode::Oracle => {
            let (pool, _) = inputs.pool()?;
            let labels = PseudoLabeledSet::from_gold(pool);
            counts.demo_pool = labels.len();
            timer.time("test", || stage_icl(cfg, inputs, DemoSource::InTask(&labels), model, Some(&log), opts))?
        }
        Mode::LLlm | Mode::GlipGold | Mode::Ours => {
            let (seed, unlabeled) = split_pool(cfg, inputs)?;
            counts.seed = seed.len();
            counts.unlabeled = unlabeled.len();
            let seed_labels = if cfg.mode == Mode::Ours {
                let selection = timer.time("select", || stage_select(cfg, inputs, &sel_opts))?;
                let labeling = timer.time("label_seed", || stage_label_seed(cfg, inputs, &selection, model, Some(&log), opts))?;
                calls.seed = labeling.calls;
                counts.seed_dropped = labeling.dropped.len();
                seed_acc = optional_accuracy(&labeling.labels, &seed);
                labeling.labels
            } else {
                let gold = PseudoLabeledSet::from_gold(&seed);
                if let Some(p) = opts.path(artifacts::SEED_LABELS) {
                    gold.write_jsonl(p)?;
                }
                gold
            };
            counts.seed_labeled = seed_labels.len();
            let propagated = if cfg.mode == Mode::LLlm {
                let (labels, n) = timer.time("label_unlabeled", || stage_label_unlabeled(cfg, inputs, model, Some(&log), opts))?;
                calls.unlabeled = n;
                labels
            } else {
                timer.time("propagate", || stage_propagate(cfg, inputs, &seed_labels, opts))?.labels
            };
            counts.propagated = propagated.len();
            prop_acc = optional_accuracy(&propagated, inputs.pool()?.0);
            let pool_labels = match cfg.pool_scope {
                PoolScope::SeedAndPropagated => seed_labels.merged(&propagated),
                PoolScope::SeedOnly => seed_labels,
            };
            counts.demo_pool = pool_labels.len();
            timer.time("test", || stage_icl(cfg, inputs, DemoSource::InTask(&pool_labels), model, Some(&log), opts))?
        }
    };
    calls.test = predictions.len();
    calls.total = calls.seed + calls.unlabeled + calls.test;
    counts.test_unparseable = predictions.iter().filter(|p| p.prediction.is_none()).count();
    let test_acc = prediction_accuracy(&predictions, &inputs.test)?;
    let report = RunReport {
        run_id,
        mode: cfg.mode,
        seed: cfg.seed,
        counts,
        llm_calls: calls,
        accuracy: Accuracies {
            seed_labels: seed_acc,
            propagation: prop_acc,
            test: test_acc,
        },
        timings: timer.timings,
        config: cfg.clone(),
    };
    if let Some(dir) = &opts.out_dir {
        write_exchanges(dir.join(artifacts::LLM_LOG), &log.take())?;
        report.write(dir)?;
    }
    info!(mode = %cfg.mode, accuracy = test_acc, "run finished");
    Ok(report)
}
