//! Prompt assembly, model access and answer parsing.

pub mod client;
pub mod mock;
pub mod parse;
pub mod prompt;

use tracing::warn;

pub use client::{complete_all, ExchangeLog, HttpChatModel, LanguageModel};
pub use mock::{ClusterOracle, MockLlm};
pub use parse::parse_answer;
pub use prompt::{build_prompt, choice_letter, PromptSpec};

use crate::data::{Dataset, Example};
use crate::error::{Error, LlmError, Result};
use crate::graphsim::SelectionResult;
use crate::labels::{Provenance, PseudoLabeledSet};

/// Demonstrations (in prompt order) plus the query to answer.
#[derive(Debug, Clone)]
pub struct IclRequest<'a> {
    pub demos: Vec<(&'a Example, usize)>,
    pub query: &'a Example,
}

/// Answers each request with a parsed choice index. Parsing failures surface
/// as [`LlmError::Unparseable`]; anything else is a transport-level failure.
pub fn answer_queries<M: LanguageModel + ?Sized>(
    model: &M,
    spec: &PromptSpec,
    requests: &[IclRequest<'_>],
    max_in_flight: usize,
    log: Option<(&ExchangeLog, &str)>,
) -> Vec<Result<usize, LlmError>> {
    let prompts: Vec<String> = requests
        .iter()
        .map(|r| build_prompt(spec, &r.demos, r.query))
        .collect();
    complete_all(model, &prompts, max_in_flight, log)
        .into_iter()
        .zip(requests)
        .map(|(raw, r)| raw.and_then(|text| parse_answer(&text, &r.query.choices)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedLabeling {
    pub labels: PseudoLabeledSet,
    /// Seed ids whose answers could not be parsed, in seed order.
    pub dropped: Vec<String>,
    /// Prompts sent to the model.
    pub calls: usize,
}

/// Labels every seed example by prompting with its top-`k` selected source
/// demonstrations (gold labels, ascending score so the closest sits next to
/// the query). Unparseable answers are dropped rather than guessed.
#[allow(clippy::too_many_arguments)]
pub fn pseudo_label_seed<M: LanguageModel + ?Sized>(
    seed: &Dataset,
    selection: &SelectionResult,
    source: &Dataset,
    spec: &PromptSpec,
    model: &M,
    k: usize,
    max_in_flight: usize,
    log: Option<&ExchangeLog>,
) -> Result<SeedLabeling> {
    let mut requests = Vec::with_capacity(seed.len());
    for ex in &seed.examples {
        let sel = selection
            .get(&ex.id)
            .ok_or_else(|| Error::Validation(format!("no source selection for seed example {:?}", ex.id)))?;
        let mut demos = Vec::with_capacity(k);
        for s in sel.selected.iter().take(k).rev() {
            let demo = source.examples.get(s.source_index).filter(|d| d.id == s.source_id).ok_or_else(|| {
                Error::Validation(format!("selected source {:?} not found in source set", s.source_id))
            })?;
            let label = demo
                .gold_label
                .ok_or_else(|| Error::Validation(format!("source example {:?} has no label", demo.id)))?;
            demos.push((demo, label));
        }
        requests.push(IclRequest { demos, query: ex });
    }

    let answers = answer_queries(model, spec, &requests, max_in_flight, log.map(|l| (l, "seed")));
    let mut labels = PseudoLabeledSet::new();
    let mut dropped = Vec::new();
    let mut failure = None;
    for (ex, answer) in seed.examples.iter().zip(answers) {
        match answer {
            Ok(choice) => labels.insert(&ex.id, choice, Provenance::LlmSeed, 1.0),
            Err(LlmError::Unparseable { raw }) => {
                warn!(id = %ex.id, %raw, "dropping seed example with unparseable answer");
                dropped.push(ex.id.clone());
            }
            Err(e) => {
                failure.get_or_insert(e);
            }
        }
    }
    if let Some(cause) = failure {
        return Err(Error::EndpointUnreachable {
            completed: labels.len() + dropped.len(),
            requested: seed.len(),
            cause: Box::new(cause),
            partial: Box::new(labels),
        });
    }
    if !dropped.is_empty() {
        warn!(dropped = dropped.len(), "seed examples dropped");
    }
    Ok(SeedLabeling {
        labels,
        dropped,
        calls: requests.len(),
    })
}
