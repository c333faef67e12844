use serde::{Deserialize, Serialize};
use tracing::debug;

use super::adam::Adam;
use super::gat::{backward_pass, class_probabilities, forward_pass, gat_forward, GatModel, GatParams, Neighborhoods};
use super::graph::GlipGraph;
use super::loss::{cross_entropy, mec_loss};
use crate::config::{MecForm, RunConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::labels::{Provenance, PseudoLabeledSet};

/// Which parameter tensors receive updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trainable {
    #[default]
    All,
    /// Attention layers stay at their initialization.
    ClassifierOnly,
}

impl Trainable {
    fn frozen(self) -> [bool; 5] {
        match self {
            Trainable::All => [false; 5],
            Trainable::ClassifierOnly => [true, true, true, true, false],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlipConfig {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub lambda_mec: f64,
    pub mec_form: MecForm,
    pub seed: u64,
    pub trainable: Trainable,
}

impl Default for GlipConfig {
    fn default() -> Self {
        GlipConfig::from_run(&RunConfig::default())
    }
}

impl GlipConfig {
    pub fn from_run(cfg: &RunConfig) -> Self {
        GlipConfig {
            hidden: cfg.gat_hidden,
            lr: cfg.lr,
            epochs: cfg.epochs,
            lambda_mec: cfg.lambda_mec,
            mec_form: cfg.mec_form,
            seed: cfg.seed,
            trainable: Trainable::All,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub ce: f64,
    pub mec: f64,
}

impl LossParts {
    fn is_finite(&self) -> bool {
        self.total.is_finite() && self.ce.is_finite() && self.mec.is_finite()
    }
}

/// `L = L_CE + λ·L_MEC` and its exact gradient with respect to every parameter.
pub fn loss_and_gradients(
    model: &GatModel,
    graph: &GlipGraph,
    nb: &Neighborhoods,
    lambda_mec: f64,
    mec_form: MecForm,
) -> (LossParts, GatParams) {
    let fp = forward_pass(model, &graph.features, nb);
    let (ce, d_logits) = cross_entropy(&fp.logits, &graph.labels);
    let (mec, mut d_hidden) = mec_loss(&fp.hidden, &graph.neg_edges, mec_form);
    d_hidden *= lambda_mec;
    let grads = backward_pass(model, &graph.features, nb, &fp, &d_logits, &d_hidden);
    let parts = LossParts {
        total: ce + lambda_mec * mec,
        ce,
        mec,
    };
    (parts, grads)
}

/// Loss value only, for finite-difference checks.
pub fn loss_value(model: &GatModel, graph: &GlipGraph, nb: &Neighborhoods, lambda_mec: f64, mec_form: MecForm) -> LossParts {
    let fp = forward_pass(model, &graph.features, nb);
    let ce = cross_entropy(&fp.logits, &graph.labels).0;
    let mec = mec_loss(&fp.hidden, &graph.neg_edges, mec_form).0;
    LossParts {
        total: ce + lambda_mec * mec,
        ce,
        mec,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub optimizer: Adam,
    /// Loss at the start of each completed epoch.
    pub history: Vec<LossParts>,
}

/// Full-batch training for `cfg.epochs` Adam steps.
pub fn train_glip(graph: &GlipGraph, cfg: &GlipConfig) -> Result<(GatModel, TrainState)> {
    if graph.n_labeled_nodes() == 0 {
        return Err(Error::Validation("propagation graph has no labeled nodes".into()));
    }
    let mut model = GatModel::init(graph.features.ncols(), cfg.hidden, cfg.seed);
    let nb = Neighborhoods::of(graph);
    let mut state = TrainState {
        optimizer: Adam::new(&model.params, cfg.lr),
        history: Vec::with_capacity(cfg.epochs),
    };
    for epoch in 0..cfg.epochs {
        let (parts, grads) = loss_and_gradients(&model, graph, &nb, cfg.lambda_mec, cfg.mec_form);
        if !parts.is_finite() || !grads.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                total: parts.total,
                ce: parts.ce,
                mec: parts.mec,
            });
        }
        debug!(epoch, total = parts.total, ce = parts.ce, mec = parts.mec, "glip epoch");
        state.optimizer.update(&mut model.params, &grads, cfg.trainable.frozen());
        state.history.push(parts);
    }
    Ok((model, state))
}

/// For each example of `examples`, the choice whose node has the largest
/// positive-class logit (ties to the lower index). The score is that node's
/// positive-class probability.
pub fn predict_labels(model: &GatModel, graph: &GlipGraph, examples: &Dataset) -> Result<PseudoLabeledSet> {
    let (_, logits) = gat_forward(model, graph);
    let probs = class_probabilities(&logits);
    let mut out = PseudoLabeledSet::new();
    for ex in &examples.examples {
        let e = graph
            .example_ids
            .iter()
            .position(|id| id == &ex.id)
            .ok_or_else(|| Error::Validation(format!("example {:?} is not in the propagation graph", ex.id)))?;
        let nodes = graph.nodes_of(e);
        let base = nodes.start;
        let best = nodes
            .max_by(|&a, &b| logits[(a, 1)].total_cmp(&logits[(b, 1)]).then(b.cmp(&a)))
            .expect("examples have at least one choice");
        out.insert(&ex.id, best - base, Provenance::Glip, probs[(best, 1)]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Example, Role};
    use ndarray::{array, Array2};
    use std::collections::HashMap;

    fn ds(counts: &[usize]) -> Dataset {
        let ex = counts
            .iter()
            .enumerate()
            .map(|(i, &n)| Example::new(format!("e{i}"), "q", (0..n).map(|c| c.to_string()).collect(), None).unwrap())
            .collect();
        Dataset::new(Role::TargetUnlabeled, "t", "", ex).unwrap()
    }

    fn graph_with_logits(counts: &[usize], class1: &[f64]) -> (GatModel, GlipGraph) {
        // one-hot features per node + identity-like weights lets the test set
        // the class-1 logit of each node directly
        let n: usize = counts.iter().sum();
        let features = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 1.0 } else { 0.0 });
        let g = GlipGraph::from_parts(features, (0..counts.len()).map(|i| format!("e{i}")).collect(), counts, &HashMap::new(), &[]).unwrap();
        let mut m = GatModel::init(n, n, 0);
        m.params.w1 = Array2::eye(n) * 10.0;
        m.params.w2 = Array2::eye(n) * 0.1;
        m.params.att1.fill(0.0);
        m.params.att2.fill(0.0);
        let mut c = Array2::zeros((n, 2));
        for (i, &v) in class1.iter().enumerate() {
            c[(i, 1)] = v;
        }
        m.params.classifier = c;
        (m, g)
    }

    #[test]
    fn argmax_of_positive_logit() {
        let (m, g) = graph_with_logits(&[3], &[0.2, 0.9, 0.1]);
        let p = predict_labels(&m, &g, &ds(&[3])).unwrap();
        assert_eq!(p.get("e0").unwrap().choice, 1);
        assert_eq!(p.get("e0").unwrap().provenance, Provenance::Glip);
    }

    #[test]
    fn ties_and_single_choice() {
        let (m, g) = graph_with_logits(&[3, 1], &[0.5, 0.5, 0.1, -4.0]);
        let p = predict_labels(&m, &g, &ds(&[3, 1])).unwrap();
        assert_eq!(p.get("e0").unwrap().choice, 0);
        assert_eq!(p.get("e1").unwrap().choice, 0);
        let s = p.get("e1").unwrap().score;
        assert!(s > 0.0 && s < 1.0);
    }

    #[test]
    fn refuses_unlabeled_graph() {
        let g = GlipGraph::from_parts(array![[1.0], [2.0]], vec!["a".into()], &[2], &HashMap::new(), &[]).unwrap();
        assert!(train_glip(&g, &GlipConfig::default()).is_err());
    }

    #[test]
    fn records_one_loss_per_epoch() {
        let mut labels = HashMap::new();
        labels.insert(0, 1);
        let g = GlipGraph::from_parts(
            array![[1.0, 0.2], [0.1, 1.0], [0.9, 0.3], [0.2, 0.8]],
            vec!["a".into(), "b".into()],
            &[2, 2],
            &labels,
            &[(0, 2), (1, 3)],
        )
        .unwrap();
        let cfg = GlipConfig { hidden: 8, epochs: 7, ..GlipConfig::default() };
        let (m, state) = train_glip(&g, &cfg).unwrap();
        assert_eq!(state.history.len(), 7);
        assert_eq!(state.optimizer.step, 7);
        assert!(m.params.is_finite());
        let (m2, state2) = train_glip(&g, &cfg).unwrap();
        assert_eq!((m, state), (m2, state2));
    }

    #[test]
    fn divergent_training_aborts() {
        let mut labels = HashMap::new();
        labels.insert(0, 1);
        let g = GlipGraph::from_parts(array![[f64::NAN, 1.0], [1.0, 1.0]], vec!["a".into()], &[2], &labels, &[]).unwrap();
        let cfg = GlipConfig { hidden: 4, epochs: 3, ..GlipConfig::default() };
        assert!(matches!(train_glip(&g, &cfg), Err(Error::NonFiniteLoss { epoch: 0, .. })));
    }

    #[test]
    fn classifier_only_pure_ce_fits_separable_nodes() {
        // two choices per example: the labeled-positive node sits at +x, the other at -x
        let n_ex = 10;
        let mut labels = HashMap::new();
        let features = Array2::from_shape_fn((2 * n_ex, 2), |(i, j)| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            if j == 0 {
                sign
            } else {
                0.1 * (i as f64).sin()
            }
        });
        for e in 0..n_ex {
            labels.insert(e, 0);
        }
        let ids = (0..n_ex).map(|e| format!("e{e}")).collect();
        let g = GlipGraph::from_parts(features, ids, &vec![2; n_ex], &labels, &[]).unwrap();
        let cfg = GlipConfig {
            hidden: 16,
            lr: 0.05,
            epochs: 400,
            lambda_mec: 0.0,
            trainable: Trainable::ClassifierOnly,
            ..GlipConfig::default()
        };
        let (m, state) = train_glip(&g, &cfg).unwrap();
        let first = state.history[0].ce;
        let last = state.history.last().unwrap().ce;
        assert!(last < 0.05 && last < first, "ce {first} -> {last}");
        let init = GatModel::init(2, 16, cfg.seed);
        assert_eq!(m.params.w1, init.params.w1);
        assert_eq!(m.params.att2, init.params.att2);
        assert_ne!(m.params.classifier, init.params.classifier);
    }

    #[test]
    fn reversing_choice_order_maps_back_to_the_same_texts() {
        use crate::glip::build_glip_graph;
        use crate::synth::{pair_cluster_task, PairClusterSpec};

        let task = pair_cluster_task(&PairClusterSpec {
            n_examples: 40,
            ..PairClusterSpec::default()
        })
        .unwrap();
        let cfg = GlipConfig { hidden: 16, ..GlipConfig::default() };
        let predict = |seed: &Dataset, unl: &Dataset, feats: &Array2<f64>| {
            let mut labels = PseudoLabeledSet::new();
            for e in &seed.examples {
                labels.insert(&e.id, e.gold_label.unwrap(), Provenance::Gold, 1.0);
            }
            let g = build_glip_graph(&labels, seed, unl, feats, 5).unwrap();
            let (m, _) = train_glip(&g, &cfg).unwrap();
            let p = predict_labels(&m, &g, unl).unwrap();
            unl.examples
                .iter()
                .map(|e| e.choices[p.get(&e.id).unwrap().choice].clone())
                .collect::<Vec<_>>()
        };
        let reverse = |ds: &Dataset| {
            let mut ds = ds.clone();
            for e in &mut ds.examples {
                e.choices.reverse();
                e.gold_label = e.gold_label.map(|g| e.choices.len() - 1 - g);
            }
            ds
        };
        let k = task.seed.examples[0].n_choices();
        let rows: Vec<usize> = (0..task.pair_features.nrows()).map(|r| r - r % k + (k - 1 - r % k)).collect();
        let flipped = task.pair_features.select(ndarray::Axis(0), &rows);
        assert_eq!(
            predict(&task.seed, &task.unlabeled, &task.pair_features),
            predict(&reverse(&task.seed), &reverse(&task.unlabeled), &flipped)
        );
    }
}
