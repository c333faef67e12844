//! Two-layer single-head graph attention network with a linear 2-class head,
//! and its hand-derived reverse pass.
//!
//! Per layer, with `z = H W`:
//!
//! ```text
//! u_ij = a_src · z_i + a_dst · z_j          for j in N(i) = pos(i) ∪ {i}
//! α_ij = softmax_j LeakyReLU(u_ij)
//! out_i = Σ_j α_ij z_j
//! ```
//!
//! Layer 1 is followed by ELU, layer 2 by the identity; logits = h₂ C.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::GlipGraph;

pub const LEAKY_SLOPE: f64 = 0.2;

/// Trainable tensors. Attention matrices are `2 × hidden`: row 0 scores the
/// receiving node, row 1 the sending node.
#[derive(Debug, Clone, PartialEq)]
pub struct GatParams {
    pub w1: Array2<f64>,
    pub att1: Array2<f64>,
    pub w2: Array2<f64>,
    pub att2: Array2<f64>,
    pub classifier: Array2<f64>,
}

pub const PARAM_NAMES: [&str; 5] = [
    "layer1.weight",
    "layer1.attention",
    "layer2.weight",
    "layer2.attention",
    "classifier.weight",
];

impl GatParams {
    pub fn zeros_like(other: &GatParams) -> Self {
        GatParams {
            w1: Array2::zeros(other.w1.raw_dim()),
            att1: Array2::zeros(other.att1.raw_dim()),
            w2: Array2::zeros(other.w2.raw_dim()),
            att2: Array2::zeros(other.att2.raw_dim()),
            classifier: Array2::zeros(other.classifier.raw_dim()),
        }
    }

    pub fn tensors(&self) -> [&Array2<f64>; 5] {
        [&self.w1, &self.att1, &self.w2, &self.att2, &self.classifier]
    }

    pub fn tensors_mut(&mut self) -> [&mut Array2<f64>; 5] {
        [
            &mut self.w1,
            &mut self.att1,
            &mut self.w2,
            &mut self.att2,
            &mut self.classifier,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatModel {
    pub params: GatParams,
    pub leaky_slope: f64,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
}

impl GatModel {
    /// Glorot-uniform initialization; each tensor draws from its own ChaCha
    /// stream of `seed`.
    pub fn init(d_in: usize, hidden: usize, seed: u64) -> Self {
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        let params = GatParams {
            w1: glorot(&mut stream(0), d_in, hidden, d_in, hidden),
            att1: glorot(&mut stream(1), 2, hidden, 2 * hidden, 1),
            w2: glorot(&mut stream(2), hidden, hidden, hidden, hidden),
            att2: glorot(&mut stream(3), 2, hidden, 2 * hidden, 1),
            classifier: glorot(&mut stream(4), hidden, 2, hidden, 2),
        };
        GatModel {
            params,
            leaky_slope: LEAKY_SLOPE,
        }
    }

    pub fn d_in(&self) -> usize {
        self.params.w1.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.params.w1.ncols()
    }
}

/// Attention neighborhoods in CSR form.
#[derive(Debug, Clone)]
pub struct Neighborhoods {
    pub offsets: Vec<usize>,
    pub targets: Vec<usize>,
}

impl Neighborhoods {
    pub fn of(graph: &GlipGraph) -> Self {
        let lists = graph.attention_neighborhoods();
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for l in lists {
            targets.extend(l);
            offsets.push(targets.len());
        }
        Neighborhoods { offsets, targets }
    }

    fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }
}

/// Intermediates of one attention layer kept for the reverse pass.
#[derive(Debug, Clone)]
struct LayerCache {
    z: Array2<f64>,
    /// Pre-activation attention score per CSR edge.
    u: Vec<f64>,
    alpha: Vec<f64>,
    out: Array2<f64>,
}

fn leaky(u: f64, slope: f64) -> f64 {
    if u > 0.0 {
        u
    } else {
        slope * u
    }
}

fn layer_forward(h: &Array2<f64>, w: &Array2<f64>, att: &Array2<f64>, nb: &Neighborhoods, slope: f64) -> LayerCache {
    let z = h.dot(w);
    let s = z.dot(&att.row(0));
    let t = z.dot(&att.row(1));
    let mut u = vec![0.0; nb.targets.len()];
    let mut alpha = vec![0.0; nb.targets.len()];
    let mut out = Array2::zeros(z.raw_dim());
    for i in 0..nb.n_nodes() {
        let r = nb.range(i);
        let mut max = f64::NEG_INFINITY;
        for e in r.clone() {
            u[e] = s[i] + t[nb.targets[e]];
            max = max.max(leaky(u[e], slope));
        }
        let mut denom = 0.0;
        for e in r.clone() {
            alpha[e] = (leaky(u[e], slope) - max).exp();
            denom += alpha[e];
        }
        let mut row = out.row_mut(i);
        for e in r {
            alpha[e] /= denom;
            row.scaled_add(alpha[e], &z.row(nb.targets[e]));
        }
    }
    LayerCache { z, u, alpha, out }
}

/// Returns `(dW, dAtt, dH)` given the gradient of the layer output.
fn layer_backward(
    h: &Array2<f64>,
    w: &Array2<f64>,
    att: &Array2<f64>,
    nb: &Neighborhoods,
    slope: f64,
    cache: &LayerCache,
    d_out: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let z = &cache.z;
    let n = nb.n_nodes();
    let mut dz = Array2::zeros(z.raw_dim());
    let mut ds = Array1::<f64>::zeros(n);
    let mut dt = Array1::<f64>::zeros(n);
    let mut dalpha = Vec::new();
    for i in 0..n {
        let r = nb.range(i);
        let go: ArrayView1<'_, f64> = d_out.row(i);
        dalpha.clear();
        let mut weighted = 0.0;
        for e in r.clone() {
            let j = nb.targets[e];
            dz.row_mut(j).scaled_add(cache.alpha[e], &go);
            let da = go.dot(&z.row(j));
            weighted += cache.alpha[e] * da;
            dalpha.push(da);
        }
        for (k, e) in r.enumerate() {
            let de = cache.alpha[e] * (dalpha[k] - weighted);
            let du = if cache.u[e] > 0.0 { de } else { slope * de };
            ds[i] += du;
            dt[nb.targets[e]] += du;
        }
    }
    let a_src = att.row(0);
    let a_dst = att.row(1);
    for i in 0..n {
        let mut row = dz.row_mut(i);
        row.scaled_add(ds[i], &a_src);
        row.scaled_add(dt[i], &a_dst);
    }
    let mut datt = Array2::zeros(att.raw_dim());
    datt.row_mut(0).assign(&z.t().dot(&ds));
    datt.row_mut(1).assign(&z.t().dot(&dt));
    let dw = h.t().dot(&dz);
    let dh = dz.dot(&w.t());
    (dw, datt, dh)
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Everything the reverse pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    layer1: LayerCache,
    h1: Array2<f64>,
    layer2: LayerCache,
    /// Post-layer-2 node embeddings.
    pub hidden: Array2<f64>,
    pub logits: Array2<f64>,
}

pub fn forward_pass(model: &GatModel, features: &Array2<f64>, nb: &Neighborhoods) -> ForwardPass {
    let p = &model.params;
    let layer1 = layer_forward(features, &p.w1, &p.att1, nb, model.leaky_slope);
    let h1 = layer1.out.mapv(elu);
    let layer2 = layer_forward(&h1, &p.w2, &p.att2, nb, model.leaky_slope);
    let hidden = layer2.out.clone();
    let logits = hidden.dot(&p.classifier);
    ForwardPass {
        layer1,
        h1,
        layer2,
        hidden,
        logits,
    }
}

/// `(hidden, logits)` for every node of `graph`.
pub fn gat_forward(model: &GatModel, graph: &GlipGraph) -> (Array2<f64>, Array2<f64>) {
    let fp = forward_pass(model, &graph.features, &Neighborhoods::of(graph));
    (fp.hidden, fp.logits)
}

/// Parameter gradients given upstream gradients on the logits and on the
/// hidden embeddings (the latter from losses defined on `hidden` directly).
pub fn backward_pass(
    model: &GatModel,
    features: &Array2<f64>,
    nb: &Neighborhoods,
    fp: &ForwardPass,
    d_logits: &Array2<f64>,
    d_hidden_extra: &Array2<f64>,
) -> GatParams {
    let p = &model.params;
    let classifier = fp.hidden.t().dot(d_logits);
    let d_hidden = d_logits.dot(&p.classifier.t()) + d_hidden_extra;
    let (w2, att2, d_h1) = layer_backward(&fp.h1, &p.w2, &p.att2, nb, model.leaky_slope, &fp.layer2, &d_hidden);
    let mut d_pre1 = d_h1;
    d_pre1.zip_mut_with(&fp.layer1.out, |d, &x| *d *= elu_grad(x));
    let (w1, att1, _) = layer_backward(features, &p.w1, &p.att1, nb, model.leaky_slope, &fp.layer1, &d_pre1);
    GatParams {
        w1,
        att1,
        w2,
        att2,
        classifier,
    }
}

/// Row-wise softmax over the two logits.
pub fn class_probabilities(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.axis_iter_mut(Axis(0)) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    p
}
