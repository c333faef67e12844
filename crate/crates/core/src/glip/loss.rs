//! Objective terms. Each returns its value and the gradient with respect to
//! its input tensor.

use ndarray::{Array2, ArrayView1};

use crate::config::MecForm;
use crate::linalg::{dot, norm};

/// Mean 2-class softmax cross-entropy over nodes with a label.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[Option<u8>]) -> (f64, Array2<f64>) {
    let mut grad = Array2::zeros(logits.raw_dim());
    let n_labeled = labels.iter().filter(|l| l.is_some()).count();
    if n_labeled == 0 {
        return (0.0, grad);
    }
    let scale = 1.0 / n_labeled as f64;
    let mut loss = 0.0;
    for (i, label) in labels.iter().enumerate() {
        let Some(y) = *label else { continue };
        let (a, b) = (logits[(i, 0)], logits[(i, 1)]);
        let m = a.max(b);
        let lse = m + ((a - m).exp() + (b - m).exp()).ln();
        let y = y as usize;
        loss += lse - logits[(i, y)];
        for c in 0..2 {
            let p = (logits[(i, c)] - lse).exp();
            grad[(i, c)] = scale * (p - if c == y { 1.0 } else { 0.0 });
        }
    }
    (loss * scale, grad)
}

/// Cosine and its gradients with respect to both arguments. A zero vector
/// gives similarity 0 and zero gradients.
fn cosine_with_grads(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> (f64, Vec<f64>, Vec<f64>) {
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return (0.0, vec![0.0; u.len()], vec![0.0; v.len()]);
    }
    let c = dot(u, v) / (nu * nv);
    let gu = u
        .iter()
        .zip(v.iter())
        .map(|(a, b)| b / (nu * nv) - c * a / (nu * nu))
        .collect();
    let gv = u
        .iter()
        .zip(v.iter())
        .map(|(a, b)| a / (nu * nv) - c * b / (nv * nv))
        .collect();
    (c, gu, gv)
}

/// Mutual-exclusion penalty over within-example node pairs. Defined as 0 when
/// there are no negative edges.
pub fn mec_loss(hidden: &Array2<f64>, neg_edges: &[(usize, usize)], form: MecForm) -> (f64, Array2<f64>) {
    let mut grad = Array2::zeros(hidden.raw_dim());
    if neg_edges.is_empty() {
        return (0.0, grad);
    }
    let scale = 1.0 / neg_edges.len() as f64;
    let mut total = 0.0;
    for &(i, j) in neg_edges {
        let (hi, hj) = (hidden.row(i), hidden.row(j));
        match form {
            MecForm::CosinePenalty => {
                let (c, gi, gj) = cosine_with_grads(hi, hj);
                total += c;
                for (k, (a, b)) in gi.into_iter().zip(gj).enumerate() {
                    grad[(i, k)] += scale * a;
                    grad[(j, k)] += scale * b;
                }
            }
            MecForm::NegatedInnerProduct => {
                total -= dot(hi, hj);
                let (hi, hj) = (hi.to_owned(), hj.to_owned());
                grad.row_mut(i).scaled_add(-scale, &hj);
                grad.row_mut(j).scaled_add(-scale, &hi);
            }
        }
    }
    (total * scale, grad)
}

/// Mean cosine between the endpoints of every negative edge.
pub fn mean_neg_edge_cosine(hidden: &Array2<f64>, neg_edges: &[(usize, usize)]) -> f64 {
    mec_loss(hidden, neg_edges, MecForm::CosinePenalty).0
}
