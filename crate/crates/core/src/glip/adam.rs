use ndarray::Array2;

use super::gat::GatParams;

/// Adam with bias correction over the GAT parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: GatParams,
    pub v: GatParams,
}

impl Adam {
    pub fn new(params: &GatParams, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: GatParams::zeros_like(params),
            v: GatParams::zeros_like(params),
        }
    }

    /// Applies one update. Tensors whose `frozen` flag is set are left alone
    /// (their moments are not advanced either).
    pub fn update(&mut self, params: &mut GatParams, grads: &GatParams, frozen: [bool; 5]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let tensors = params.tensors_mut().into_iter();
        let ms = self.m.tensors_mut().into_iter();
        let vs = self.v.tensors_mut().into_iter();
        for ((((p, g), m), v), skip) in tensors.zip(grads.tensors()).zip(ms).zip(vs).zip(frozen) {
            if skip {
                continue;
            }
            step_tensor(p, g, m, v, b1, b2, lr, eps, c1, c2);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn step_tensor(
    p: &mut Array2<f64>,
    g: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    b1: f64,
    b2: f64,
    lr: f64,
    eps: f64,
    c1: f64,
    c2: f64,
) {
    ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    });
}
