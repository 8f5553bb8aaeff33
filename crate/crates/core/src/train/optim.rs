use serde::{Deserialize, Serialize};

use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone)]
struct Moments {
    m: Tensor,
    v: Tensor,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    state: Vec<Option<Moments>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            state: Vec::new(),
        }
    }

    /// Apply one update from `grads`, which must hold at most one entry
    /// per parameter.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)]) {
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (id, g) in grads {
                    let p = store.get_mut(*id);
                    for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= self.lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (self.beta1, self.beta2);
                let c1 = 1.0 - b1.powi(self.t);
                let c2 = 1.0 - b2.powi(self.t);
                for (id, g) in grads {
                    let i = id.index();
                    if self.state.len() <= i {
                        self.state.resize(i + 1, None);
                    }
                    let st = self.state[i].get_or_insert_with(|| Moments {
                        m: Tensor::zeros(g.shape().to_vec()),
                        v: Tensor::zeros(g.shape().to_vec()),
                    });
                    let p = store.get_mut(*id);
                    let iter = p
                        .data_mut()
                        .iter_mut()
                        .zip(st.m.data_mut().iter_mut())
                        .zip(st.v.data_mut().iter_mut())
                        .zip(g.data());
                    for (((w, m), v), d) in iter {
                        *m = b1 * *m + (1.0 - b1) * d;
                        *v = b2 * *v + (1.0 - b2) * d * d;
                        *w -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let id = store.add("w", "t", Tensor::new(vec![2], vec![1.0, -1.0]).unwrap());
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1);
        opt.step(&mut store, &[(id, Tensor::new(vec![2], vec![3.0, -0.5]).unwrap())]);
        let w = store.get(id).data();
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] + 0.9).abs() < 1e-6, "{w:?}");
    }

    #[test]
    fn sgd_step() {
        let mut store = ParamStore::new();
        let id = store.add("w", "t", Tensor::scalar(1.0));
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.5);
        opt.step(&mut store, &[(id, Tensor::scalar(2.0))]);
        assert_eq!(store.get(id).item(), 0.0);
    }
}
