use ljp_tensor::{Gradients, ParamStore, Real, Tensor};
use rand::Rng;

use crate::corpus::{PAD, UNK};
use crate::error::{Error, Result};

pub const DEFAULT_LEARNING_RATE: f64 = 0.001;

/// First and second moment estimates per parameter.
#[derive(Debug, Clone, Default)]
pub struct AdamState<F> {
    m: Vec<Option<Tensor<F>>>,
    v: Vec<Option<Tensor<F>>>,
    pub t: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: DEFAULT_LEARNING_RATE,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Adam { lr, ..Adam::default() }
    }

    /// One bias-corrected update of every trainable parameter. A parameter
    /// without a gradient is treated as having a zero gradient.
    pub fn step<F: Real>(&self, store: &mut ParamStore<F>, grads: &Gradients<F>, state: &mut AdamState<F>) -> Result<()> {
        let n = store.len();
        state.m.resize(n, None);
        state.v.resize(n, None);
        state.t += 1;
        let t = state.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (F::c(self.beta1), F::c(self.beta2));
        let (lr, eps) = (self.lr, F::c(self.eps));
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            if !store.get(id).trainable {
                continue;
            }
            let shape = store.value(id).shape().to_vec();
            let g = grads.param(id);
            if let Some(g) = g {
                if g.shape() != shape.as_slice() {
                    return Err(Error::Argument(format!(
                        "gradient of {} has shape {:?}, parameter has {:?}",
                        store.get(id).name,
                        g.shape(),
                        shape
                    )));
                }
            }
            let i = id.index();
            let m = state.m[i].get_or_insert_with(|| Tensor::zeros(&shape));
            let v = state.v[i].get_or_insert_with(|| Tensor::zeros(&shape));
            let (m, v) = (m.data_mut(), v.data_mut());
            let w = store.value_mut(id).data_mut();
            for k in 0..w.len() {
                let gk = g.map_or(F::zero(), |g| g.data()[k]);
                m[k] = b1 * m[k] + (F::one() - b1) * gk;
                v[k] = b2 * v[k] + (F::one() - b2) * gk * gk;
                let m_hat = m[k] / F::c(c1);
                let v_hat = v[k] / F::c(c2);
                w[k] -= F::c(lr) * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Replaces each non-PAD id by UNK with probability `p`.
pub fn word_dropout(ids: &[usize], p: f64, rng: &mut impl Rng) -> Vec<usize> {
    if p <= 0.0 {
        return ids.to_vec();
    }
    ids.iter()
        .map(|&i| if i != PAD && rng.gen_bool(p.min(1.0)) { UNK } else { i })
        .collect()
}
