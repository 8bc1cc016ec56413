use ljp_tensor::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use rand::Rng;

use super::affine;
use crate::error::{Error, Result};
use crate::training::glorot_uniform;

fn check_mask(t: usize, mask: Option<&[bool]>) -> Result<()> {
    if let Some(m) = mask {
        if m.len() != t {
            return Err(Error::Argument(format!("mask of length {} for {t} positions", m.len())));
        }
        if !m.iter().any(|&k| k) {
            return Err(Error::Argument("every position is masked".into()));
        }
    }
    Ok(())
}

/// Self-attention pooling: `sᵢ = uᵀ tanh(W hᵢ + b)`, `a = softmax(s)`,
/// `h = Σ aᵢ hᵢ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionPool {
    pub input: usize,
    pub context: usize,
    pub w: ParamId,
    pub b: ParamId,
    pub u: ParamId,
}

impl AttentionPool {
    /// Context dimension defaults to the input dimension.
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, input: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::with_context(store, name, input, input, rng)
    }

    pub fn with_context<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        input: usize,
        context: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(AttentionPool {
            input,
            context,
            w: store.add(format!("{name}.w"), glorot_uniform(&[input, context], rng), true)?,
            b: store.add(format!("{name}.b"), Tensor::zeros(&[1, context]), true)?,
            u: store.add(format!("{name}.u"), glorot_uniform(&[context, 1], rng), true)?,
        })
    }

    /// `T × m` → (`1 × m` pooled vector, `1 × T` weights). Masked positions
    /// get weight exactly zero.
    pub fn pool<F: Real>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        h: Var,
        mask: Option<&[bool]>,
    ) -> Result<(Var, Var)> {
        check_mask(tape.shape(h)[0], mask)?;
        let (w, b, u) = (tape.param(store, self.w), tape.param(store, self.b), tape.param(store, self.u));
        let proj = affine(tape, h, w, b)?;
        let act = tape.tanh(proj)?;
        let scores = tape.matmul(act, u)?;
        let scores = tape.transpose(scores)?;
        let a = tape.softmax(scores, mask)?;
        let pooled = tape.matmul(a, h)?;
        Ok((pooled, a))
    }
}

/// One attention distribution per label over a shared projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelWiseAttention {
    pub input: usize,
    pub labels: usize,
    pub w: ParamId,
    pub b: ParamId,
    /// `k × L`; column `l` is the context vector of label `l`.
    pub u: ParamId,
}

impl LabelWiseAttention {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, input: usize, labels: usize, rng: &mut impl Rng) -> Result<Self> {
        if labels == 0 {
            return Err(Error::Argument("label-wise attention needs at least one label".into()));
        }
        Ok(LabelWiseAttention {
            input,
            labels,
            w: store.add(format!("{name}.w"), glorot_uniform(&[input, input], rng), true)?,
            b: store.add(format!("{name}.b"), Tensor::zeros(&[1, input]), true)?,
            u: store.add(format!("{name}.u"), glorot_uniform(&[input, labels], rng), true)?,
        })
    }

    /// `T × m` → (`L × m` label embeddings, `L × T` weights).
    pub fn attend<F: Real>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        h: Var,
        mask: Option<&[bool]>,
    ) -> Result<(Var, Var)> {
        check_mask(tape.shape(h)[0], mask)?;
        let (w, b, u) = (tape.param(store, self.w), tape.param(store, self.b), tape.param(store, self.u));
        let proj = affine(tape, h, w, b)?;
        let act = tape.tanh(proj)?;
        let scores = tape.matmul(act, u)?;
        let scores = tape.transpose(scores)?;
        let a = tape.softmax(scores, mask)?;
        let e = tape.matmul(a, h)?;
        Ok((e, a))
    }
}
