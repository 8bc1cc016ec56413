use ljp_tensor::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{affine, Embedding};
use crate::error::{Error, Result};
use crate::training::glorot_uniform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub max_positions: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            layers: 4,
            heads: 4,
            model_dim: 128,
            ff_dim: 256,
            max_positions: 512,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.model_dim == 0 || self.ff_dim == 0 || self.max_positions == 0 {
            return Err(Error::Config("transformer dimensions must be positive".into()));
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model dim {} is not divisible by {} heads",
                self.model_dim, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Linear {
    w: ParamId,
    b: Option<ParamId>,
}

impl Linear {
    fn new<F: Real>(store: &mut ParamStore<F>, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Linear {
            w: store.add(format!("{name}.w"), glorot_uniform(&[input, output], rng), true)?,
            b: Some(store.add(format!("{name}.b"), Tensor::zeros(&[1, output]), true)?),
        })
    }

    fn without_bias<F: Real>(store: &mut ParamStore<F>, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Linear {
            w: store.add(format!("{name}.w"), glorot_uniform(&[input, output], rng), true)?,
            b: None,
        })
    }

    fn apply<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        match self.b {
            Some(b) => {
                let b = tape.param(store, b);
                affine(tape, x, w, b)
            }
            None => Ok(tape.matmul(x, w)?),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

impl Norm {
    fn new<F: Real>(store: &mut ParamStore<F>, name: &str, dim: usize) -> Result<Self> {
        Ok(Norm {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[1, dim], F::one()), true)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[1, dim]), true)?,
        })
    }

    fn apply<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        let (g, b) = (tape.param(store, self.gain), tape.param(store, self.bias));
        Ok(tape.layer_norm(x, g, b)?)
    }
}

/// Pre-norm encoder block: multi-head self-attention and a GELU feed-forward
/// layer, each wrapped in a residual connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformerBlock {
    pub heads: usize,
    pub model_dim: usize,
    norm_attn: Norm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    norm_ff: Norm,
    ff_in: Linear,
    ff_out: Linear,
}

impl TransformerBlock {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, cfg: &TransformerConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let m = cfg.model_dim;
        Ok(TransformerBlock {
            heads: cfg.heads,
            model_dim: m,
            norm_attn: Norm::new(store, &format!("{name}.ln1"), m)?,
            q: Linear::new(store, &format!("{name}.q"), m, m, rng)?,
            // A key bias shifts every score of a query equally; softmax ignores it.
            k: Linear::without_bias(store, &format!("{name}.k"), m, m, rng)?,
            v: Linear::new(store, &format!("{name}.v"), m, m, rng)?,
            o: Linear::new(store, &format!("{name}.o"), m, m, rng)?,
            norm_ff: Norm::new(store, &format!("{name}.ln2"), m)?,
            ff_in: Linear::new(store, &format!("{name}.ff1"), m, cfg.ff_dim, rng)?,
            ff_out: Linear::new(store, &format!("{name}.ff2"), cfg.ff_dim, m, rng)?,
        })
    }

    /// `T × m` → `T × m`, plus each head's `T × T` attention probabilities.
    /// Keys with `mask[j] == false` receive zero attention.
    pub fn forward<F: Real>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        x: Var,
        mask: Option<&[bool]>,
    ) -> Result<(Var, Vec<Var>)> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.model_dim {
            return Err(Error::Argument(format!("block expects T × {}, got {shape:?}", self.model_dim)));
        }
        let a = self.norm_attn.apply(tape, store, x)?;
        let q = self.q.apply(tape, store, a)?;
        let k = self.k.apply(tape, store, a)?;
        let v = self.v.apply(tape, store, a)?;
        let dh = self.model_dim / self.heads;
        let scale = F::c(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(self.heads);
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = tape.slice(q, 1, lo, hi)?;
            let kh = tape.slice(k, 1, lo, hi)?;
            let vh = tape.slice(v, 1, lo, hi)?;
            let kt = tape.transpose(kh)?;
            let s = tape.matmul(qh, kt)?;
            let s = tape.scale(s, scale);
            let p = tape.softmax(s, mask)?;
            outs.push(tape.matmul(p, vh)?);
            probs.push(p);
        }
        let cat = if outs.len() == 1 { outs[0] } else { tape.concat(&outs, 1)? };
        let attn = self.o.apply(tape, store, cat)?;
        let x1 = tape.add(x, attn)?;
        let f = self.norm_ff.apply(tape, store, x1)?;
        let f = self.ff_in.apply(tape, store, f)?;
        let f = tape.gelu(f)?;
        let f = self.ff_out.apply(tape, store, f)?;
        Ok((tape.add(x1, f)?, probs))
    }
}

/// Token + learned position embeddings, a stack of blocks and a final norm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformerEncoder {
    pub config: TransformerConfig,
    positions: ParamId,
    blocks: Vec<TransformerBlock>,
    final_norm: Norm,
}

/// Output of [`TransformerEncoder::encode`].
pub struct Encoded {
    pub states: Var,
    /// Per layer, per head `T × T` probabilities.
    pub attention: Vec<Vec<Var>>,
}

impl TransformerEncoder {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, cfg: TransformerConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let positions = store.add(
            format!("{name}.pos"),
            glorot_uniform(&[cfg.max_positions, cfg.model_dim], rng),
            true,
        )?;
        let blocks = (0..cfg.layers)
            .map(|l| TransformerBlock::new(store, &format!("{name}.block{l}"), &cfg, rng))
            .collect::<Result<Vec<_>>>()?;
        let final_norm = Norm::new(store, &format!("{name}.ln_f"), cfg.model_dim)?;
        Ok(TransformerEncoder {
            config: cfg,
            positions,
            blocks,
            final_norm,
        })
    }

    /// Encodes token ids. Sequences longer than `max_positions` are an error;
    /// callers truncate first.
    pub fn encode<F: Real>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        embedding: &Embedding,
        ids: &[usize],
        mask: Option<&[bool]>,
    ) -> Result<Encoded> {
        self.encode_with(tape, store, embedding, ids, mask, |_, x| Ok(x))
    }

    /// As [`encode`](Self::encode), applying `post` to the summed token and
    /// position embeddings before the first block.
    pub fn encode_with<F: Real>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        embedding: &Embedding,
        ids: &[usize],
        mask: Option<&[bool]>,
        post: impl FnOnce(&mut Tape<F>, Var) -> Result<Var>,
    ) -> Result<Encoded> {
        let t = ids.len();
        if t == 0 {
            return Err(Error::Argument("empty sequence".into()));
        }
        if t > self.config.max_positions {
            return Err(Error::Length {
                len: t,
                max: self.config.max_positions,
            });
        }
        if embedding.dim != self.config.model_dim {
            return Err(Error::Config(format!(
                "embedding dim {} differs from model dim {}",
                embedding.dim, self.config.model_dim
            )));
        }
        let tok = embedding.embed(tape, store, ids)?;
        let pos = tape.param(store, self.positions);
        let pos = tape.slice(pos, 0, 0, t)?;
        let x = tape.add(tok, pos)?;
        let mut x = post(tape, x)?;
        let mut attention = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, p) = b.forward(tape, store, x, mask)?;
            x = y;
            attention.push(p);
        }
        let states = self.final_norm.apply(tape, store, x)?;
        Ok(Encoded { states, attention })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> TransformerConfig {
        TransformerConfig {
            layers: 2,
            heads: 2,
            model_dim: 4,
            ff_dim: 6,
            max_positions: 5,
        }
    }

    #[test]
    fn block_keeps_shape_and_rows_sum_to_one() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let block = TransformerBlock::new(&mut store, "b", &small(), &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(glorot_uniform(&[3, 4], &mut rng));
        let (y, probs) = block.forward(&mut tape, &store, x, Some(&[true, true, false])).unwrap();
        assert_eq!(tape.shape(y), &[3, 4]);
        for p in probs {
            let v = tape.value(p);
            for r in 0..3 {
                assert!((v.row_slice(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert_eq!(v.get2(r, 2), 0.0);
            }
        }
    }

    #[test]
    fn too_long_is_a_length_error() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let emb = Embedding::new(&mut store, "emb", 10, 4, true, &mut rng).unwrap();
        let enc = TransformerEncoder::new(&mut store, "enc", small(), &mut rng).unwrap();
        let mut tape = Tape::new();
        assert!(enc.encode(&mut tape, &store, &emb, &[2; 5], None).is_ok());
        assert!(matches!(
            enc.encode(&mut tape, &store, &emb, &[2; 6], None),
            Err(Error::Length { len: 6, max: 5 })
        ));
    }

    #[test]
    fn heads_must_divide_model_dim() {
        let cfg = TransformerConfig { heads: 3, ..small() };
        assert!(cfg.validate().is_err());
        assert_eq!(TransformerConfig::default().max_positions, 512);
    }
}
