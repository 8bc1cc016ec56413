use std::collections::HashMap;
use std::path::Path;

use ljp_tensor::{ParamId, ParamStore, Real, Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::PAD;
use crate::error::{read_to_string, Error, Result};
use crate::training::{glorot_uniform, mix};

/// Word vectors read from a text file.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

/// Parses `token v1 ... vd` lines. Every line must have the same dimension.
pub fn load_embedding_file(path: &Path) -> Result<EmbeddingTable> {
    let text = read_to_string(path)?;
    let mut vectors = HashMap::new();
    let mut dim = None;
    for (n, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values = parts
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Argument(format!("{}:{}: {e}", path.display(), n + 1)))?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::Argument(format!(
                    "{}:{}: expected {d} values, found {}",
                    path.display(),
                    n + 1,
                    values.len()
                )))
            }
            _ => {}
        }
        vectors.insert(token.to_string(), values);
    }
    Ok(EmbeddingTable {
        dim: dim.unwrap_or(0),
        vectors,
    })
}

/// `V × d` lookup table whose PAD row is always zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        vocab: usize,
        dim: usize,
        trainable: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dim == 0 || vocab == 0 {
            return Err(Error::Argument("embedding needs a positive vocabulary and dimension".into()));
        }
        let mut w: Tensor<F> = glorot_uniform(&[vocab, dim], rng);
        w.data_mut()[PAD * dim..(PAD + 1) * dim].fill(F::zero());
        let table = store.add(name, w, trainable)?;
        Ok(Embedding { table, vocab, dim })
    }

    /// Overwrites rows of tokens found in `table`. Returns how many matched.
    pub fn load_pretrained<F: Real>(
        &self,
        store: &mut ParamStore<F>,
        tokens: &[String],
        table: &EmbeddingTable,
    ) -> Result<usize> {
        if table.dim != self.dim {
            return Err(Error::Argument(format!(
                "embedding file has dimension {}, model uses {}",
                table.dim, self.dim
            )));
        }
        let w = store.value_mut(self.table);
        let mut hits = 0;
        for (i, tok) in tokens.iter().enumerate() {
            if i == PAD || i >= self.vocab {
                continue;
            }
            if let Some(v) = table.vectors.get(tok) {
                for (dst, &src) in w.data_mut()[i * self.dim..(i + 1) * self.dim].iter_mut().zip(v) {
                    *dst = F::c(src);
                }
                hits += 1;
            }
        }
        Ok(hits)
    }

    /// Redraws each row from a generator keyed by its token, so a token gets
    /// the same vector under any vocabulary of the same size. Rows past
    /// `tokens` and the PAD row are left alone.
    pub fn key_rows<F: Real>(&self, store: &mut ParamStore<F>, tokens: &[String], seed: u64) {
        let bound = (6.0 / (self.vocab + self.dim) as f64).sqrt();
        let w = store.value_mut(self.table);
        for (i, tok) in tokens.iter().enumerate().take(self.vocab) {
            if i == PAD {
                continue;
            }
            let key = tok.bytes().enumerate().fold(seed, |h, (j, b)| mix(h, b as u64, j as u64));
            let mut rng = ChaCha8Rng::seed_from_u64(key);
            for dst in &mut w.data_mut()[i * self.dim..(i + 1) * self.dim] {
                *dst = F::c(rng.gen_range(-bound..=bound));
            }
        }
    }

    /// `T × d` matrix of the rows of `ids`.
    pub fn embed<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, ids: &[usize]) -> Result<Var> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab) {
            return Err(TensorError::Index {
                index: bad,
                bound: self.vocab,
            }
            .into());
        }
        let rows: Vec<Option<usize>> = ids.iter().map(|&i| (i != PAD).then_some(i)).collect();
        Ok(tape.gather_param(store, self.table, &rows)?)
    }
}
