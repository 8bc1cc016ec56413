//! Neural layers shared by every architecture. Each layer registers its
//! parameters in a [`ParamStore`](ljp_tensor::ParamStore) at construction and
//! records its forward pass on a caller-owned tape.

mod attention;
mod embedding;
mod gru;
mod transformer;

use ljp_tensor::{Real, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use attention::{AttentionPool, LabelWiseAttention};
pub use embedding::{load_embedding_file, Embedding, EmbeddingTable};
pub use gru::{BiGru, Gru, StackedBiGru};
pub use transformer::{Encoded, TransformerBlock, TransformerConfig, TransformerEncoder};

use crate::error::Result;

/// Inverted dropout with a freshly drawn constant mask. Identity when `rate`
/// is zero or no generator is given (inference).
pub fn dropout<F: Real>(tape: &mut Tape<F>, x: Var, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    if rate <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - rate;
    let shape = tape.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let mask: Vec<F> = (0..n)
        .map(|_| if rng.gen_bool(keep) { F::c(1.0 / keep) } else { F::zero() })
        .collect();
    let m = tape.constant(Tensor::from_vec(&shape, mask)?);
    Ok(tape.mul(x, m)?)
}

/// `x · W + b` for a `T × in` input.
pub(crate) fn affine<F: Real>(tape: &mut Tape<F>, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    Ok(tape.add(xw, b)?)
}
