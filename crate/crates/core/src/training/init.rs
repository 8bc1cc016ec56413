use ljp_tensor::{Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fan-in/fan-out of a shape: a matrix uses its two dims; higher ranks use
/// the first dim against the product of the trailing dims.
fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (*n, *n),
        [a, rest @ ..] => (*a, rest.iter().product()),
    }
}

/// Uniform draws in `±√(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<F: Real>(shape: &[usize], rng: &mut impl Rng) -> Tensor<F> {
    let (fan_in, fan_out) = fans(shape);
    let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| F::c(rng.gen_range(-bound..=bound))).collect();
    Tensor::from_vec(shape, data).expect("shape matches count")
}

pub fn glorot_init<F: Real>(shape: &[usize], seed: u64) -> Tensor<F> {
    glorot_uniform(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}
