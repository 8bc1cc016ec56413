use ljp_tensor::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use rand::Rng;

use super::affine;
use crate::error::{Error, Result};
use crate::training::glorot_uniform;

/// One GRU direction. Gate columns are laid out as `[z | r | n]`:
///
/// ```text
/// z  = σ(x·Wz + h·Uz + bz)
/// r  = σ(x·Wr + h·Ur + br)
/// ĥ  = tanh(x·Wn + (r ⊙ h)·Un + bn)
/// h' = (1 − z) ⊙ h + z ⊙ ĥ
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gru {
    pub input: usize,
    pub hidden: usize,
    pub w_x: ParamId,
    pub u_zr: ParamId,
    pub u_n: ParamId,
    pub bias: ParamId,
}

impl Gru {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(Error::Argument("GRU dimensions must be positive".into()));
        }
        Ok(Gru {
            input,
            hidden,
            w_x: store.add(format!("{name}.w_x"), glorot_uniform(&[input, 3 * hidden], rng), true)?,
            u_zr: store.add(format!("{name}.u_zr"), glorot_uniform(&[hidden, 2 * hidden], rng), true)?,
            u_n: store.add(format!("{name}.u_n"), glorot_uniform(&[hidden, hidden], rng), true)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[1, 3 * hidden]), true)?,
        })
    }

    /// Runs over the rows of `x` (`T × input`), right to left when `reverse`.
    /// Returns one `1 × H` state per position, in position order. Positions
    /// with `mask[t] == false` are skipped: the state carries over unchanged
    /// and the output there is a zero row.
    pub fn run<F: Real>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        x: Var,
        mask: Option<&[bool]>,
        reverse: bool,
    ) -> Result<Vec<Var>> {
        let t_len = tape.shape(x)[0];
        if t_len == 0 {
            return Err(Error::Argument("empty sequence".into()));
        }
        let h = self.hidden;
        let (w_x, u_zr, u_n, bias) = (
            tape.param(store, self.w_x),
            tape.param(store, self.u_zr),
            tape.param(store, self.u_n),
            tape.param(store, self.bias),
        );
        let xw = affine(tape, x, w_x, bias)?;
        let zero = tape.constant(Tensor::zeros(&[1, h]));
        let mut state = zero;
        let mut out = vec![zero; t_len];
        let order: Box<dyn Iterator<Item = usize>> = if reverse { Box::new((0..t_len).rev()) } else { Box::new(0..t_len) };
        for t in order {
            if mask.is_some_and(|m| !m[t]) {
                continue;
            }
            let xt = tape.slice(xw, 0, t, t + 1)?;
            let x_zr = tape.slice(xt, 1, 0, 2 * h)?;
            let x_n = tape.slice(xt, 1, 2 * h, 3 * h)?;
            let h_zr = tape.matmul(state, u_zr)?;
            let pre = tape.add(x_zr, h_zr)?;
            let zr = tape.sigmoid(pre)?;
            let z = tape.slice(zr, 1, 0, h)?;
            let r = tape.slice(zr, 1, h, 2 * h)?;
            let rh = tape.mul(r, state)?;
            let rhu = tape.matmul(rh, u_n)?;
            let pre_n = tape.add(x_n, rhu)?;
            let cand = tape.tanh(pre_n)?;
            let delta = tape.sub(cand, state)?;
            let step = tape.mul(z, delta)?;
            state = tape.add(state, step)?;
            out[t] = state;
        }
        Ok(out)
    }
}

/// Forward and backward GRUs whose states are concatenated per position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BiGru {
    pub forward: Gru,
    pub backward: Gru,
}

impl BiGru {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(BiGru {
            forward: Gru::new(store, &format!("{name}.fwd"), input, hidden, rng)?,
            backward: Gru::new(store, &format!("{name}.bwd"), input, hidden, rng)?,
        })
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden
    }

    /// `T × input` → `T × 2H`.
    pub fn encode<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let f = self.forward.run(tape, store, x, mask, false)?;
        let b = self.backward.run(tape, store, x, mask, true)?;
        let f = tape.concat(&f, 0)?;
        let b = tape.concat(&b, 0)?;
        Ok(tape.concat(&[f, b], 1)?)
    }
}

/// `n` BiGRU layers, each reading the previous layer's output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StackedBiGru {
    pub layers: Vec<BiGru>,
}

impl StackedBiGru {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if layers == 0 {
            return Err(Error::Argument("at least one BiGRU layer is needed".into()));
        }
        let mut out = Vec::with_capacity(layers);
        let mut dim = input;
        for l in 0..layers {
            out.push(BiGru::new(store, &format!("{name}.{l}"), dim, hidden, rng)?);
            dim = 2 * hidden;
        }
        Ok(StackedBiGru { layers: out })
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, BiGru::output_dim)
    }

    pub fn encode<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let mut cur = x;
        for layer in &self.layers {
            cur = layer.encode(tape, store, cur, mask)?;
        }
        Ok(cur)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_input(seed: u64, t: usize, d: usize) -> Tensor<f64> {
        glorot_uniform(&[t, d], &mut rng(seed))
    }

    /// Scalar loop over the stored weights, no tape involved.
    fn oracle(store: &ParamStore<f64>, g: &Gru, x: &Tensor<f64>, reverse: bool) -> Vec<Vec<f64>> {
        let (wx, uzr, un, b) = (store.value(g.w_x), store.value(g.u_zr), store.value(g.u_n), store.value(g.bias));
        let (d, hd) = (g.input, g.hidden);
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let t_len = x.shape()[0];
        let mut h = vec![0.0; hd];
        let mut out = vec![vec![]; t_len];
        let order: Vec<usize> = if reverse { (0..t_len).rev().collect() } else { (0..t_len).collect() };
        for t in order {
            let mut next = vec![0.0; hd];
            let mut z = vec![0.0; hd];
            let mut r = vec![0.0; hd];
            for j in 0..hd {
                let mut zs = b.get2(0, j);
                let mut rs = b.get2(0, hd + j);
                for i in 0..d {
                    zs += x.get2(t, i) * wx.get2(i, j);
                    rs += x.get2(t, i) * wx.get2(i, hd + j);
                }
                for i in 0..hd {
                    zs += h[i] * uzr.get2(i, j);
                    rs += h[i] * uzr.get2(i, hd + j);
                }
                z[j] = sig(zs);
                r[j] = sig(rs);
            }
            for j in 0..hd {
                let mut ns = b.get2(0, 2 * hd + j);
                for i in 0..d {
                    ns += x.get2(t, i) * wx.get2(i, 2 * hd + j);
                }
                for i in 0..hd {
                    ns += r[i] * h[i] * un.get2(i, j);
                }
                let cand = ns.tanh();
                next[j] = (1.0 - z[j]) * h[j] + z[j] * cand;
            }
            h = next;
            out[t] = h.clone();
        }
        out
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut store = ParamStore::<f64>::new();
        let g = Gru::new(&mut store, "g", 3, 4, &mut rng(5)).unwrap();
        let bias = store.value_mut(g.bias);
        for (i, v) in bias.data_mut().iter_mut().enumerate() {
            *v = 0.1 * i as f64 - 0.5;
        }
        let x = random_input(6, 4, 3);
        for reverse in [false, true] {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let states = g.run(&mut tape, &store, xv, None, reverse).unwrap();
            let want = oracle(&store, &g, &x, reverse);
            for (t, s) in states.iter().enumerate() {
                for (a, b) in tape.value(*s).data().iter().zip(&want[t]) {
                    assert!((a - b).abs() < 1e-10, "t={t}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_states() {
        let mut store = ParamStore::<f64>::new();
        let bi = BiGru::new(&mut store, "b", 2, 3, &mut rng(1)).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).data_mut().fill(0.0);
        }
        let mut tape = Tape::new();
        let x = tape.constant(random_input(2, 5, 2));
        let h = bi.encode(&mut tape, &store, x, None).unwrap();
        assert_eq!(tape.shape(h), &[5, 6]);
        assert!(tape.value(h).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_sequence_rejected() {
        let mut store = ParamStore::<f64>::new();
        let g = Gru::new(&mut store, "g", 2, 2, &mut rng(1)).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[0, 2]));
        assert!(g.run(&mut tape, &store, x, None, false).is_err());
    }

    #[test]
    fn backward_direction_equals_forward_on_reversed_input() {
        let mut store = ParamStore::<f64>::new();
        let bi = BiGru::new(&mut store, "b", 3, 2, &mut rng(9)).unwrap();
        // tie the two directions so they compute the same function
        for (src, dst) in [
            (bi.forward.w_x, bi.backward.w_x),
            (bi.forward.u_zr, bi.backward.u_zr),
            (bi.forward.u_n, bi.backward.u_n),
            (bi.forward.bias, bi.backward.bias),
        ] {
            let v = store.value(src).clone();
            *store.value_mut(dst) = v;
        }
        let x = random_input(4, 6, 3);
        let mut rev = Tensor::zeros(&[6, 3]);
        for t in 0..6 {
            rev.data_mut()[t * 3..t * 3 + 3].copy_from_slice(x.row_slice(5 - t));
        }
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let rv = tape.constant(rev);
        let h = bi.encode(&mut tape, &store, xv, None).unwrap();
        let hr = bi.encode(&mut tape, &store, rv, None).unwrap();
        for t in 0..6 {
            let bwd = &tape.value(h).row_slice(t)[2..4];
            let fwd_rev = &tape.value(hr).row_slice(5 - t)[0..2];
            for (a, b) in bwd.iter().zip(fwd_rev) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
