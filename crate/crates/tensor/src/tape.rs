use crate::error::{Result, TensorError};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::scalar::Real;
use crate::tensor::{
    broadcast_map, broadcast_shape, matmul_nt_into, matmul_tn_into, split_axis, Tensor,
};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a custom unary op: `(input, output, grad_output) -> grad_input`.
pub type BackwardFn<F> = Box<dyn Fn(&Tensor<F>, &Tensor<F>, &Tensor<F>) -> Tensor<F> + Send + Sync>;

const LN_EPS: f64 = 1e-5;

enum Op<F: Real> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Offset(Var),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Clamp(Var, F, F),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    SumAxis {
        x: Var,
        axis: usize,
    },
    Gather {
        table: Var,
        ids: Vec<Option<usize>>,
    },
    GatherParam {
        param: ParamId,
        table_shape: [usize; 2],
        ids: Vec<Option<usize>>,
    },
    Custom {
        x: Var,
        backward: BackwardFn<F>,
    },
}

struct Node<F: Real> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Single-use record of a computation. Values are computed eagerly; calling
/// [`Tape::backward`] consumes the tape.
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
    param_vars: Vec<Option<Var>>,
    grad_enabled: bool,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_finite<F: Real>(op: &'static str, t: &Tensor<F>) -> Result<()> {
    if t.has_nan() {
        return Err(TensorError::Numeric {
            op,
            detail: "NaN input".into(),
        });
    }
    Ok(())
}

fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn gelu_parts<F: Real>(x: F) -> (F, F) {
    let k = F::c((2.0 / std::f64::consts::PI).sqrt());
    let a = F::c(0.044715);
    let half = F::c(0.5);
    let inner = k * (x + a * x * x * x);
    let t = inner.tanh();
    let y = half * x * (F::one() + t);
    let dy = half * (F::one() + t) + half * x * (F::one() - t * t) * k * (F::one() + F::c(3.0) * a * x * x);
    (y, dy)
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            param_vars: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape on which parameters never require gradients (inference).
    pub fn inference() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    /// Records a parameter once per tape; later calls return the same var.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        if let Some(Some(v)) = self.param_vars.get(id.0) {
            return *v;
        }
        let entry = store.get(id);
        let rg = self.grad_enabled && entry.trainable;
        let v = self.push(entry.value.clone(), Op::Param(id), rg);
        if self.param_vars.len() <= id.0 {
            self.param_vars.resize(id.0 + 1, None);
        }
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    fn broadcast_binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(F, F) -> F,
    ) -> Result<Tensor<F>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            return Tensor::from_vec(ta.shape(), data);
        }
        let shape = broadcast_shape(ta.shape(), tb.shape()).ok_or_else(|| TensorError::Shape {
            op: name,
            left: ta.shape().to_vec(),
            right: tb.shape().to_vec(),
        })?;
        let ma = broadcast_map(ta.shape(), &shape);
        let mb = broadcast_map(tb.shape(), &shape);
        let (da, db) = (ta.data(), tb.data());
        let data = ma.iter().zip(&mb).map(|(&i, &j)| f(da[i], db[j])).collect();
        Tensor::from_vec(&shape, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.broadcast_binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.broadcast_binary("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.broadcast_binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, s: F) -> Var {
        let value = self.value(x).map(|v| v * s);
        let rg = self.rg(&[x]);
        self.push(value, Op::Scale(x, s), rg)
    }

    /// `x + c` for a constant `c`.
    pub fn offset(&mut self, x: Var, c: F) -> Var {
        let value = self.value(x).map(|v| v + c);
        let rg = self.rg(&[x]);
        self.push(value, Op::Offset(x), rg)
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(F) -> F, op: Op<F>) -> Result<Var> {
        check_finite(name, self.value(x))?;
        let value = self.value(x).map(f);
        let rg = self.rg(&[x]);
        Ok(self.push(value, op, rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, |v| v.tanh(), Op::Tanh(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary("gelu", x, |v| gelu_parts(v).0, Op::Gelu(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, |v| v.exp(), Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary("log", x, |v| v.ln(), Op::Log(x))
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary("abs", x, |v| v.abs(), Op::Abs(x))
    }

    pub fn clamp(&mut self, x: Var, lo: F, hi: F) -> Result<Var> {
        self.unary("clamp", x, |v| v.max(lo).min(hi), Op::Clamp(x, lo, hi))
    }

    /// Softmax over the last axis, max-subtracted. Positions whose `mask`
    /// entry is `false` get exactly zero probability.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let t = self.value(x);
        check_finite("softmax", t)?;
        let n = t.last_dim();
        if let Some(m) = mask {
            if m.len() != n {
                return Err(TensorError::Shape {
                    op: "softmax mask",
                    left: t.shape().to_vec(),
                    right: vec![m.len()],
                });
            }
            if !m.iter().any(|&k| k) {
                return Err(TensorError::Argument("softmax: every position is masked".into()));
            }
        }
        let keep = |j: usize| mask.is_none_or(|m| m[j]);
        let mut out = vec![F::zero(); t.len()];
        for r in 0..t.rows() {
            let row = t.row_slice(r);
            let mut mx = F::neg_infinity();
            for (j, &v) in row.iter().enumerate() {
                if keep(j) && v > mx {
                    mx = v;
                }
            }
            let mut total = F::zero();
            for (j, &v) in row.iter().enumerate() {
                if keep(j) {
                    let e = (v - mx).exp();
                    out[r * n + j] = e;
                    total += e;
                }
            }
            for o in &mut out[r * n..(r + 1) * n] {
                *o /= total;
            }
        }
        let value = Tensor::from_vec(t.shape(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Softmax(x), rg))
    }

    /// Layer normalization over the last axis with ε = 1e-5.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let t = self.value(x);
        check_finite("layer_norm", t)?;
        let m = t.last_dim();
        for p in [gain, bias] {
            if self.value(p).len() != m {
                return Err(TensorError::Shape {
                    op: "layer_norm",
                    left: t.shape().to_vec(),
                    right: self.value(p).shape().to_vec(),
                });
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = t.rows();
        let mut xhat = vec![F::zero(); t.len()];
        let mut rstd = vec![F::zero(); rows];
        let mut out = vec![F::zero(); t.len()];
        let mf = F::c(m as f64);
        for r in 0..rows {
            let row = t.row_slice(r);
            let mean = row.iter().copied().sum::<F>() / mf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / mf;
            let rs = F::one() / (var + F::c(LN_EPS)).sqrt();
            rstd[r] = rs;
            for j in 0..m {
                let h = (row[j] - mean) * rs;
                xhat[r * m + j] = h;
                out[r * m + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::from_vec(t.shape(), out)?;
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Argument("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::Argument(format!("concat axis {axis} for shape {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(TensorError::Shape {
                    op: "concat",
                    left: base.clone(),
                    right: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::from_vec(&shape, data)?;
        let rg = self.rg(parts);
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Half-open range `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        let shape = t.shape();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(TensorError::Argument(format!(
                "slice {start}..{end} on axis {axis} of shape {shape:?}"
            )));
        }
        let (outer, n, inner) = split_axis(shape, axis);
        let mut out_shape = shape.to_vec();
        out_shape[axis] = end - start;
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * n * inner;
            data.extend_from_slice(&t.data()[base + start * inner..base + end * inner]);
        }
        let value = Tensor::from_vec(&out_shape, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Slice { x, axis, start }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose()?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshaped(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Sum of all elements, as a `1×1` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().copied().sum::<F>() / F::c(t.len() as f64);
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Sum along `axis`, keeping it with size 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.shape().len() {
            return Err(TensorError::Argument(format!("sum axis {axis} of {:?}", t.shape())));
        }
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let mut out = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..n {
                for i in 0..inner {
                    out[o * inner + i] += t.data()[(o * n + k) * inner + i];
                }
            }
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = 1;
        let value = Tensor::from_vec(&shape, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SumAxis { x, axis }, rg))
    }

    fn gather_rows(table: &Tensor<F>, ids: &[Option<usize>]) -> Result<Tensor<F>> {
        if table.shape().len() != 2 {
            return Err(TensorError::Argument(format!("gather table shape {:?}", table.shape())));
        }
        let (v, d) = (table.shape()[0], table.shape()[1]);
        let mut out = vec![F::zero(); ids.len() * d];
        for (t, id) in ids.iter().enumerate() {
            if let Some(i) = *id {
                if i >= v {
                    return Err(TensorError::Index { index: i, bound: v });
                }
                out[t * d..(t + 1) * d].copy_from_slice(table.row_slice(i));
            }
        }
        Tensor::from_vec(&[ids.len(), d], out)
    }

    /// Row lookup; `None` yields a zero row that receives no gradient.
    pub fn gather(&mut self, table: Var, ids: &[Option<usize>]) -> Result<Var> {
        let value = Self::gather_rows(self.value(table), ids)?;
        let rg = self.rg(&[table]);
        Ok(self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Row lookup straight from a stored parameter without copying the table
    /// onto the tape.
    pub fn gather_param(&mut self, store: &ParamStore<F>, id: ParamId, ids: &[Option<usize>]) -> Result<Var> {
        let entry = store.get(id);
        let value = Self::gather_rows(&entry.value, ids)?;
        let s = entry.value.shape();
        let rg = self.grad_enabled && entry.trainable;
        Ok(self.push(
            value,
            Op::GatherParam {
                param: id,
                table_shape: [s[0], s[1]],
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Elementwise op with a caller-supplied backward rule.
    pub fn custom(
        &mut self,
        x: Var,
        forward: impl Fn(&Tensor<F>) -> Tensor<F>,
        backward: BackwardFn<F>,
    ) -> Var {
        let value = forward(self.value(x));
        let rg = self.rg(&[x]);
        self.push(value, Op::Custom { x, backward }, rg)
    }

    /// Reverse pass from a scalar `loss`. Gradients sum over fan-out.
    pub fn backward(self, loss: Var) -> Result<Gradients<F>> {
        if loss.0 >= self.nodes.len() {
            return Err(TensorError::Argument("loss is not on this tape".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::Argument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let n_params = self.param_vars.len();
        let mut out = Gradients {
            params: vec![None; n_params],
            leaves: vec![None; self.nodes.len()],
        };
        if !self.nodes[loss.0].requires_grad {
            return Ok(out);
        }
        let mut grads: Vec<Option<Tensor<F>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), F::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let nodes = &self.nodes;
            let val = |v: Var| &nodes[v.0].value;
            let wants = |v: Var| nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => out.leaves[i] = Some(g),
                Op::Param(id) => add_grad(&mut out.params, id.0, g),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (val(*a), val(*b));
                    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    if wants(*a) {
                        let mut ga = vec![F::zero(); m * k];
                        matmul_nt_into(g.data(), tb.data(), &mut ga, m, n, k);
                        acc(&mut grads, *a, Tensor::from_vec(&[m, k], ga)?);
                    }
                    if wants(*b) {
                        let mut gb = vec![F::zero(); k * n];
                        matmul_tn_into(ta.data(), g.data(), &mut gb, m, k, n);
                        acc(&mut grads, *b, Tensor::from_vec(&[k, n], gb)?);
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let neg = matches!(node.op, Op::Sub(..));
                    if wants(*a) {
                        acc(&mut grads, *a, reduce_to(&g, val(*a).shape(), |_| F::one()));
                    }
                    if wants(*b) {
                        let s = if neg { -F::one() } else { F::one() };
                        acc(&mut grads, *b, reduce_to(&g, val(*b).shape(), |_| s));
                    }
                }
                Op::Mul(a, b) => {
                    let out_shape = node.value.shape();
                    if wants(*a) {
                        let other = expand(val(*b), out_shape);
                        acc(&mut grads, *a, reduce_to(&g, val(*a).shape(), |i| other[i]));
                    }
                    if wants(*b) {
                        let other = expand(val(*a), out_shape);
                        acc(&mut grads, *b, reduce_to(&g, val(*b).shape(), |i| other[i]));
                    }
                }
                Op::Scale(x, s) => acc(&mut grads, *x, g.map(|v| v * *s)),
                Op::Offset(x) => acc(&mut grads, *x, g),
                Op::Sigmoid(x) => {
                    let gx = zip_map(&g, &node.value, |gv, y| gv * y * (F::one() - y));
                    acc(&mut grads, *x, gx);
                }
                Op::Tanh(x) => {
                    let gx = zip_map(&g, &node.value, |gv, y| gv * (F::one() - y * y));
                    acc(&mut grads, *x, gx);
                }
                Op::Gelu(x) => {
                    let gx = zip_map(&g, val(*x), |gv, xv| gv * gelu_parts(xv).1);
                    acc(&mut grads, *x, gx);
                }
                Op::Exp(x) => {
                    let gx = zip_map(&g, &node.value, |gv, y| gv * y);
                    acc(&mut grads, *x, gx);
                }
                Op::Log(x) => {
                    let gx = zip_map(&g, val(*x), |gv, xv| gv / xv);
                    acc(&mut grads, *x, gx);
                }
                Op::Abs(x) => {
                    let gx = zip_map(&g, val(*x), |gv, xv| {
                        if xv > F::zero() {
                            gv
                        } else if xv < F::zero() {
                            -gv
                        } else {
                            F::zero()
                        }
                    });
                    acc(&mut grads, *x, gx);
                }
                Op::Clamp(x, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let gx = zip_map(&g, val(*x), |gv, xv| if xv >= lo && xv <= hi { gv } else { F::zero() });
                    acc(&mut grads, *x, gx);
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let n = y.last_dim();
                    let mut gx = vec![F::zero(); y.len()];
                    for r in 0..y.rows() {
                        let yr = y.row_slice(r);
                        let gr = g.row_slice(r);
                        let dot: F = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for j in 0..n {
                            gx[r * n + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    acc(&mut grads, *x, Tensor::from_vec(y.shape(), gx)?);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let m = node.value.last_dim();
                    let rows = node.value.rows();
                    let gd = val(*gain).data();
                    let mf = F::c(m as f64);
                    if wants(*x) {
                        let mut gx = vec![F::zero(); node.value.len()];
                        for r in 0..rows {
                            let gr = g.row_slice(r);
                            let xh = &xhat[r * m..(r + 1) * m];
                            let mut s1 = F::zero();
                            let mut s2 = F::zero();
                            for j in 0..m {
                                let d = gr[j] * gd[j];
                                s1 += d;
                                s2 += d * xh[j];
                            }
                            for j in 0..m {
                                let d = gr[j] * gd[j];
                                gx[r * m + j] = rstd[r] * (d - s1 / mf - xh[j] * s2 / mf);
                            }
                        }
                        acc(&mut grads, *x, Tensor::from_vec(node.value.shape(), gx)?);
                    }
                    if wants(*gain) || wants(*bias) {
                        let mut gg = vec![F::zero(); m];
                        let mut gb = vec![F::zero(); m];
                        for r in 0..rows {
                            let gr = g.row_slice(r);
                            for j in 0..m {
                                gg[j] += gr[j] * xhat[r * m + j];
                                gb[j] += gr[j];
                            }
                        }
                        if wants(*gain) {
                            acc(&mut grads, *gain, Tensor::from_vec(val(*gain).shape(), gg)?);
                        }
                        if wants(*bias) {
                            acc(&mut grads, *bias, Tensor::from_vec(val(*bias).shape(), gb)?);
                        }
                    }
                }
                Op::Concat { parts, axis } => {
                    let (outer, _, inner) = split_axis(node.value.shape(), *axis);
                    let total = node.value.shape()[*axis];
                    let mut offset = 0;
                    for &p in parts {
                        let ps = val(p).shape();
                        let w = ps[*axis];
                        if wants(p) {
                            let mut gp = Vec::with_capacity(val(p).len());
                            for o in 0..outer {
                                let base = (o * total + offset) * inner;
                                gp.extend_from_slice(&g.data()[base..base + w * inner]);
                            }
                            acc(&mut grads, p, Tensor::from_vec(ps, gp)?);
                        }
                        offset += w;
                    }
                }
                Op::Slice { x, axis, start } => {
                    let xs = val(*x).shape();
                    let (outer, n, inner) = split_axis(xs, *axis);
                    let w = node.value.shape()[*axis];
                    let mut gx = vec![F::zero(); val(*x).len()];
                    for o in 0..outer {
                        let dst = o * n * inner + start * inner;
                        let src = o * w * inner;
                        gx[dst..dst + w * inner].copy_from_slice(&g.data()[src..src + w * inner]);
                    }
                    acc(&mut grads, *x, Tensor::from_vec(xs, gx)?);
                }
                Op::Transpose(x) => acc(&mut grads, *x, g.transpose()?),
                Op::Reshape(x) => acc(&mut grads, *x, g.reshaped(val(*x).shape())?),
                Op::Sum(x) => {
                    let gv = g.data()[0];
                    acc(&mut grads, *x, Tensor::full(val(*x).shape(), gv));
                }
                Op::Mean(x) => {
                    let t = val(*x);
                    let gv = g.data()[0] / F::c(t.len() as f64);
                    acc(&mut grads, *x, Tensor::full(t.shape(), gv));
                }
                Op::SumAxis { x, axis } => {
                    let xs = val(*x).shape();
                    let (outer, n, inner) = split_axis(xs, *axis);
                    let mut gx = vec![F::zero(); val(*x).len()];
                    for o in 0..outer {
                        for k in 0..n {
                            for i in 0..inner {
                                gx[(o * n + k) * inner + i] = g.data()[o * inner + i];
                            }
                        }
                    }
                    acc(&mut grads, *x, Tensor::from_vec(xs, gx)?);
                }
                Op::Gather { table, ids } => {
                    let ts = val(*table).shape();
                    acc(&mut grads, *table, scatter_rows(&g, ids, [ts[0], ts[1]]));
                }
                Op::GatherParam {
                    param,
                    table_shape,
                    ids,
                } => {
                    add_grad(&mut out.params, param.0, scatter_rows(&g, ids, *table_shape));
                }
                Op::Custom { x, backward } => {
                    let gx = backward(val(*x), &node.value, &g);
                    acc(&mut grads, *x, gx);
                }
            }
        }
        Ok(out)
    }
}

fn add_grad<F: Real>(slots: &mut Vec<Option<Tensor<F>>>, idx: usize, g: Tensor<F>) {
    if slots.len() <= idx {
        slots.resize(idx + 1, None);
    }
    match &mut slots[idx] {
        Some(t) => t.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn acc<F: Real>(grads: &mut [Option<Tensor<F>>], v: Var, g: Tensor<F>) {
    match &mut grads[v.0] {
        Some(t) => t.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map<F: Real>(g: &Tensor<F>, other: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
    let data = g.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::from_vec(g.shape(), data).expect("same shape")
}

/// Values of `t` broadcast up to `shape`, flattened.
fn expand<F: Real>(t: &Tensor<F>, shape: &[usize]) -> Vec<F> {
    if t.shape() == shape {
        return t.data().to_vec();
    }
    broadcast_map(t.shape(), shape).into_iter().map(|i| t.data()[i]).collect()
}

/// Sums `g[i] * factor(i)` back into the (possibly broadcast) source shape.
fn reduce_to<F: Real>(g: &Tensor<F>, src: &[usize], factor: impl Fn(usize) -> F) -> Tensor<F> {
    if g.shape() == src {
        let data = g.data().iter().enumerate().map(|(i, &v)| v * factor(i)).collect();
        return Tensor::from_vec(src, data).expect("same shape");
    }
    let map = broadcast_map(src, g.shape());
    let mut out = vec![F::zero(); src.iter().product()];
    for (i, (&v, &j)) in g.data().iter().zip(&map).enumerate() {
        out[j] += v * factor(i);
    }
    Tensor::from_vec(src, out).expect("source shape")
}

fn scatter_rows<F: Real>(g: &Tensor<F>, ids: &[Option<usize>], table: [usize; 2]) -> Tensor<F> {
    let d = table[1];
    let mut out = vec![F::zero(); table[0] * d];
    for (t, id) in ids.iter().enumerate() {
        if let Some(i) = *id {
            for (o, &v) in out[i * d..(i + 1) * d].iter_mut().zip(g.row_slice(t)) {
                *o += v;
            }
        }
    }
    Tensor::from_vec(&table, out).expect("table shape")
}
