//! Central-difference gradient checks.

use crate::error::Result;
use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|a − n| / max(|a|, |n|, 1e-8)` over checked coordinates.
    pub max_rel_error: f64,
    /// Description of the coordinate that produced `max_rel_error`.
    pub worst: String,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
    /// Every coordinate above `tol`, in probe order.
    pub failures: Vec<Mismatch>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub coordinate: String,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckReport {
    fn new(tol: f64) -> Self {
        GradCheckReport {
            max_rel_error: 0.0,
            worst: String::new(),
            checked: 0,
            tol,
            passed: true,
            failures: Vec::new(),
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64, label: impl Fn() -> String) {
        let err = rel_error(analytic, numeric);
        self.checked += 1;
        if err > self.max_rel_error || err.is_nan() {
            self.max_rel_error = err;
            self.worst = format!("{} (analytic {analytic:e}, numeric {numeric:e})", label());
        }
        if !(err <= self.tol) {
            self.failures.push(Mismatch {
                coordinate: label(),
                analytic,
                numeric,
            });
        }
        self.passed = self.max_rel_error <= self.tol;
    }
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn scalar_of(tape: &Tape<f64>, v: Var) -> Result<f64> {
    tape.value(v).item()
}

/// Checks `d f / d x` at `point` coordinate by coordinate.
pub fn grad_check<Fun>(f: Fun, point: &Tensor<f64>, h: f64, tol: f64) -> Result<GradCheckReport>
where
    Fun: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone(), true);
    let y = f(&mut tape, x)?;
    let grads = tape.backward(y)?;
    let analytic = grads
        .wrt(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(point.shape()));

    let eval = |p: Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(p, false);
        let y = f(&mut tape, x)?;
        scalar_of(&tape, y)
    };

    let mut report = GradCheckReport::new(tol);
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += h;
        let mut minus = point.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        report.record(analytic.data()[i], numeric, || format!("x[{i}]"));
    }
    Ok(report)
}

/// Checks gradients of every trainable parameter in `store`.
///
/// `max_coords` bounds the number of coordinates probed per parameter; the
/// probed coordinates are spread evenly over the tensor.
pub fn grad_check_params<Fun>(
    store: &ParamStore<f64>,
    f: Fun,
    h: f64,
    tol: f64,
    max_coords: Option<usize>,
) -> Result<GradCheckReport>
where
    Fun: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let y = f(&mut tape, store)?;
    let grads = tape.backward(y)?;

    let mut report = GradCheckReport::new(tol);
    let mut probe = store.clone();
    for (id, entry) in store.iter() {
        if !entry.trainable {
            continue;
        }
        let n = entry.value.len();
        let step = max_coords.map_or(1, |m| n.div_ceil(m.max(1)).max(1));
        for i in (0..n).step_by(step) {
            let orig = entry.value.data()[i];
            probe.value_mut(id).data_mut()[i] = orig + h;
            let mut t = Tape::new();
            let yp = f(&mut t, &probe)?;
            let fp = scalar_of(&t, yp)?;
            probe.value_mut(id).data_mut()[i] = orig - h;
            let mut t = Tape::new();
            let ym = f(&mut t, &probe)?;
            let fm = scalar_of(&t, ym)?;
            probe.value_mut(id).data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let analytic = grads.param(id).map_or(0.0, |g| g.data()[i]);
            report.record(analytic, numeric, || format!("{}[{i}]", entry.name));
        }
    }
    Ok(report)
}
