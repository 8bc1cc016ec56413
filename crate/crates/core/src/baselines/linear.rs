use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tfidf::{dot, SparseVec};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmParams {
    pub lambda: f64,
    pub epochs: usize,
    /// Half-width of the insensitive band in regression.
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            lambda: 1e-4,
            epochs: 20,
            epsilon: 0.1,
            seed: 0,
        }
    }
}

impl SvmParams {
    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) || self.epochs == 0 || self.epsilon < 0.0 {
            return Err(Error::Config(format!(
                "svm needs lambda > 0, epochs > 0 and epsilon >= 0 (got {}, {}, {})",
                self.lambda, self.epochs, self.epsilon
            )));
        }
        Ok(())
    }
}

/// One weight vector and an unregularized bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearUnit {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearUnit {
    pub fn decision(&self, x: &SparseVec) -> f64 {
        dot(&self.w, x) + self.b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinearMode {
    Binary,
    OneVsRest,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub mode: LinearMode,
    /// One unit, or one per label in one-vs-rest mode.
    pub units: Vec<LinearUnit>,
    pub params: SvmParams,
}

#[derive(Clone, Copy)]
enum Loss {
    Hinge,
    Insensitive(f64),
}

/// Regularized objective `λ/2‖w‖² + mean loss`.
fn objective(unit: &LinearUnit, x: &[SparseVec], y: &[f64], lambda: f64, loss: Loss) -> f64 {
    let reg = 0.5 * lambda * unit.w.iter().map(|v| v * v).sum::<f64>();
    let total: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| {
            let f = unit.decision(xi);
            match loss {
                Loss::Hinge => (1.0 - yi * f).max(0.0),
                Loss::Insensitive(eps) => ((f - yi).abs() - eps).max(0.0),
            }
        })
        .sum();
    reg + total / x.len() as f64
}

/// Pegasos primal subgradient descent: step `1/(λt)` on `w` with projection
/// onto the `1/√λ` ball, step `1/√t` on the bias. Returns the unit and the
/// objective after each epoch.
fn pegasos(x: &[SparseVec], y: &[f64], dim: usize, p: &SvmParams, loss: Loss, b0: f64) -> (LinearUnit, Vec<f64>) {
    let mut unit = LinearUnit { w: vec![0.0; dim], b: b0 };
    // w = scale · v keeps the shrink step O(1)
    let mut v = vec![0.0; dim];
    let mut scale = 1.0f64;
    let mut sq = 0.0f64; // ‖v‖²
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let radius = 1.0 / p.lambda.sqrt();
    let mut t = 0usize;
    let mut history = Vec::with_capacity(p.epochs);
    for _ in 0..p.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (p.lambda * t as f64);
            let f = scale * dot(&v, &x[i]) + unit.b;
            let g = match loss {
                Loss::Hinge if y[i] * f < 1.0 => y[i],
                Loss::Insensitive(eps) if (f - y[i]).abs() > eps => -(f - y[i]).signum(),
                _ => 0.0,
            };
            let shrink = 1.0 - eta * p.lambda;
            if shrink <= 0.0 {
                v.fill(0.0);
                scale = 1.0;
                sq = 0.0;
            } else {
                scale *= shrink;
            }
            if g != 0.0 {
                let step = eta * g / scale;
                for &(j, xj) in &x[i] {
                    sq += 2.0 * step * xj * v[j] + step * step * xj * xj;
                    v[j] += step * xj;
                }
                unit.b += g / (t as f64).sqrt();
            }
            let norm = scale * sq.max(0.0).sqrt();
            if norm > radius {
                scale *= radius / norm;
            }
            if scale < 1e-100 {
                for vj in &mut v {
                    *vj *= scale;
                }
                sq *= scale * scale;
                scale = 1.0;
            }
        }
        unit.w = v.iter().map(|vj| vj * scale).collect();
        history.push(objective(&unit, x, y, p.lambda, loss));
    }
    unit.w = v.iter().map(|vj| vj * scale).collect();
    (unit, history)
}

fn check_inputs(x: &[SparseVec], n: usize, dim: usize) -> Result<()> {
    if x.is_empty() || x.len() != n {
        return Err(Error::Argument(format!("{} feature vectors for {n} targets", x.len())));
    }
    if x.iter().flatten().any(|&(j, _)| j >= dim) {
        return Err(Error::Argument(format!("feature index outside dimension {dim}")));
    }
    Ok(())
}

/// Hinge-loss classifier; decision threshold at margin 0.
pub fn svm_train(x: &[SparseVec], y: &[bool], dim: usize, p: &SvmParams) -> Result<(LinearModel, Vec<f64>)> {
    p.validate()?;
    check_inputs(x, y.len(), dim)?;
    if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        return Err(Error::Argument("binary svm needs both classes in the training labels".into()));
    }
    let ys: Vec<f64> = y.iter().map(|&v| if v { 1.0 } else { -1.0 }).collect();
    let (unit, hist) = pegasos(x, &ys, dim, p, Loss::Hinge, 0.0);
    Ok((
        LinearModel {
            mode: LinearMode::Binary,
            units: vec![unit],
            params: *p,
        },
        hist,
    ))
}

/// One hinge classifier per label, trained independently (in parallel).
/// Every label sees the same example order, so a label's unit depends only
/// on its own column.
pub fn svm_train_ovr(x: &[SparseVec], y: &[Vec<usize>], labels: usize, dim: usize, p: &SvmParams) -> Result<LinearModel> {
    p.validate()?;
    check_inputs(x, y.len(), dim)?;
    if labels == 0 {
        return Err(Error::Argument("one-vs-rest needs at least one label".into()));
    }
    if y.iter().flatten().any(|&l| l >= labels) {
        return Err(Error::Argument(format!("label outside a vocabulary of {labels}")));
    }
    let units = par::map_range(labels, |l| {
        let ys: Vec<f64> = y.iter().map(|s| if s.contains(&l) { 1.0 } else { -1.0 }).collect();
        pegasos(x, &ys, dim, p, Loss::Hinge, 0.0).0
    });
    Ok(LinearModel {
        mode: LinearMode::OneVsRest,
        units,
        params: *p,
    })
}

/// ε-insensitive regression; the bias starts at the target mean.
pub fn svr_train(x: &[SparseVec], y: &[f64], dim: usize, p: &SvmParams) -> Result<(LinearModel, Vec<f64>)> {
    p.validate()?;
    check_inputs(x, y.len(), dim)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let (unit, hist) = pegasos(x, y, dim, p, Loss::Insensitive(p.epsilon), mean);
    Ok((
        LinearModel {
            mode: LinearMode::Regression,
            units: vec![unit],
            params: *p,
        },
        hist,
    ))
}

impl LinearModel {
    pub fn decisions(&self, x: &SparseVec) -> Vec<f64> {
        self.units.iter().map(|u| u.decision(x)).collect()
    }
}
