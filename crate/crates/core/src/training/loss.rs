use ljp_tensor::{Real, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::models::{MultilabelActivation, Target};

/// Scores are clamped to `[ε, 1 − ε]` before the logarithm.
pub const SCORE_EPS: f64 = 1e-7;

fn clamped<F: Real>(tape: &mut Tape<F>, p: Var) -> Result<Var> {
    Ok(tape.clamp(p, F::c(SCORE_EPS), F::c(1.0 - SCORE_EPS))?)
}

fn one_minus<F: Real>(tape: &mut Tape<F>, p: Var) -> Var {
    let neg = tape.scale(p, -F::one());
    tape.offset(neg, F::one())
}

/// `−(y ln p + (1 − y) ln(1 − p))` for a `1 × 1` score.
pub fn loss_binary<F: Real>(tape: &mut Tape<F>, score: Var, gold: bool) -> Result<Var> {
    let p = clamped(tape, score)?;
    let q = if gold { p } else { one_minus(tape, p) };
    let l = tape.log(q)?;
    let l = tape.sum(l);
    Ok(tape.scale(l, -F::one()))
}

/// Mean over the `L` labels of the per-label cross-entropy of `1 × L`
/// sigmoid scores.
pub fn loss_multilabel<F: Real>(tape: &mut Tape<F>, scores: Var, gold: &[usize]) -> Result<Var> {
    let l = tape.shape(scores)[1];
    let t = indicator::<F>(l, gold)?;
    let p = clamped(tape, scores)?;
    let lp = tape.log(p)?;
    let q = one_minus(tape, p);
    let lq = tape.log(q)?;
    let tc = tape.constant(t.clone());
    let pos = tape.mul(tc, lp)?;
    let nc = tape.constant(t.map(|v| F::one() - v));
    let neg = tape.mul(nc, lq)?;
    let both = tape.add(pos, neg)?;
    let m = tape.mean(both);
    Ok(tape.scale(m, -F::one()))
}

/// Cross-entropy of `1 × (L + 1)` softmax scores against the uniform
/// distribution over the gold labels, or the trailing no-violation class
/// when there are none.
pub fn loss_multilabel_softmax<F: Real>(tape: &mut Tape<F>, scores: Var, gold: &[usize]) -> Result<Var> {
    let k = tape.shape(scores)[1];
    let mut t = indicator::<F>(k - 1, gold)?.into_data();
    t.push(F::zero());
    if gold.is_empty() {
        t[k - 1] = F::one();
    } else {
        let w = F::c(1.0 / gold.len() as f64);
        t.iter_mut().for_each(|v| *v *= w);
    }
    let p = clamped(tape, scores)?;
    let lp = tape.log(p)?;
    let tc = tape.constant(Tensor::from_vec(&[1, k], t)?);
    let prod = tape.mul(tc, lp)?;
    let s = tape.sum(prod);
    Ok(tape.scale(s, -F::one()))
}

/// `|pred − gold|` for a `1 × 1` raw output.
pub fn loss_importance<F: Real>(tape: &mut Tape<F>, pred: Var, gold: f64) -> Result<Var> {
    let d = tape.offset(pred, F::c(-gold));
    let a = tape.abs(d)?;
    Ok(tape.sum(a))
}

fn indicator<F: Real>(l: usize, gold: &[usize]) -> Result<Tensor<F>> {
    let mut t = vec![F::zero(); l];
    for &g in gold {
        *t.get_mut(g)
            .ok_or_else(|| Error::Argument(format!("gold label {g} outside a vocabulary of {l}")))? = F::one();
    }
    Ok(Tensor::from_vec(&[1, l], t)?)
}

/// Loss of one activated model output against its target.
pub fn case_loss<F: Real>(
    tape: &mut Tape<F>,
    output: Var,
    target: &Target,
    activation: MultilabelActivation,
) -> Result<Var> {
    match target {
        Target::Binary(y) => loss_binary(tape, output, *y),
        Target::Multilabel(gold) => match activation {
            MultilabelActivation::Sigmoid => loss_multilabel(tape, output, gold),
            MultilabelActivation::SoftmaxWithNone => loss_multilabel_softmax(tape, output, gold),
        },
        Target::Importance(g) => loss_importance(tape, output, *g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(f: impl FnOnce(&mut Tape<f64>, Var) -> Result<Var>, x: &[f64]) -> f64 {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::from_f64(&[1, x.len()], x).unwrap());
        let l = f(&mut tape, v).unwrap();
        tape.value(l).item().unwrap()
    }

    #[test]
    fn half_score_costs_ln_two() {
        let l = eval(|t, v| loss_binary(t, v, true), &[0.5]);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((eval(|t, v| loss_binary(t, v, false), &[0.5]) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn perfect_scores_cost_nothing_but_the_clamp() {
        let l = eval(|t, v| loss_binary(t, v, true), &[1.0]);
        assert!((0.0..2e-7).contains(&l));
        let l = eval(|t, v| loss_multilabel(t, v, &[0, 2]), &[1.0, 0.0, 1.0]);
        assert!((0.0..2e-7).contains(&l));
        // the clamp keeps a confident mistake finite
        assert!(eval(|t, v| loss_binary(t, v, true), &[0.0]).is_finite());
    }

    #[test]
    fn multilabel_is_a_label_mean() {
        let s = [0.2, 0.7, 0.9];
        let want = -((1.0f64 - 0.2).ln() + 0.7f64.ln() + (1.0f64 - 0.9).ln()) / 3.0;
        assert!((eval(|t, v| loss_multilabel(t, v, &[1]), &s) - want).abs() < 1e-14);
        let mut tape = Tape::<f64>::new();
        let v = tape.constant(Tensor::from_f64(&[1, 3], &s).unwrap());
        assert!(loss_multilabel(&mut tape, v, &[3]).is_err());
    }

    #[test]
    fn softmax_target_uses_the_none_class() {
        let s = [0.1, 0.2, 0.7];
        assert!((eval(|t, v| loss_multilabel_softmax(t, v, &[]), &s) + 0.7f64.ln()).abs() < 1e-14);
        let want = -(0.1f64.ln() + 0.2f64.ln()) / 2.0;
        assert!((eval(|t, v| loss_multilabel_softmax(t, v, &[0, 1]), &s) - want).abs() < 1e-14);
    }

    #[test]
    fn importance_is_absolute_error() {
        assert_eq!(eval(|t, v| loss_importance(t, v, 4.0), &[2.0]), 2.0);
        assert_eq!(eval(|t, v| loss_importance(t, v, 1.0), &[2.5]), 1.5);
    }
}
