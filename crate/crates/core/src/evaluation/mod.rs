//! Macro/micro P/R/F1, MAE, Spearman ρ, frequency-stratified reports and
//! multi-run aggregation.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::corpus::{FrequencyStrata, LabelVocabulary};
use crate::error::{Error, Result};
use crate::models::{Prediction, Target, Task};
use crate::training::mean_std;

/// Precision, recall and F1 in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// A metric value with the zero-denominator flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub prf: Prf,
    /// Some ratio had a zero denominator and was set to 0.
    pub zero_division: bool,
}

fn ratio(num: usize, den: usize, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Argument(format!("{a} predictions for {b} gold values")));
    }
    Ok(())
}

/// Unweighted mean over the two classes of per-class P, R and F1.
pub fn macro_prf(pred: &[bool], gold: &[bool]) -> Result<Scored> {
    same_len(pred.len(), gold.len())?;
    let mut flag = false;
    let mut sums = [0.0; 3];
    for class in [true, false] {
        let tp = pred.iter().zip(gold).filter(|(p, g)| **p == class && **g == class).count();
        let predicted = pred.iter().filter(|p| **p == class).count();
        let actual = gold.iter().filter(|g| **g == class).count();
        let p = ratio(tp, predicted, &mut flag);
        let r = ratio(tp, actual, &mut flag);
        sums[0] += p;
        sums[1] += r;
        sums[2] += harmonic(p, r);
    }
    Ok(Scored {
        prf: Prf {
            precision: 50.0 * sums[0],
            recall: 50.0 * sums[1],
            f1: 50.0 * sums[2],
        },
        zero_division: flag,
    })
}

/// Pooled true positives, false positives and false negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PairCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Pools (case, label) pairs over labels in `restrict_to` (all labels when
/// `None`). Every label must be below `labels`.
pub fn micro_counts(
    pred: &[Vec<usize>],
    gold: &[Vec<usize>],
    labels: usize,
    restrict_to: Option<&[usize]>,
) -> Result<PairCounts> {
    same_len(pred.len(), gold.len())?;
    let mut keep = vec![restrict_to.is_none(); labels];
    for &l in restrict_to.unwrap_or(&[]) {
        *keep
            .get_mut(l)
            .ok_or_else(|| Error::Argument(format!("label {l} outside a vocabulary of {labels}")))? = true;
    }
    let mut c = PairCounts::default();
    let mut p_set = vec![false; labels];
    let mut g_set = vec![false; labels];
    for (p, g) in pred.iter().zip(gold) {
        p_set.fill(false);
        g_set.fill(false);
        for (set, ls) in [(&mut p_set, p), (&mut g_set, g)] {
            for &l in ls {
                *set.get_mut(l)
                    .ok_or_else(|| Error::Argument(format!("label {l} outside a vocabulary of {labels}")))? = true;
            }
        }
        for l in 0..labels {
            if !keep[l] {
                continue;
            }
            match (p_set[l], g_set[l]) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                _ => {}
            }
        }
    }
    Ok(c)
}

impl PairCounts {
    pub fn prf(&self) -> Scored {
        let mut flag = false;
        let p = ratio(self.tp, self.tp + self.fp, &mut flag);
        let r = ratio(self.tp, self.tp + self.fn_, &mut flag);
        Scored {
            prf: Prf {
                precision: 100.0 * p,
                recall: 100.0 * r,
                f1: 100.0 * harmonic(p, r),
            },
            zero_division: flag,
        }
    }
}

pub fn micro_prf(pred: &[Vec<usize>], gold: &[Vec<usize>], labels: usize, restrict_to: Option<&[usize]>) -> Result<Scored> {
    Ok(micro_counts(pred, gold, labels, restrict_to)?.prf())
}

pub fn mae(pred: &[f64], gold: &[f64]) -> Result<f64> {
    same_len(pred.len(), gold.len())?;
    if pred.is_empty() {
        return Err(Error::Argument("mean absolute error of an empty sample".into()));
    }
    Ok(pred.iter().zip(gold).map(|(p, g)| (p - g).abs()).sum::<f64>() / pred.len() as f64)
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        None
    } else {
        Some((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
    }
}

/// Pearson correlation of average ranks; `None` (N/A) when either side is
/// constant.
pub fn spearman_rho(pred: &[f64], gold: &[f64]) -> Result<Option<f64>> {
    same_len(pred.len(), gold.len())?;
    if pred.len() < 2 {
        return Err(Error::Argument("Spearman correlation needs at least two pairs".into()));
    }
    Ok(pearson(&average_ranks(pred), &average_ranks(gold)))
}

/// Label indices of each frequency stratum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrataIndex {
    pub frequent: Vec<usize>,
    pub few: Vec<usize>,
    pub zero: Vec<usize>,
}

impl StrataIndex {
    pub fn new(strata: &FrequencyStrata, labels: &LabelVocabulary) -> Result<Self> {
        let idx = |names: &[String]| -> Result<Vec<usize>> {
            names
                .iter()
                .map(|n| {
                    labels
                        .index_of(n)
                        .ok_or_else(|| Error::Argument(format!("stratum label {n} not in vocabulary")))
                })
                .collect()
        };
        Ok(StrataIndex {
            frequent: idx(&strata.frequent)?,
            few: idx(&strata.few)?,
            zero: idx(&strata.zero)?,
        })
    }
}

/// Micro scores overall and per non-empty stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedPrf {
    pub overall: Scored,
    pub frequent: Option<Scored>,
    pub few: Option<Scored>,
    pub counts: [PairCounts; 4],
}

pub fn stratified_report(pred: &[Vec<usize>], gold: &[Vec<usize>], labels: usize, strata: &StrataIndex) -> Result<StratifiedPrf> {
    let overall = micro_counts(pred, gold, labels, None)?;
    let frequent = micro_counts(pred, gold, labels, Some(&strata.frequent))?;
    let few = micro_counts(pred, gold, labels, Some(&strata.few))?;
    let zero = micro_counts(pred, gold, labels, Some(&strata.zero))?;
    Ok(StratifiedPrf {
        overall: overall.prf(),
        frequent: (!strata.frequent.is_empty()).then(|| frequent.prf()),
        few: (!strata.few.is_empty()).then(|| few.prf()),
        counts: [overall, frequent, few, zero],
    })
}

/// A metric value, or N/A with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    pub value: Option<f64>,
    pub note: Option<String>,
}

impl Metric {
    fn of(v: f64) -> Self {
        Metric { value: Some(v), note: None }
    }

    fn na(reason: &str) -> Self {
        Metric {
            value: None,
            note: Some(reason.into()),
        }
    }

    fn flagged(v: f64, zero_division: bool) -> Self {
        Metric {
            value: Some(v),
            note: zero_division.then(|| "zero denominator counted as 0".into()),
        }
    }
}

/// Scores of one run on one task.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub task: Task,
    /// Keyed by metric name; the order is the serialization order.
    pub values: BTreeMap<String, Metric>,
}

fn put_prf(values: &mut BTreeMap<String, Metric>, prefix: &str, s: Option<&Scored>, missing: &str) {
    for (name, v) in [
        ("precision", s.map(|s| s.prf.precision)),
        ("recall", s.map(|s| s.prf.recall)),
        ("f1", s.map(|s| s.prf.f1)),
    ] {
        let m = match (v, s) {
            (Some(v), Some(s)) => Metric::flagged(v, s.zero_division),
            _ => Metric::na(missing),
        };
        values.insert(format!("{prefix}_{name}"), m);
    }
}

impl MetricsReport {
    pub fn binary(pred: &[bool], gold: &[bool]) -> Result<Self> {
        let s = macro_prf(pred, gold)?;
        let mut values = BTreeMap::new();
        put_prf(&mut values, "macro", Some(&s), "");
        Ok(MetricsReport {
            task: Task::Binary,
            values,
        })
    }

    pub fn multilabel(pred: &[Vec<usize>], gold: &[Vec<usize>], labels: usize, strata: &StrataIndex) -> Result<Self> {
        let s = stratified_report(pred, gold, labels, strata)?;
        let mut values = BTreeMap::new();
        put_prf(&mut values, "micro", Some(&s.overall), "");
        put_prf(&mut values, "frequent", s.frequent.as_ref(), "no labels in the frequent stratum");
        put_prf(&mut values, "few", s.few.as_ref(), "no labels in the few stratum");
        Ok(MetricsReport {
            task: Task::Multilabel,
            values,
        })
    }

    pub fn importance(pred: &[f64], gold: &[f64]) -> Result<Self> {
        let mut values = BTreeMap::new();
        values.insert("mae".into(), Metric::of(mae(pred, gold)?));
        let rho = if pred.len() < 2 {
            Metric::na("fewer than two cases")
        } else {
            match spearman_rho(pred, gold)? {
                Some(r) => Metric::of(r),
                None => Metric::na("constant predictions or gold values"),
            }
        };
        values.insert("spearman".into(), rho);
        Ok(MetricsReport {
            task: Task::Importance,
            values,
        })
    }

    /// Scores decoded predictions against targets of the same task.
    pub fn from_predictions(preds: &[Prediction], targets: &[Target], labels: usize, strata: Option<&StrataIndex>) -> Result<Self> {
        same_len(preds.len(), targets.len())?;
        let task = targets
            .first()
            .map(Target::task)
            .ok_or_else(|| Error::Argument("no cases to evaluate".into()))?;
        let mismatch = || Error::Argument("prediction and target tasks differ".into());
        match task {
            Task::Binary => {
                let mut p = Vec::new();
                let mut g = Vec::new();
                for (pr, t) in preds.iter().zip(targets) {
                    match (pr, t) {
                        (Prediction::Binary { positive, .. }, Target::Binary(y)) => {
                            p.push(*positive);
                            g.push(*y);
                        }
                        _ => return Err(mismatch()),
                    }
                }
                Self::binary(&p, &g)
            }
            Task::Multilabel => {
                let mut p = Vec::new();
                let mut g = Vec::new();
                for (pr, t) in preds.iter().zip(targets) {
                    match (pr, t) {
                        (Prediction::Multilabel { labels, .. }, Target::Multilabel(y)) => {
                            p.push(labels.clone());
                            g.push(y.clone());
                        }
                        _ => return Err(mismatch()),
                    }
                }
                let all = StrataIndex {
                    frequent: (0..labels).collect(),
                    few: vec![],
                    zero: vec![],
                };
                Self::multilabel(&p, &g, labels, strata.unwrap_or(&all))
            }
            Task::Importance => {
                let mut p = Vec::new();
                let mut g = Vec::new();
                for (pr, t) in preds.iter().zip(targets) {
                    match (pr, t) {
                        (Prediction::Importance { value, .. }, Target::Importance(y)) => {
                            p.push(*value);
                            g.push(*y);
                        }
                        _ => return Err(mismatch()),
                    }
                }
                Self::importance(&p, &g)
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).and_then(|m| m.value)
    }

    /// `{task: {metric: value | null}, "notes": {metric: reason}}`.
    pub fn to_json(&self) -> Value {
        let mut metrics = Map::new();
        let mut notes = Map::new();
        for (k, m) in &self.values {
            metrics.insert(k.clone(), m.value.map_or(Value::Null, Value::from));
            if let Some(n) = &m.note {
                notes.insert(k.clone(), Value::from(n.as_str()));
            }
        }
        let mut root = Map::new();
        root.insert(self.task.as_str().into(), Value::Object(metrics));
        root.insert("notes".into(), Value::Object(notes));
        Value::Object(root)
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let bad = || Error::Argument("malformed metrics document".into());
        let obj = v.as_object().ok_or_else(bad)?;
        let notes = obj.get("notes").and_then(Value::as_object);
        let (task_name, metrics) = obj
            .iter()
            .find(|(k, _)| k.as_str() != "notes")
            .ok_or_else(bad)?;
        let task: Task = task_name.parse()?;
        let mut values = BTreeMap::new();
        for (k, val) in metrics.as_object().ok_or_else(bad)? {
            let value = match val {
                Value::Null => None,
                v => Some(v.as_f64().ok_or_else(bad)?),
            };
            let note = notes.and_then(|n| n.get(k)).and_then(Value::as_str).map(String::from);
            values.insert(k.clone(), Metric { value, note });
        }
        Ok(MetricsReport { task, values })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("metrics serialize") + "\n"
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "task: {}", self.task.as_str())?;
        for (k, m) in &self.values {
            match (m.value, k.as_str()) {
                (None, _) => writeln!(f, "  {k:<20} N/A")?,
                (Some(v), "mae" | "spearman") => writeln!(f, "  {k:<20} {v:.3}")?,
                (Some(v), _) => writeln!(f, "  {k:<20} {v:.1}")?,
            }
        }
        Ok(())
    }
}

/// Mean and population std of each metric across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub task: Task,
    pub metrics: BTreeMap<String, MeanStd>,
}

/// A metric that is N/A in any run is N/A in the aggregate.
pub fn aggregate(reports: &[MetricsReport]) -> Result<AggregateReport> {
    let first = reports.first().ok_or_else(|| Error::Argument("no reports to aggregate".into()))?;
    if reports.iter().any(|r| r.task != first.task) {
        return Err(Error::Argument("reports of different tasks".into()));
    }
    let mut metrics = BTreeMap::new();
    for name in first.values.keys() {
        let vals: Option<Vec<f64>> = reports.iter().map(|r| r.get(name)).collect();
        let entry = match vals {
            Some(v) => {
                let (m, s) = mean_std(&v);
                MeanStd {
                    mean: Some(m),
                    std: Some(s),
                    runs: v.len(),
                }
            }
            None => MeanStd {
                mean: None,
                std: None,
                runs: reports.len(),
            },
        };
        metrics.insert(name.clone(), entry);
    }
    Ok(AggregateReport {
        task: first.task,
        metrics,
    })
}

impl fmt::Display for AggregateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "task: {}", self.task.as_str())?;
        for (k, m) in &self.metrics {
            match (m.mean, m.std) {
                (Some(a), Some(s)) if k == "mae" || k == "spearman" => writeln!(f, "  {k:<20} {a:.3} ± {s:.3}")?,
                (Some(a), Some(s)) => writeln!(f, "  {k:<20} {a:.1} ± {s:.1}")?,
                _ => writeln!(f, "  {k:<20} N/A")?,
            }
        }
        Ok(())
    }
}
