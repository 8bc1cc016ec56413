//! Majority, coin-toss and tf-idf n-gram linear max-margin baselines.

mod linear;
mod tfidf;

use std::fmt;
use std::str::FromStr;

use ljp_tensor::{Checkpoint, Tensor};
use serde::{Deserialize, Serialize};

use crate::corpus::{Case, LabelVocabulary};
use crate::error::{Error, Result};
use crate::models::{Prediction, Target, Task, IMPORTANCE_RANGE};
use crate::par;
use crate::training::mix;

pub use linear::{svm_train, svm_train_ovr, svr_train, LinearMode, LinearModel, LinearUnit, SvmParams};
pub use tfidf::{dot, SparseVec, TfidfFeaturizer, DEFAULT_MAX_FEATURES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Majority,
    CoinToss,
    BowLinear,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [BaselineKind::Majority, BaselineKind::CoinToss, BaselineKind::BowLinear];

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::Majority => "majority",
            BaselineKind::CoinToss => "coin-toss",
            BaselineKind::BowLinear => "bow-linear",
        }
    }

    pub fn supports(self, task: Task) -> bool {
        match self {
            BaselineKind::Majority => task != Task::Multilabel,
            BaselineKind::CoinToss => task == Task::Binary,
            BaselineKind::BowLinear => true,
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown baseline `{s}`")))
    }
}

/// Most frequent class id; ties go to the lower id.
pub fn majority_class(classes: &[usize]) -> Result<usize> {
    let max = *classes
        .iter()
        .max()
        .ok_or_else(|| Error::Argument("majority of an empty label list".into()))?;
    let mut counts = vec![0usize; max + 1];
    for &c in classes {
        counts[c] += 1;
    }
    let best = *counts.iter().max().expect("non-empty");
    Ok(counts.iter().position(|&n| n == best).expect("max exists"))
}

/// Constant predictor: the majority binary class or importance score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Majority {
    pub task: Task,
    pub value: usize,
}

pub fn majority_predict(targets: &[Target]) -> Result<Majority> {
    let task = targets
        .first()
        .map(Target::task)
        .ok_or_else(|| Error::Argument("majority of an empty label list".into()))?;
    let classes = targets
        .iter()
        .map(|t| match t {
            Target::Binary(y) => Ok(usize::from(*y)),
            Target::Importance(v) if *v >= 0.0 && v.fract() == 0.0 => Ok(*v as usize),
            _ => Err(Error::Config(format!("majority baseline does not support {} targets", t.task().as_str()))),
        })
        .collect::<Result<Vec<_>>>()?;
    if targets.iter().any(|t| t.task() != task) {
        return Err(Error::Argument("mixed target tasks".into()));
    }
    Ok(Majority {
        task,
        value: majority_class(&classes)?,
    })
}

impl Majority {
    pub fn predict(&self) -> Prediction {
        match self.task {
            Task::Binary => Prediction::Binary {
                score: self.value as f64,
                positive: self.value == 1,
            },
            _ => Prediction::Importance {
                raw: self.value as f64,
                value: self.value as f64,
            },
        }
    }
}

/// FNV-1a, stable across platforms and releases.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Fair coin per case, keyed by the case id and seed, so the outcome does
/// not depend on case order.
pub fn coin_toss_predict(case_id: &str, seed: u64) -> bool {
    mix(seed, fnv1a(case_id), 0x636f_696e) >> 63 == 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub min_n: usize,
    pub max_n: usize,
    pub max_features: usize,
    pub svm: SvmParams,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            min_n: 1,
            max_n: 5,
            max_features: DEFAULT_MAX_FEATURES,
            svm: SvmParams::default(),
        }
    }
}

/// tf-idf features into a linear max-margin model.
#[derive(Debug, Clone, PartialEq)]
pub struct BowLinear {
    pub task: Task,
    pub featurizer: TfidfFeaturizer,
    pub model: LinearModel,
}

impl BowLinear {
    pub fn fit(task: Task, train: &[Case], labels: &LabelVocabulary, cfg: &BaselineConfig) -> Result<Self> {
        let mut featurizer = TfidfFeaturizer::new(cfg.min_n, cfg.max_n, cfg.max_features);
        featurizer.fit(train)?;
        let x = featurizer.transform_all(train)?;
        let dim = featurizer.dim();
        let targets = train.iter().map(|c| Target::of(c, task, labels)).collect::<Result<Vec<_>>>()?;
        let model = match task {
            Task::Binary => {
                let y: Vec<bool> = targets.iter().map(|t| matches!(t, Target::Binary(true))).collect();
                svm_train(&x, &y, dim, &cfg.svm)?.0
            }
            Task::Multilabel => {
                let y: Vec<Vec<usize>> = targets
                    .into_iter()
                    .map(|t| match t {
                        Target::Multilabel(s) => s,
                        _ => unreachable!("targets built for the multilabel task"),
                    })
                    .collect();
                svm_train_ovr(&x, &y, labels.len(), dim, &cfg.svm)?
            }
            Task::Importance => {
                let y: Vec<f64> = train.iter().map(|c| f64::from(c.importance)).collect();
                svr_train(&x, &y, dim, &cfg.svm)?.0
            }
        };
        Ok(BowLinear { task, featurizer, model })
    }

    pub fn predict(&self, case: &Case) -> Result<Prediction> {
        let x = self.featurizer.transform(case)?;
        let d = self.model.decisions(&x);
        Ok(match self.task {
            Task::Binary => Prediction::Binary {
                score: d[0],
                positive: d[0] >= 0.0,
            },
            Task::Multilabel => Prediction::Multilabel {
                labels: (0..d.len()).filter(|&l| d[l] >= 0.0).collect(),
                scores: d,
            },
            Task::Importance => Prediction::Importance {
                raw: d[0],
                value: d[0].clamp(IMPORTANCE_RANGE.0, IMPORTANCE_RANGE.1),
            },
        })
    }
}

/// A fitted baseline of any kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Baseline {
    Majority(Majority),
    CoinToss { seed: u64 },
    BowLinear(Box<BowLinear>),
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: BaselineKind,
    task: Task,
    #[serde(default)]
    value: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    ngram: (usize, usize),
    #[serde(default)]
    mode: Option<LinearMode>,
    #[serde(default)]
    svm: Option<SvmParams>,
}

impl Baseline {
    pub fn fit(kind: BaselineKind, task: Task, train: &[Case], labels: &LabelVocabulary, cfg: &BaselineConfig, seed: u64) -> Result<Self> {
        if !kind.supports(task) {
            return Err(Error::Config(format!("the {kind} baseline does not support the {} task", task.as_str())));
        }
        if train.is_empty() {
            return Err(Error::Argument("cannot fit a baseline on an empty split".into()));
        }
        Ok(match kind {
            BaselineKind::Majority => {
                let targets = train.iter().map(|c| Target::of(c, task, labels)).collect::<Result<Vec<_>>>()?;
                Baseline::Majority(majority_predict(&targets)?)
            }
            BaselineKind::CoinToss => Baseline::CoinToss { seed },
            BaselineKind::BowLinear => {
                let cfg = BaselineConfig {
                    svm: SvmParams { seed, ..cfg.svm },
                    ..cfg.clone()
                };
                Baseline::BowLinear(Box::new(BowLinear::fit(task, train, labels, &cfg)?))
            }
        })
    }

    pub fn kind(&self) -> BaselineKind {
        match self {
            Baseline::Majority(_) => BaselineKind::Majority,
            Baseline::CoinToss { .. } => BaselineKind::CoinToss,
            Baseline::BowLinear(_) => BaselineKind::BowLinear,
        }
    }

    pub fn task(&self) -> Task {
        match self {
            Baseline::Majority(m) => m.task,
            Baseline::CoinToss { .. } => Task::Binary,
            Baseline::BowLinear(b) => b.task,
        }
    }

    pub fn predict(&self, case: &Case) -> Result<Prediction> {
        match self {
            Baseline::Majority(m) => Ok(m.predict()),
            Baseline::CoinToss { seed } => {
                let positive = coin_toss_predict(&case.case_id, *seed);
                Ok(Prediction::Binary {
                    score: f64::from(u8::from(positive)),
                    positive,
                })
            }
            Baseline::BowLinear(b) => b.predict(case),
        }
    }

    pub fn predict_all(&self, cases: &[Case]) -> Result<Vec<Prediction>> {
        par::map(cases, |c| self.predict(c)).into_iter().collect()
    }

    /// Header in the `baseline` metadata entry; tf-idf vocabulary, idf and
    /// linear weights as named entries.
    pub fn to_checkpoint(&self) -> Result<Checkpoint<f64>> {
        let mut ck = Checkpoint::default();
        let mut h = Header {
            kind: self.kind(),
            task: self.task(),
            value: 0,
            seed: 0,
            ngram: (0, 0),
            mode: None,
            svm: None,
        };
        match self {
            Baseline::Majority(m) => h.value = m.value,
            Baseline::CoinToss { seed } => h.seed = *seed,
            Baseline::BowLinear(b) => {
                let f = &b.featurizer;
                let k = f.dim();
                h.ngram = (f.min_n, f.max_n);
                h.mode = Some(b.model.mode);
                h.svm = Some(b.model.params);
                ck.meta.insert("tfidf.vocabulary".into(), serde_json::to_string(f.vocabulary())?);
                ck.tensors.push(("tfidf.idf".into(), Tensor::from_f64(&[1, k], f.idf())?));
                let u = b.model.units.len();
                let w: Vec<f64> = b.model.units.iter().flat_map(|x| x.w.iter().copied()).collect();
                let bias: Vec<f64> = b.model.units.iter().map(|x| x.b).collect();
                ck.tensors.push(("linear.w".into(), Tensor::from_f64(&[u, k], &w)?));
                ck.tensors.push(("linear.b".into(), Tensor::from_f64(&[u, 1], &bias)?));
            }
        }
        ck.meta.insert("baseline".into(), serde_json::to_string(&h)?);
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint<f64>) -> Result<Self> {
        let missing = |k: &str| Error::State(format!("baseline checkpoint lacks `{k}`"));
        let h: Header = serde_json::from_str(ck.meta.get("baseline").ok_or_else(|| missing("baseline"))?)?;
        Ok(match h.kind {
            BaselineKind::Majority => Baseline::Majority(Majority {
                task: h.task,
                value: h.value,
            }),
            BaselineKind::CoinToss => Baseline::CoinToss { seed: h.seed },
            BaselineKind::BowLinear => {
                let vocab: Vec<String> =
                    serde_json::from_str(ck.meta.get("tfidf.vocabulary").ok_or_else(|| missing("tfidf.vocabulary"))?)?;
                let tensor = |k: &str| ck.get(k).ok_or_else(|| missing(k));
                let idf = tensor("tfidf.idf")?.data().to_vec();
                let featurizer = TfidfFeaturizer::from_parts(h.ngram.0, h.ngram.1, vocab, idf)?;
                let w = tensor("linear.w")?;
                let b = tensor("linear.b")?;
                let k = featurizer.dim();
                if w.shape().get(1) != Some(&k) || w.shape()[0] != b.shape()[0] {
                    return Err(Error::State("linear weights do not match the tf-idf dimension".into()));
                }
                let units = w
                    .data()
                    .chunks(k)
                    .zip(b.data())
                    .map(|(w, &b)| LinearUnit { w: w.to_vec(), b })
                    .collect();
                Baseline::BowLinear(Box::new(BowLinear {
                    task: h.task,
                    featurizer,
                    model: LinearModel {
                        mode: h.mode.ok_or_else(|| missing("mode"))?,
                        units,
                        params: h.svm.unwrap_or_default(),
                    },
                }))
            }
        })
    }
}
