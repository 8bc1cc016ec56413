use ljp_tensor::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Case, LabelVocabulary};
use crate::encoders::affine;
use crate::error::{Error, Result};
use crate::training::glorot_uniform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Binary,
    Multilabel,
    Importance,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Binary => "binary",
            Task::Multilabel => "multilabel",
            Task::Importance => "importance",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Task::Binary),
            "multilabel" => Ok(Task::Multilabel),
            "importance" => Ok(Task::Importance),
            _ => Err(Error::Argument(format!("unknown task {s}"))),
        }
    }
}

/// Output activation of the multi-label head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MultilabelActivation {
    /// Independent sigmoid per label; the empty set is reachable.
    #[default]
    Sigmoid,
    /// Softmax over the L labels plus a trailing "no violation" class.
    SoftmaxWithNone,
}

/// Gold answer of one case for one task.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Binary(bool),
    /// Label indices, sorted.
    Multilabel(Vec<usize>),
    Importance(f64),
}

impl Target {
    pub fn of(case: &Case, task: Task, labels: &LabelVocabulary) -> Result<Self> {
        Ok(match task {
            Task::Binary => Target::Binary(case.is_violation()),
            Task::Multilabel => {
                let mut idx = case
                    .violated_articles
                    .iter()
                    .map(|a| {
                        labels.index_of(a).ok_or_else(|| Error::Validation {
                            case_id: case.case_id.clone(),
                            detail: format!("article {a} is not in the label vocabulary"),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                idx.sort_unstable();
                idx.dedup();
                Target::Multilabel(idx)
            }
            Task::Importance => Target::Importance(f64::from(case.importance)),
        })
    }

    pub fn task(&self) -> Task {
        match self {
            Target::Binary(_) => Task::Binary,
            Target::Multilabel(_) => Task::Multilabel,
            Target::Importance(_) => Task::Importance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Prediction {
    Binary { score: f64, positive: bool },
    Multilabel { scores: Vec<f64>, labels: Vec<usize> },
    Importance { raw: f64, value: f64 },
}

pub const IMPORTANCE_RANGE: (f64, f64) = (1.0, 4.0);

/// Final linear layer plus activation and decision rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskHead {
    pub task: Task,
    pub labels: usize,
    pub activation: MultilabelActivation,
    pub threshold: f64,
    pub w: ParamId,
    pub b: ParamId,
}

impl TaskHead {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        input: usize,
        task: Task,
        labels: usize,
        activation: MultilabelActivation,
        threshold: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let out = Self::width(task, labels, activation)?;
        Ok(TaskHead {
            task,
            labels,
            activation,
            threshold,
            w: store.add("head.w", glorot_uniform(&[input, out], rng), true)?,
            b: store.add("head.b", Tensor::zeros(&[1, out]), true)?,
        })
    }

    /// One weight row per label for label-wise representations.
    pub fn label_wise<F: Real>(
        store: &mut ParamStore<F>,
        input: usize,
        labels: usize,
        threshold: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(TaskHead {
            task: Task::Multilabel,
            labels,
            activation: MultilabelActivation::Sigmoid,
            threshold,
            w: store.add("head.w", glorot_uniform(&[labels, input], rng), true)?,
            b: store.add("head.b", Tensor::zeros(&[labels, 1]), true)?,
        })
    }

    fn width(task: Task, labels: usize, activation: MultilabelActivation) -> Result<usize> {
        match task {
            Task::Binary | Task::Importance => Ok(1),
            Task::Multilabel if labels == 0 => Err(Error::Config("multilabel task needs at least one label".into())),
            Task::Multilabel => Ok(match activation {
                MultilabelActivation::Sigmoid => labels,
                MultilabelActivation::SoftmaxWithNone => labels + 1,
            }),
        }
    }

    /// `1 × m` case embedding → `1 × K` activated output.
    pub fn apply<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, h: Var) -> Result<Var> {
        let (w, b) = (tape.param(store, self.w), tape.param(store, self.b));
        let z = affine(tape, h, w, b)?;
        self.activate(tape, z)
    }

    /// `L × m` label embeddings → `1 × L` sigmoid scores, label `l` using
    /// only row `l` of the weights.
    pub fn apply_label_wise<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, e: Var) -> Result<Var> {
        let (w, b) = (tape.param(store, self.w), tape.param(store, self.b));
        let prod = tape.mul(e, w)?;
        let z = tape.sum_axis(prod, 1)?;
        let z = tape.add(z, b)?;
        let z = tape.transpose(z)?;
        Ok(tape.sigmoid(z)?)
    }

    fn activate<F: Real>(&self, tape: &mut Tape<F>, z: Var) -> Result<Var> {
        Ok(match (self.task, self.activation) {
            (Task::Importance, _) => z,
            (Task::Binary, _) | (Task::Multilabel, MultilabelActivation::Sigmoid) => tape.sigmoid(z)?,
            (Task::Multilabel, MultilabelActivation::SoftmaxWithNone) => tape.softmax(z, None)?,
        })
    }

    /// Decision rule on an activated output row.
    pub fn predict(&self, task: Task, output: &[f64]) -> Result<Prediction> {
        if task != self.task {
            return Err(Error::Config(format!(
                "head was built for {} but {} was requested",
                self.task.as_str(),
                task.as_str()
            )));
        }
        decide(task, self.labels, self.threshold, output)
    }
}

/// Binary: positive iff `score ≥ τ`. Multilabel: labels whose score is
/// `≥ τ` (the trailing no-violation column, if any, is never a label).
/// Importance: raw value clipped to `[1, 4]`.
pub fn decide(task: Task, labels: usize, threshold: f64, output: &[f64]) -> Result<Prediction> {
    let need = |n: usize| {
        if output.len() < n {
            Err(Error::Argument(format!("{} output needs {n} values, got {}", task.as_str(), output.len())))
        } else {
            Ok(())
        }
    };
    Ok(match task {
        Task::Binary => {
            need(1)?;
            Prediction::Binary {
                score: output[0],
                positive: output[0] >= threshold,
            }
        }
        Task::Multilabel => {
            need(labels)?;
            let scores = output[..labels].to_vec();
            let chosen = (0..labels).filter(|&l| scores[l] >= threshold).collect();
            Prediction::Multilabel { scores, labels: chosen }
        }
        Task::Importance => {
            need(1)?;
            Prediction::Importance {
                raw: output[0],
                value: output[0].clamp(IMPORTANCE_RANGE.0, IMPORTANCE_RANGE.1),
            }
        }
    })
}
