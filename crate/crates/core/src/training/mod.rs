//! Losses, Adam, word dropout, early stopping, the training loop, random
//! hyperparameter search and multi-seed runs.

mod init;
mod loss;
mod optim;
mod search;

use ljp_tensor::{grad_check_params, GradCheckReport, Gradients, Real, Tape};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Case, LabelVocabulary};
use crate::error::{Error, Result};
use crate::models::{CaseInput, Model, Target};
use crate::par;

pub use init::{glorot_init, glorot_uniform};
pub use loss::{case_loss, loss_binary, loss_importance, loss_multilabel, loss_multilabel_softmax, SCORE_EPS};
pub use optim::{word_dropout, Adam, AdamState, DEFAULT_LEARNING_RATE};
pub use search::{mean_std, multi_run, random_search, sample_configs, Ranked, SearchSpace, Trial, DEFAULT_TRIALS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without dev-loss improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            learning_rate: DEFAULT_LEARNING_RATE,
            max_epochs: 20,
            patience: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// What the stopping rule says after an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Tracks the best dev loss; stops after `patience` epochs without a strict
/// improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    best: Option<(usize, f64)>,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            bad_epochs: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        match self.best {
            Some((_, b)) if loss >= b => {
                self.bad_epochs += 1;
                if self.bad_epochs >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, loss));
                self.bad_epochs = 0;
                StopDecision::Improved
            }
        }
    }

    /// `(epoch, loss)` of the best epoch so far.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// One encoded case with its gold answer.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub case_id: String,
    pub input: CaseInput,
    pub target: Target,
}

pub fn examples<F: Real>(model: &Model<F>, cases: &[Case]) -> Result<Vec<Example>> {
    examples_for(model, &model.labels, cases)
}

fn examples_for<F: Real>(model: &Model<F>, labels: &LabelVocabulary, cases: &[Case]) -> Result<Vec<Example>> {
    let task = model.spec().task;
    cases
        .iter()
        .map(|c| {
            let input = model.encode(c);
            if input.facts.is_empty() {
                return Err(Error::Validation {
                    case_id: c.case_id.clone(),
                    detail: "no tokens in any fact".into(),
                });
            }
            Ok(Example {
                case_id: c.case_id.clone(),
                input,
                target: Target::of(c, task, labels)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
}

/// Loss history of one training run (written as `history.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// Dev loss of the freshly initialized model.
    pub initial_dev_loss: f64,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_loss: f64,
    pub stopped_early: bool,
}

/// SplitMix64 finalizer over three words; derives per-case seeds.
pub(crate) fn mix(a: u64, b: u64, c: u64) -> u64 {
    let mut z = a
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(b.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(c.wrapping_mul(0x94D0_49BB_1331_11EB))
        .wrapping_add(0x2545_F491_4F6C_DD1D);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_finite(value: f64, what: impl FnOnce() -> String) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence(format!("{} is {value}", what())))
    }
}

/// Loss and parameter gradients of one case. Word dropout and dropout draw
/// from `rng`.
pub fn case_gradient<F: Real>(model: &Model<F>, ex: &Example, rng: &mut ChaCha8Rng) -> Result<(f64, Gradients<F>)> {
    let spec = model.spec();
    let input = if spec.word_dropout > 0.0 {
        CaseInput {
            facts: ex.input.facts.iter().map(|f| word_dropout(f, spec.word_dropout, rng)).collect(),
            fact_index: ex.input.fact_index.clone(),
        }
    } else {
        ex.input.clone()
    };
    let mut tape = Tape::new();
    let fwd = model.network.forward(&mut tape, &model.store, &input, Some(rng))?;
    let loss = case_loss(&mut tape, fwd.output, &ex.target, spec.multilabel_activation)?;
    let value = tape.value(loss).item()?.as_f64();
    Ok((value, tape.backward(loss)?))
}

/// Central-difference check of the loss gradient of one case with respect
/// to every trainable parameter, dropout off.
pub fn check_case_gradients(
    model: &Model<f64>,
    ex: &Example,
    h: f64,
    tol: f64,
    max_coords: Option<usize>,
) -> Result<GradCheckReport> {
    let act = model.spec().multilabel_activation;
    let report = grad_check_params(
        &model.store,
        |tape, store| {
            let fwd = model
                .network
                .forward(tape, store, &ex.input, None)
                .map_err(|e| ljp_tensor::TensorError::Argument(e.to_string()))?;
            case_loss(tape, fwd.output, &ex.target, act).map_err(|e| ljp_tensor::TensorError::Argument(e.to_string()))
        },
        h,
        tol,
        max_coords,
    )?;
    Ok(report)
}

/// Mean inference loss over `examples`.
pub fn mean_loss<F: Real>(model: &Model<F>, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Argument("no examples to score".into()));
    }
    let spec = model.spec();
    let losses = par::map(examples, |ex| -> Result<f64> {
        let mut tape = Tape::inference();
        let fwd = model.network.forward(&mut tape, &model.store, &ex.input, None)?;
        let l = case_loss(&mut tape, fwd.output, &ex.target, spec.multilabel_activation)?;
        Ok(tape.value(l).item()?.as_f64())
    });
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / examples.len() as f64)
}

/// Mini-batch Adam with seeded shuffling and early stopping on the dev loss.
/// On return `model` holds the parameters of the best epoch.
pub fn train<F: Real>(model: &mut Model<F>, cfg: &TrainConfig, train: &[Example], dev: &[Example]) -> Result<RunResult> {
    cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Argument("training needs non-empty train and dev splits".into()));
    }
    let opt = Adam::with_lr(cfg.learning_rate);
    let mut state = AdamState::default();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let initial_dev_loss = mean_loss(model, dev)?;
    check_finite(initial_dev_loss, || "initial dev loss".into())?;
    let mut best_store = model.store.clone();
    let mut history = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64, u64::MAX)));
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let model_ref: &Model<F> = model;
            let results = par::map(batch, |&i| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64, i as u64));
                case_gradient(model_ref, &train[i], &mut rng)
            });
            let mut grads = Gradients::empty(model.store.len());
            for r in results {
                let (l, g) = r?;
                check_finite(l, || format!("epoch {epoch}, batch {b}: training loss"))?;
                loss_sum += l;
                grads.accumulate(&g);
            }
            grads.scale(F::c(1.0 / batch.len() as f64));
            if grads.has_nan() {
                return Err(Error::Divergence(format!("epoch {epoch}, batch {b}: NaN gradient")));
            }
            opt.step(&mut model.store, &grads, &mut state)?;
        }
        let train_loss = loss_sum / train.len() as f64;
        let dev_loss = mean_loss(model, dev)?;
        check_finite(dev_loss, || format!("epoch {epoch}: dev loss"))?;
        log::debug!("epoch {epoch}: train {train_loss:.5} dev {dev_loss:.5}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            dev_loss,
        });
        match stopper.observe(epoch, dev_loss) {
            StopDecision::Improved => best_store = model.store.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    model.store = best_store;
    let (best_epoch, best_dev_loss) = stopper.best().expect("at least one epoch ran");
    Ok(RunResult {
        initial_dev_loss,
        history,
        best_epoch,
        best_dev_loss,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_one_stops_after_first_worse_epoch() {
        let mut s = EarlyStopping::new(1);
        let decisions: Vec<_> = [1.0, 0.9, 0.95].iter().enumerate().map(|(i, &l)| s.observe(i + 1, l)).collect();
        assert_eq!(decisions, vec![StopDecision::Improved, StopDecision::Improved, StopDecision::Stop]);
        assert_eq!(s.best(), Some((2, 0.9)));
    }

    #[test]
    fn ties_do_not_count_as_improvement() {
        let mut s = EarlyStopping::new(2);
        assert_eq!(s.observe(1, 0.5), StopDecision::Improved);
        assert_eq!(s.observe(2, 0.5), StopDecision::Continue);
        assert_eq!(s.observe(3, 0.4), StopDecision::Improved);
        assert_eq!(s.observe(4, 0.6), StopDecision::Continue);
        assert_eq!(s.observe(5, 0.45), StopDecision::Stop);
        assert_eq!(s.best(), Some((3, 0.4)));
    }

    #[test]
    fn config_rules() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { patience: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn seeds_are_spread() {
        assert_ne!(mix(0, 1, 2), mix(0, 2, 1));
        assert_eq!(mix(5, 6, 7), mix(5, 6, 7));
    }
}
