use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::par;

pub const DEFAULT_TRIALS: usize = 50;

/// Discrete hyperparameter ranges; a trial picks one value per field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub batch_size: Vec<usize>,
    pub dropout: Vec<f64>,
    pub word_dropout: Vec<f64>,
    pub hidden: Vec<usize>,
    pub layers: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            batch_size: vec![8, 12, 16],
            dropout: vec![0.1, 0.2, 0.3, 0.4],
            word_dropout: vec![0.0, 0.01, 0.02],
            hidden: vec![200, 300, 400],
            layers: vec![1, 2],
        }
    }
}

/// One point of a [`SearchSpace`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub batch_size: usize,
    pub dropout: f64,
    pub word_dropout: f64,
    pub hidden: usize,
    pub layers: usize,
}

impl Trial {
    pub fn of(spec: &ModelSpec, cfg: &TrainConfig) -> Self {
        Trial {
            batch_size: cfg.batch_size,
            dropout: spec.dropout,
            word_dropout: spec.word_dropout,
            hidden: spec.hidden,
            layers: spec.layers,
        }
    }

    pub fn apply(&self, spec: &ModelSpec, cfg: &TrainConfig) -> (ModelSpec, TrainConfig) {
        (
            ModelSpec {
                dropout: self.dropout,
                word_dropout: self.word_dropout,
                hidden: self.hidden,
                layers: self.layers,
                ..spec.clone()
            },
            TrainConfig {
                batch_size: self.batch_size,
                ..cfg.clone()
            },
        )
    }
}

impl SearchSpace {
    /// Number of distinct trials.
    pub fn size(&self) -> usize {
        self.batch_size.len() * self.dropout.len() * self.word_dropout.len() * self.hidden.len() * self.layers.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, n) in [
            ("batch_size", self.batch_size.len()),
            ("dropout", self.dropout.len()),
            ("word_dropout", self.word_dropout.len()),
            ("hidden", self.hidden.len()),
            ("layers", self.layers.len()),
        ] {
            if n == 0 {
                return Err(Error::Config(format!("search space field `{name}` is empty")));
            }
        }
        Ok(())
    }

    /// Ok when every field of `trial` is one of the declared values;
    /// otherwise a configuration error naming the first offending field.
    pub fn check(&self, trial: &Trial) -> Result<()> {
        let out = |field: &str, value: String| {
            Err(Error::Config(format!("{field} = {value} is outside the search space")))
        };
        if !self.batch_size.contains(&trial.batch_size) {
            return out("batch_size", trial.batch_size.to_string());
        }
        if !self.dropout.contains(&trial.dropout) {
            return out("dropout", trial.dropout.to_string());
        }
        if !self.word_dropout.contains(&trial.word_dropout) {
            return out("word_dropout", trial.word_dropout.to_string());
        }
        if !self.hidden.contains(&trial.hidden) {
            return out("hidden", trial.hidden.to_string());
        }
        if !self.layers.contains(&trial.layers) {
            return out("layers", trial.layers.to_string());
        }
        Ok(())
    }
}

/// `n` independent uniform draws over the product space (duplicates allowed).
pub fn sample_configs(space: &SearchSpace, n: usize, seed: u64) -> Result<Vec<Trial>> {
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| Trial {
            batch_size: *space.batch_size.choose(&mut rng).expect("validated"),
            dropout: *space.dropout.choose(&mut rng).expect("validated"),
            word_dropout: *space.word_dropout.choose(&mut rng).expect("validated"),
            hidden: *space.hidden.choose(&mut rng).expect("validated"),
            layers: *space.layers.choose(&mut rng).expect("validated"),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    /// Position of the trial in the sampled list.
    pub index: usize,
    pub trial: Trial,
    pub dev_loss: f64,
}

/// Scores every trial with `eval` (in parallel) and ranks them by dev loss,
/// ties by sample order.
pub fn random_search<E>(trials: &[Trial], eval: E) -> Result<Vec<Ranked>>
where
    E: Fn(usize, &Trial) -> Result<f64> + Sync + Send,
{
    if trials.is_empty() {
        return Err(Error::Argument("no trials to search".into()));
    }
    let idx: Vec<usize> = (0..trials.len()).collect();
    let losses = par::map(&idx, |&i| eval(i, &trials[i]));
    let mut ranked = Vec::with_capacity(trials.len());
    for (i, l) in losses.into_iter().enumerate() {
        ranked.push(Ranked {
            index: i,
            trial: trials[i],
            dev_loss: l?,
        });
    }
    ranked.sort_by(|a, b| a.dev_loss.total_cmp(&b.dev_loss).then(a.index.cmp(&b.index)));
    Ok(ranked)
}

/// Runs `run` once per seed (in parallel); results come back in seed order.
pub fn multi_run<R, E>(seeds: &[u64], run: E) -> Result<Vec<R>>
where
    R: Send,
    E: Fn(u64) -> Result<R> + Sync + Send,
{
    if seeds.len() < 2 {
        return Err(Error::Argument("multi-run needs at least two seeds".into()));
    }
    par::map(seeds, |&s| run(s)).into_iter().collect()
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
