//! Experiment configuration and run directories.
//!
//! A run writes `checkpoint.ljpt`, `history.json` (neural models only) and
//! `metrics.json` into `<out>/<name>/seed-<s>/`; a search writes one
//! `trial-<k>/seed-<s>/` directory per trial plus `search.json`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ljp_tensor::Checkpoint;
use serde::{Deserialize, Serialize};

use crate::baselines::{Baseline, BaselineConfig, BaselineKind};
use crate::corpus::{
    build_token_vocab, stratify_labels, Case, Corpus, SplitName, DEFAULT_FEW_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::evaluation::{aggregate, AggregateReport, MetricsReport, StrataIndex};
use crate::models::{Architecture, Model, ModelSpec, Prediction, Target, Task};
use crate::par;
use crate::trace::{capture_trace, export_heatmap, AttentionTrace};
use crate::training::{
    examples, multi_run, random_search, sample_configs, train, Ranked, RunResult, SearchSpace, TrainConfig, Trial,
    DEFAULT_TRIALS,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.ljpt";

/// A neural architecture or a baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Neural(Architecture),
    Baseline(BaselineKind),
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Ok(a) = s.parse() {
            return Ok(Method::Neural(a));
        }
        s.parse()
            .map(Method::Baseline)
            .map_err(|_| Error::Config(format!("unknown architecture `{s}`")))
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> Self {
        m.to_string()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Neural(a) => f.write_str(a.as_str()),
            Method::Baseline(b) => f.write_str(b.as_str()),
        }
    }
}

/// Everything a run depends on besides the data. `arch` and `task` override
/// the fields of the same name inside `model`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub arch: Method,
    pub task: Task,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
    pub search: SearchSpace,
    pub trials: usize,
    /// Seed of the hyperparameter sampler.
    pub search_seed: u64,
    pub seeds: Vec<u64>,
    pub few_threshold: usize,
    /// Minimum training frequency of a vocabulary word.
    pub min_freq: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "run".into(),
            arch: Method::Neural(Architecture::BigruAtt),
            task: Task::Binary,
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            baseline: BaselineConfig::default(),
            search: SearchSpace::default(),
            trials: DEFAULT_TRIALS,
            search_seed: 0,
            seeds: vec![0, 1, 2, 3, 4],
            few_threshold: DEFAULT_FEW_THRESHOLD,
            min_freq: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    /// Model spec with `arch` and `task` applied.
    pub fn spec(&self) -> ModelSpec {
        let mut spec = self.model.clone();
        if let Method::Neural(a) = self.arch {
            spec.arch = a;
        }
        spec.task = self.task;
        spec
    }

    /// Checks the model and training settings, and that they lie inside the
    /// search space.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("run name `{}` is not a plain directory name", self.name)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        self.train.validate()?;
        self.search.validate()?;
        match self.arch {
            Method::Neural(_) => {
                let mut spec = self.spec();
                if spec.labels == 0 {
                    spec.labels = 1;
                }
                spec.validate()?;
                self.search.check(&Trial::of(&spec, &self.train))
            }
            Method::Baseline(b) if !b.supports(self.task) => Err(Error::Config(format!(
                "the {b} baseline does not support the {} task",
                self.task.as_str()
            ))),
            Method::Baseline(_) => Ok(()),
        }
    }

    pub fn run_dir(&self, out: &Path) -> PathBuf {
        out.join(&self.name)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn strata(corpus: &Corpus, threshold: usize) -> Result<StrataIndex> {
    let s = stratify_labels(corpus.require(SplitName::Train)?, &corpus.labels, threshold)?;
    StrataIndex::new(&s, &corpus.labels)
}

/// Scores `predictions` of `cases` against their gold answers.
pub fn score(task: Task, corpus: &Corpus, cases: &[Case], predictions: &[Prediction], threshold: usize) -> Result<MetricsReport> {
    let targets = cases
        .iter()
        .map(|c| Target::of(c, task, &corpus.labels))
        .collect::<Result<Vec<_>>>()?;
    let strata = if task == Task::Multilabel {
        Some(strata(corpus, threshold)?)
    } else {
        None
    };
    MetricsReport::from_predictions(predictions, &targets, corpus.labels.len(), strata.as_ref())
}

/// A fitted neural model or baseline.
pub enum Fitted {
    Neural(Box<Model<f64>>),
    Baseline(Box<Baseline>),
}

impl Fitted {
    pub fn predict_all(&self, cases: &[Case]) -> Result<Vec<Prediction>> {
        match self {
            Fitted::Neural(m) => par::map(cases, |c| m.predict(c)).into_iter().collect(),
            Fitted::Baseline(b) => b.predict_all(cases),
        }
    }

    pub fn task(&self) -> Task {
        match self {
            Fitted::Neural(m) => m.spec().task,
            Fitted::Baseline(b) => b.task(),
        }
    }

    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>> {
        Ok(match self {
            Fitted::Neural(m) => m.to_checkpoint()?.to_bytes(),
            Fitted::Baseline(b) => b.to_checkpoint()?.to_bytes(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::<f64>::load(path)?;
        if ck.meta.contains_key("baseline") {
            Ok(Fitted::Baseline(Box::new(Baseline::from_checkpoint(&ck)?)))
        } else {
            Ok(Fitted::Neural(Box::new(Model::from_checkpoint(&ck)?)))
        }
    }
}

/// Outcome of one seed.
pub struct RunOutput {
    pub seed: u64,
    pub fitted: Fitted,
    pub history: Option<RunResult>,
    pub metrics: MetricsReport,
}

/// Trains on train (early stopping on dev) and scores on test. Neural runs
/// use `seed` for initialization, shuffling and dropout.
pub fn fit(cfg: &ExperimentConfig, corpus: &Corpus, seed: u64) -> Result<(Fitted, Option<RunResult>)> {
    let train_split = corpus.require(SplitName::Train)?;
    match cfg.arch {
        Method::Baseline(kind) => {
            let b = Baseline::fit(kind, cfg.task, &train_split.cases, &corpus.labels, &cfg.baseline, seed)?;
            Ok((Fitted::Baseline(Box::new(b)), None))
        }
        Method::Neural(_) => {
            let dev_split = corpus.require(SplitName::Dev)?;
            let vocab = build_token_vocab(train_split, cfg.min_freq)?;
            let mut model = Model::<f64>::new(&cfg.spec(), vocab, corpus.labels.clone(), seed)?;
            let tr = examples(&model, &train_split.cases)?;
            let dv = examples(&model, &dev_split.cases)?;
            let tc = TrainConfig {
                seed,
                ..cfg.train.clone()
            };
            let history = train(&mut model, &tc, &tr, &dv)?;
            Ok((Fitted::Neural(Box::new(model)), Some(history)))
        }
    }
}

pub fn run_seed(cfg: &ExperimentConfig, corpus: &Corpus, seed: u64, dir: Option<&Path>) -> Result<RunOutput> {
    let (fitted, history) = fit(cfg, corpus, seed)?;
    let test = &corpus.require(SplitName::Test)?.cases;
    let preds = fitted.predict_all(test)?;
    let metrics = score(cfg.task, corpus, test, &preds, cfg.few_threshold)?;
    if let Some(dir) = dir {
        create_dir(dir)?;
        let ck = dir.join(CHECKPOINT_FILE);
        std::fs::write(&ck, fitted.checkpoint_bytes()?).map_err(|e| Error::io(&ck, e))?;
        if let Some(h) = &history {
            write_json(&dir.join("history.json"), h)?;
        }
        let m = dir.join("metrics.json");
        std::fs::write(&m, metrics.to_json_string()).map_err(|e| Error::io(&m, e))?;
    }
    Ok(RunOutput {
        seed,
        fitted,
        history,
        metrics,
    })
}

/// One run per seed under `<out>/<name>/seed-<s>/`; with several seeds also
/// `aggregate.json` holding mean and population std.
pub fn run_experiment(cfg: &ExperimentConfig, corpus: &Corpus, out: &Path) -> Result<(Vec<RunOutput>, Option<AggregateReport>)> {
    cfg.validate()?;
    let root = cfg.run_dir(out);
    create_dir(&root)?;
    write_json(&root.join("config.json"), cfg)?;
    let run = |s: u64| run_seed(cfg, corpus, s, Some(&root.join(format!("seed-{s}"))));
    if cfg.seeds.len() == 1 {
        return Ok((vec![run(cfg.seeds[0])?], None));
    }
    let runs = multi_run(&cfg.seeds, run)?;
    let reports: Vec<MetricsReport> = runs.iter().map(|r| r.metrics.clone()).collect();
    let agg = aggregate(&reports)?;
    write_json(&root.join("aggregate.json"), &agg)?;
    Ok((runs, Some(agg)))
}

/// Re-aggregates the `metrics.json` files of a run directory.
pub fn aggregate_dir(root: &Path, seeds: &[u64]) -> Result<AggregateReport> {
    let reports = seeds
        .iter()
        .map(|s| {
            let p = root.join(format!("seed-{s}")).join("metrics.json");
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            MetricsReport::from_json(&serde_json::from_str(&text)?)
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate(&reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub trials: Vec<Trial>,
    /// Best first.
    pub ranked: Vec<Ranked>,
}

/// Samples `cfg.trials` configurations and trains each with the first seed,
/// ranking them by best dev loss.
pub fn search_experiment(cfg: &ExperimentConfig, corpus: &Corpus, out: &Path) -> Result<SearchReport> {
    if matches!(cfg.arch, Method::Baseline(_)) {
        return Err(Error::Config("hyperparameter search applies to neural architectures only".into()));
    }
    cfg.validate()?;
    let root = cfg.run_dir(out);
    create_dir(&root)?;
    write_json(&root.join("config.json"), cfg)?;
    let trials = sample_configs(&cfg.search, cfg.trials, cfg.search_seed)?;
    let seed = cfg.seeds[0];
    let ranked = random_search(&trials, |k, t| {
        let (model, train) = t.apply(&cfg.model, &cfg.train);
        let trial_cfg = ExperimentConfig {
            model,
            train,
            ..cfg.clone()
        };
        let dir = root.join(format!("trial-{k}")).join(format!("seed-{seed}"));
        let r = run_seed(&trial_cfg, corpus, seed, Some(&dir))?;
        Ok(r.history.expect("neural run has a history").best_dev_loss)
    })?;
    let report = SearchReport { trials, ranked };
    write_json(&root.join("search.json"), &report)?;
    Ok(report)
}

/// Scores a saved checkpoint on one split.
pub fn evaluate_checkpoint(path: &Path, corpus: &Corpus, split: SplitName, few_threshold: usize) -> Result<MetricsReport> {
    let fitted = Fitted::load(path)?;
    let cases = &corpus.require(split)?.cases;
    let preds = fitted.predict_all(cases)?;
    score(fitted.task(), corpus, cases, &preds, few_threshold)
}

/// Writes `trace.json` and `trace.html` for each case into `out/<case_id>/`.
pub fn explain(model: &Model<f64>, cases: &[Case], out: &Path) -> Result<Vec<AttentionTrace>> {
    let mut traces = Vec::new();
    for c in cases {
        let dir = out.join(&c.case_id);
        create_dir(&dir)?;
        let (trace, _) = capture_trace(model, c)?;
        write_json(&dir.join("trace.json"), &trace)?;
        export_heatmap(&trace, c, &dir.join("trace.html"))?;
        traces.push(trace);
    }
    Ok(traces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SynthConfig;

    fn tiny() -> (ExperimentConfig, Corpus) {
        let corpus = SynthConfig {
            n_cases: 60,
            vocab_size: 30,
            facts_per_case: 2,
            fact_len: 5,
            n_labels: 3,
            label_base: 0.5,
            ..SynthConfig::default()
        }
        .generate()
        .unwrap();
        let cfg = ExperimentConfig {
            name: "t".into(),
            model: ModelSpec {
                embedding_dim: 6,
                hidden: 200,
                dropout: 0.1,
                ..ModelSpec::default()
            },
            train: TrainConfig {
                max_epochs: 2,
                batch_size: 8,
                ..TrainConfig::default()
            },
            search: SearchSpace {
                hidden: vec![4, 200],
                ..SearchSpace::default()
            },
            seeds: vec![1, 2],
            ..ExperimentConfig::default()
        };
        (cfg, corpus)
    }

    #[test]
    fn method_names() {
        assert_eq!("han".parse::<Method>().unwrap(), Method::Neural(Architecture::Han));
        assert_eq!("coin-toss".parse::<Method>().unwrap(), Method::Baseline(BaselineKind::CoinToss));
        assert!("svm".parse::<Method>().is_err());
        let cfg = ExperimentConfig::parse(r#"{"arch": "bow-linear", "task": "importance"}"#).unwrap();
        assert_eq!(cfg.arch, Method::Baseline(BaselineKind::BowLinear));
    }

    #[test]
    fn out_of_range_config_names_the_field() {
        let (mut cfg, _) = tiny();
        cfg.model.dropout = 0.5;
        let e = cfg.validate().unwrap_err();
        assert!(e.is_validation());
        assert!(e.to_string().contains("dropout"), "{e}");
        assert!(ExperimentConfig::parse(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn runs_write_artifacts_and_aggregate() {
        let (mut cfg, corpus) = tiny();
        cfg.model.hidden = 4;
        let dir = tempfile::tempdir().unwrap();
        let (runs, agg) = run_experiment(&cfg, &corpus, dir.path()).unwrap();
        assert_eq!(runs.len(), 2);
        let root = dir.path().join("t");
        for s in [1, 2] {
            for f in [CHECKPOINT_FILE, "history.json", "metrics.json"] {
                assert!(root.join(format!("seed-{s}")).join(f).is_file());
            }
        }
        assert_eq!(aggregate_dir(&root, &cfg.seeds).unwrap(), agg.unwrap());
        let m = evaluate_checkpoint(&root.join("seed-1").join(CHECKPOINT_FILE), &corpus, SplitName::Test, 50).unwrap();
        assert_eq!(m, runs[0].metrics);
    }

    #[test]
    fn baselines_run_through_the_same_path() {
        let (mut cfg, corpus) = tiny();
        cfg.arch = Method::Baseline(BaselineKind::Majority);
        cfg.seeds = vec![0];
        let dir = tempfile::tempdir().unwrap();
        let (runs, agg) = run_experiment(&cfg, &corpus, dir.path()).unwrap();
        assert!(agg.is_none());
        assert!(runs[0].history.is_none());
        assert!(search_experiment(&cfg, &corpus, dir.path()).is_err());
    }
}
