use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ljp_core::anonymizer::{anonymize_corpus, Gazetteer};
use ljp_core::corpus::{compute_stats, ingest_corpus, write_corpus, Corpus, FieldMap, SplitName};
use ljp_core::experiment::{
    evaluate_checkpoint, explain, run_experiment, search_experiment, ExperimentConfig, Fitted, Method,
};
use ljp_core::models::Task;
use ljp_core::synth::SynthConfig;
use ljp_core::{par, Error, Result};

/// Legal judgment prediction: corpora, models, baselines, evaluation and
/// attention inspection.
#[derive(Debug, Parser)]
#[command(name = "ljp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment or generator configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Corpus directory or file.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Read the anonymized copy of the corpus (`<data>/anonymized`).
    #[arg(long, global = true)]
    anonymized: bool,
    #[arg(long, global = true, value_parser = parse_task)]
    task: Option<Task>,
    /// bigru-att, han, lwan, flat-trunc, hier-enc, majority, coin-toss or
    /// bow-linear.
    #[arg(long, global = true, value_parser = parse_method)]
    arch: Option<Method>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate raw case files and write canonical splits to --out.
    Ingest {
        /// JSON field-alias map.
        #[arg(long)]
        fields: Option<PathBuf>,
        /// Use the field names of the released ECHR dump.
        #[arg(long)]
        echr: bool,
    },
    /// Print per-split corpus statistics.
    Stats,
    /// Mask gazetteer entities and write the corpus to --out
    /// (default `<data>/anonymized`).
    Anonymize {
        /// `surface<TAB>TYPE` lines.
        #[arg(long)]
        gazetteer: PathBuf,
        #[arg(long)]
        case_sensitive: bool,
    },
    /// Train one run per seed and score it on the test split.
    Train,
    /// Random hyperparameter search ranked by dev loss.
    Search,
    /// Score a checkpoint on one split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: SplitName,
    },
    /// Write attention traces and heatmaps for cases of a split.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: SplitName,
        /// Case ids to explain; the first case of the split by default.
        #[arg(long = "case")]
        cases: Vec<String>,
    },
    /// Generate a synthetic corpus with planted label signatures.
    Synth {
        #[arg(long)]
        n_cases: Option<usize>,
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long)]
        facts_per_case: Option<usize>,
        #[arg(long)]
        fact_len: Option<usize>,
        #[arg(long)]
        n_labels: Option<usize>,
        /// Fact index that receives every signature.
        #[arg(long)]
        signal_position: Option<usize>,
        /// Word position of the signature inside its fact.
        #[arg(long)]
        signal_word: Option<usize>,
    },
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<SplitName, String> {
    SplitName::ALL
        .into_iter()
        .find(|n| n.as_str() == s)
        .ok_or_else(|| format!("unknown split `{s}` (train, dev or test)"))
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Argument(format!("--{flag} is required for this command")))
}

impl Cli {
    fn corpus(&self) -> Result<Corpus> {
        let data = required(&self.data, "data")?;
        let path = if self.anonymized {
            data.join("anonymized")
        } else {
            data.to_path_buf()
        };
        ingest_corpus(&path, &FieldMap::canonical())
    }

    fn experiment(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(t) = self.task {
            cfg.task = t;
        }
        if let Some(a) = self.arch {
            cfg.arch = a;
        }
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("runs"))
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest { fields, echr } => {
            let fm = match fields {
                Some(p) => FieldMap::from_json(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
                None if *echr => FieldMap::echr(),
                None => FieldMap::canonical(),
            };
            let corpus = ingest_corpus(required(&cli.data, "data")?, &fm)?;
            let out = required(&cli.out, "out")?;
            std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            write_corpus(&corpus, out)?;
            println!("{}", compute_stats(&corpus));
        }
        Command::Stats => println!("{}", compute_stats(&cli.corpus()?)),
        Command::Anonymize { gazetteer, case_sensitive } => {
            let data = required(&cli.data, "data")?;
            let g = Gazetteer::load(gazetteer, *case_sensitive)?;
            let corpus = ingest_corpus(data, &FieldMap::canonical())?;
            let masked = anonymize_corpus(&corpus, &g)?;
            let out = cli.out.clone().unwrap_or_else(|| data.join("anonymized"));
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            write_corpus(&masked, &out)?;
            println!("wrote {} cases to {}", masked.cases().count(), out.display());
        }
        Command::Train => {
            let cfg = cli.experiment()?;
            let corpus = cli.corpus()?;
            let out = cli.out();
            let (runs, agg) = run_experiment(&cfg, &corpus, &out)?;
            for r in &runs {
                println!("seed {}\n{}", r.seed, r.metrics);
            }
            if let Some(a) = agg {
                println!("mean ± std over {} seeds\n{a}", runs.len());
            }
            println!("artifacts in {}", cfg.run_dir(&out).display());
        }
        Command::Search => {
            let cfg = cli.experiment()?;
            let corpus = cli.corpus()?;
            let out = cli.out();
            let report = search_experiment(&cfg, &corpus, &out)?;
            for r in report.ranked.iter().take(5) {
                println!("trial {:>3}  dev loss {:.5}  {:?}", r.index, r.dev_loss, r.trial);
            }
            println!("{} trials in {}", report.trials.len(), cfg.run_dir(&out).display());
        }
        Command::Evaluate { checkpoint, split } => {
            let corpus = cli.corpus()?;
            let threshold = cli.experiment()?.few_threshold;
            let m = evaluate_checkpoint(checkpoint, &corpus, *split, threshold)?;
            print!("{m}");
            if let Some(out) = &cli.out {
                std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
                let p = out.join("metrics.json");
                std::fs::write(&p, m.to_json_string()).map_err(|e| Error::io(&p, e))?;
            }
        }
        Command::Explain { checkpoint, split, cases } => {
            let Fitted::Neural(model) = Fitted::load(checkpoint)? else {
                return Err(Error::Config("explain needs a neural checkpoint".into()));
            };
            let corpus = cli.corpus()?;
            let pool = &corpus.require(*split)?.cases;
            let chosen = if cases.is_empty() {
                pool.iter().take(1).cloned().collect::<Vec<_>>()
            } else {
                cases
                    .iter()
                    .map(|id| {
                        pool.iter()
                            .find(|c| &c.case_id == id)
                            .cloned()
                            .ok_or_else(|| Error::Argument(format!("no case {id} in the {} split", split.as_str())))
                    })
                    .collect::<Result<_>>()?
            };
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("explain"));
            for t in explain(&model, &chosen, &out)? {
                println!("{}: {}", t.case_id, out.join(&t.case_id).join("trace.html").display());
            }
        }
        Command::Synth {
            n_cases,
            vocab_size,
            facts_per_case,
            fact_len,
            n_labels,
            signal_position,
            signal_word,
        } => {
            let mut cfg = match &cli.config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("synth config: {e}")))?
                }
                None => SynthConfig::default(),
            };
            let set = |slot: &mut usize, v: &Option<usize>| {
                if let Some(v) = v {
                    *slot = *v;
                }
            };
            set(&mut cfg.n_cases, n_cases);
            set(&mut cfg.vocab_size, vocab_size);
            set(&mut cfg.facts_per_case, facts_per_case);
            set(&mut cfg.fact_len, fact_len);
            set(&mut cfg.n_labels, n_labels);
            if signal_position.is_some() {
                cfg.signal_fact = *signal_position;
            }
            if signal_word.is_some() {
                cfg.signal_word = *signal_word;
            }
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let out = required(&cli.out, "out")?;
            let corpus = cfg.write(out)?;
            println!("{}", compute_stats(&corpus));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match par::with_jobs(cli.jobs, || run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
