//! Synthetic corpora with planted label signatures.
//!
//! Every label `ℓ` has a signature token `sigℓ`; a case carrying `ℓ` has that
//! token planted in one of its facts, and a case without it has the filler
//! reference `refℓ` planted by the same rule. Every case thus names exactly
//! one registry entry per label, so masking all of them to one tag leaves no
//! trace of the labels. Filler words are uniform over `w0 ..`, and
//! capitalized person and place names are sprinkled independently of the
//! labels so that masking them should not matter.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{split_chronologically, write_corpus, Case, Corpus, LabelVocabulary, LAST_TRAIN_YEAR};
use crate::error::{Error, Result};

const PERSONS: [&str; 12] = [
    "Petrenko", "Ivanova", "Kovalenko", "Horvath", "Novak", "Yilmaz", "Moreau", "Schulz", "Rossi", "Nowak", "Popescu",
    "Georgiou",
];
const PLACES: [&str; 8] = ["Kharkiv", "Ankara", "Lyon", "Graz", "Porto", "Split", "Tartu", "Varna"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_cases: usize,
    pub vocab_size: usize,
    pub facts_per_case: usize,
    /// Filler words per fact before planting.
    pub fact_len: usize,
    pub n_labels: usize,
    /// Fact that receives every signature; random per label when unset.
    pub signal_fact: Option<usize>,
    /// Word position of the signature inside its fact; random when unset.
    pub signal_word: Option<usize>,
    /// Probability of label `ℓ` is `label_base · label_decay^ℓ`.
    pub label_base: f64,
    pub label_decay: f64,
    /// Probability that a fact mentions a name or place.
    pub entity_rate: f64,
    /// Share of cases dated after the last training year.
    pub test_fraction: f64,
    pub dev_every: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_cases: 2000,
            vocab_size: 500,
            facts_per_case: 4,
            fact_len: 12,
            n_labels: 10,
            signal_fact: None,
            signal_word: None,
            label_base: 0.25,
            label_decay: 0.6,
            entity_rate: 0.3,
            test_fraction: 0.2,
            dev_every: 5,
            seed: 7,
        }
    }
}

pub fn signature(label: usize) -> String {
    format!("sig{label}")
}

/// Registry entry planted when label `ℓ` does not hold.
pub fn reference(label: usize) -> String {
    format!("ref{label}")
}

pub fn article(label: usize) -> String {
    (label + 1).to_string()
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_cases", self.n_cases),
            ("vocab_size", self.vocab_size),
            ("facts_per_case", self.facts_per_case),
            ("fact_len", self.fact_len),
            ("n_labels", self.n_labels),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if let Some(f) = self.signal_fact {
            if f >= self.facts_per_case {
                return Err(Error::Config(format!(
                    "signal_fact {f} must be below facts_per_case {}",
                    self.facts_per_case
                )));
            }
        }
        for (name, p) in [
            ("label_base", self.label_base),
            ("label_decay", self.label_decay),
            ("entity_rate", self.entity_rate),
            ("test_fraction", self.test_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.dev_every < 2 {
            return Err(Error::Config("dev_every must be at least 2".into()));
        }
        Ok(())
    }

    pub fn labels(&self) -> LabelVocabulary {
        LabelVocabulary::new((0..self.n_labels).map(article).collect()).expect("distinct articles")
    }

    fn case(&self, i: usize, rng: &mut ChaCha8Rng) -> Case {
        let mut facts: Vec<Vec<String>> = (0..self.facts_per_case)
            .map(|_| (0..self.fact_len).map(|_| format!("w{}", rng.gen_range(0..self.vocab_size))).collect())
            .collect();
        for fact in &mut facts {
            if rng.gen_bool(self.entity_rate) {
                let name = if rng.gen_bool(0.5) {
                    PERSONS.choose(rng)
                } else {
                    PLACES.choose(rng)
                };
                let at = rng.gen_range(0..=fact.len());
                fact.insert(at, name.expect("non-empty pool").to_string());
            }
        }
        let mut labels = Vec::new();
        for l in 0..self.n_labels {
            let p = self.label_base * self.label_decay.powi(l as i32);
            let token = if rng.gen_bool(p.clamp(0.0, 1.0)) {
                labels.push(l);
                signature(l)
            } else {
                reference(l)
            };
            let f = self.signal_fact.unwrap_or_else(|| rng.gen_range(0..self.facts_per_case));
            let at = match self.signal_word {
                Some(w) => w.min(facts[f].len()),
                None => rng.gen_range(0..=facts[f].len()),
            };
            facts[f].insert(at, token);
        }
        let mut violated: Vec<String> = labels.iter().map(|&l| article(l)).collect();
        violated.sort();
        let year = if rng.gen_bool(self.test_fraction) {
            rng.gen_range(LAST_TRAIN_YEAR + 1..=LAST_TRAIN_YEAR + 3)
        } else {
            rng.gen_range(2000..=LAST_TRAIN_YEAR)
        };
        Case {
            case_id: format!("synth-{i:06}"),
            facts: facts.into_iter().map(|f| f.join(" ")).collect(),
            violated_articles: violated,
            importance: (1 + labels.len()).min(4) as u8,
            year,
            raw_text: None,
        }
    }

    /// Deterministic in the config.
    pub fn generate(&self) -> Result<Corpus> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let cases = (0..self.n_cases).map(|i| self.case(i, &mut rng)).collect();
        split_chronologically(self.labels(), cases, self.dev_every, self.seed)
    }

    /// Gazetteer of the label-independent names and places.
    pub fn entity_gazetteer(&self) -> String {
        let mut out = String::new();
        for p in PERSONS {
            out.push_str(&format!("{p}\tPERSON\n"));
        }
        for p in PLACES {
            out.push_str(&format!("{p}\tLOCATION\n"));
        }
        out
    }

    /// Gazetteer of the registry entries (signatures and references), for
    /// the masking sanity check.
    pub fn signature_gazetteer(&self) -> String {
        (0..self.n_labels)
            .flat_map(|l| [signature(l), reference(l)])
            .map(|t| format!("{t}\tORG\n"))
            .collect()
    }

    /// Writes the corpus splits, `labels.json`, `entities.tsv` and
    /// `signatures.tsv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Corpus> {
        let corpus = self.generate()?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_corpus(&corpus, dir)?;
        for (name, body) in [("entities.tsv", self.entity_gazetteer()), ("signatures.tsv", self.signature_gazetteer())] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(corpus)
    }
}
