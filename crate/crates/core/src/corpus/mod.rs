//! Case corpora: ingestion, fact segmentation, splits, balancing, label
//! strata and summary statistics.

mod ingest;
mod segment;
mod stats;
mod tokenize;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ingest::{ingest_corpus, read_cases, write_corpus, FieldMap};
pub use segment::{segment_facts, Segmented};
pub use stats::{compute_stats, SplitStats, StatsReport};
pub use tokenize::{
    tokenize, tokenize_with_offsets, Token, TokenVocab, ENTITY_TAGS, PAD, PAD_TOKEN, UNK, UNK_TOKEN,
};

/// Last year of cases allowed in the train and dev splits.
pub const LAST_TRAIN_YEAR: i32 = 2013;

/// Number of articles in the ECHR label schema.
pub const ECHR_LABEL_COUNT: usize = 66;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Case {
    pub case_id: String,
    pub facts: Vec<String>,
    /// Sorted, de-duplicated article identifiers.
    pub violated_articles: Vec<String>,
    pub importance: u8,
    pub year: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
}

impl Case {
    /// Binary label: any article violated.
    pub fn is_violation(&self) -> bool {
        !self.violated_articles.is_empty()
    }

    /// Facts joined with newlines.
    pub fn text(&self) -> String {
        self.facts.join("\n")
    }

    /// Whitespace-separated token count of the joined facts.
    pub fn word_count(&self) -> usize {
        self.facts.iter().map(|f| f.split_whitespace().count()).sum()
    }

    pub(crate) fn validate(&self, labels: Option<&LabelVocabulary>) -> Result<()> {
        let bad = |detail: String| Error::Validation {
            case_id: self.case_id.clone(),
            detail,
        };
        if self.facts.is_empty() {
            return Err(bad("no facts".into()));
        }
        if !(1..=4).contains(&self.importance) {
            return Err(bad(format!("importance {} outside [1, 4]", self.importance)));
        }
        if let Some(labels) = labels {
            for a in &self.violated_articles {
                if !labels.contains(a) {
                    return Err(bad(format!("unknown article {a}")));
                }
            }
        }
        Ok(())
    }
}

/// Ordered article identifiers (`"3"`, `"P1-1"`, ...).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelVocabulary {
    articles: Vec<String>,
}

impl LabelVocabulary {
    pub fn new(articles: Vec<String>) -> Result<Self> {
        let unique: BTreeSet<&String> = articles.iter().collect();
        if unique.len() != articles.len() {
            return Err(Error::Argument("duplicate article identifier in label vocabulary".into()));
        }
        Ok(LabelVocabulary { articles })
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub fn articles(&self) -> &[String] {
        &self.articles
    }

    pub fn index_of(&self, article: &str) -> Option<usize> {
        self.articles.iter().position(|a| a == article)
    }

    pub fn contains(&self, article: &str) -> bool {
        self.index_of(article).is_some()
    }

    /// Multi-hot indicator vector for a label set.
    pub fn multi_hot(&self, labels: &[String]) -> Result<Vec<bool>> {
        let mut out = vec![false; self.len()];
        for l in labels {
            let i = self
                .index_of(l)
                .ok_or_else(|| Error::Argument(format!("label {l} not in vocabulary")))?;
            out[i] = true;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Dev, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub name: SplitName,
    pub cases: Vec<Case>,
}

impl CorpusSplit {
    pub fn new(name: SplitName, mut cases: Vec<Case>) -> Self {
        cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        CorpusSplit { name, cases }
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub labels: LabelVocabulary,
    pub splits: Vec<CorpusSplit>,
}

impl Corpus {
    pub fn new(labels: LabelVocabulary, splits: Vec<CorpusSplit>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for s in &splits {
            if !seen.insert(s.name) {
                return Err(Error::Argument(format!("duplicate split {}", s.name.as_str())));
            }
            for c in &s.cases {
                c.validate(Some(&labels))?;
            }
        }
        Ok(Corpus { labels, splits })
    }

    pub fn split(&self, name: SplitName) -> Option<&CorpusSplit> {
        self.splits.iter().find(|s| s.name == name)
    }

    /// The named split, or an error naming it.
    pub fn require(&self, name: SplitName) -> Result<&CorpusSplit> {
        self.split(name)
            .ok_or_else(|| Error::Argument(format!("corpus has no {} split", name.as_str())))
    }

    pub fn split_mut(&mut self, name: SplitName) -> Option<&mut CorpusSplit> {
        self.splits.iter_mut().find(|s| s.name == name)
    }

    pub fn cases(&self) -> impl Iterator<Item = &Case> {
        self.splits.iter().flat_map(|s| s.cases.iter())
    }

    /// Train and dev cases are from `LAST_TRAIN_YEAR` or earlier and test
    /// cases from later years.
    pub fn is_chronological(&self) -> bool {
        self.splits.iter().all(|s| match s.name {
            SplitName::Train | SplitName::Dev => s.cases.iter().all(|c| c.year <= LAST_TRAIN_YEAR),
            SplitName::Test => s.cases.iter().all(|c| c.year > LAST_TRAIN_YEAR),
        })
    }
}

/// Splits dated cases by year: later than `LAST_TRAIN_YEAR` goes to test, the
/// rest is shuffled with `seed` and every `dev_every`-th case goes to dev.
pub fn split_chronologically(
    labels: LabelVocabulary,
    mut cases: Vec<Case>,
    dev_every: usize,
    seed: u64,
) -> Result<Corpus> {
    if dev_every < 2 {
        return Err(Error::Argument("dev_every must be at least 2".into()));
    }
    cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let (test, mut early): (Vec<Case>, Vec<Case>) = cases.into_iter().partition(|c| c.year > LAST_TRAIN_YEAR);
    early.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = Vec::new();
    let mut dev = Vec::new();
    for (i, c) in early.into_iter().enumerate() {
        if i % dev_every == dev_every - 1 {
            dev.push(c);
        } else {
            train.push(c);
        }
    }
    Corpus::new(
        labels,
        vec![
            CorpusSplit::new(SplitName::Train, train),
            CorpusSplit::new(SplitName::Dev, dev),
            CorpusSplit::new(SplitName::Test, test),
        ],
    )
}

/// Labels partitioned by training frequency.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyStrata {
    pub frequent: Vec<String>,
    pub few: Vec<String>,
    pub zero: Vec<String>,
    pub threshold: usize,
    pub counts: BTreeMap<String, usize>,
}

impl FrequencyStrata {
    pub fn stratum_of(&self, label: &str) -> Option<&'static str> {
        if self.frequent.iter().any(|l| l == label) {
            Some("frequent")
        } else if self.few.iter().any(|l| l == label) {
            Some("few")
        } else if self.zero.iter().any(|l| l == label) {
            Some("zero")
        } else {
            None
        }
    }
}

pub const DEFAULT_FEW_THRESHOLD: usize = 50;

/// Frequent labels have ≥ `threshold` training cases, few have 1 to
/// `threshold − 1`, zero have none.
pub fn stratify_labels(train: &CorpusSplit, vocab: &LabelVocabulary, threshold: usize) -> Result<FrequencyStrata> {
    if threshold < 1 {
        return Err(Error::Argument("threshold must be at least 1".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for c in &train.cases {
        for a in &c.violated_articles {
            *counts.entry(a.as_str()).or_default() += 1;
        }
    }
    Ok(stratify_counts(
        vocab.articles().iter().map(|a| (a.clone(), counts.get(a.as_str()).copied().unwrap_or(0))),
        threshold,
    ))
}

pub(crate) fn stratify_counts(counts: impl Iterator<Item = (String, usize)>, threshold: usize) -> FrequencyStrata {
    let mut s = FrequencyStrata {
        frequent: Vec::new(),
        few: Vec::new(),
        zero: Vec::new(),
        threshold,
        counts: BTreeMap::new(),
    };
    for (label, n) in counts {
        match n {
            0 => s.zero.push(label.clone()),
            n if n >= threshold => s.frequent.push(label.clone()),
            _ => s.few.push(label.clone()),
        }
        s.counts.insert(label, n);
    }
    s
}

/// Subsamples the majority binary class down to the minority count.
pub fn balance_binary(split: &CorpusSplit, seed: u64) -> Result<CorpusSplit> {
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..split.cases.len()).partition(|&i| split.cases[i].is_violation());
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Argument(format!(
            "cannot balance {} split: one binary class is absent",
            split.name.as_str()
        )));
    }
    let n = pos.len().min(neg.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::with_capacity(2 * n);
    for mut idx in [pos, neg] {
        if idx.len() > n {
            idx.shuffle(&mut rng);
            idx.truncate(n);
        }
        keep.extend(idx);
    }
    keep.sort_unstable();
    Ok(CorpusSplit {
        name: split.name,
        cases: keep.into_iter().map(|i| split.cases[i].clone()).collect(),
    })
}

/// Token vocabulary from the facts of a (training) split.
pub fn build_token_vocab(train: &CorpusSplit, min_freq: usize) -> Result<TokenVocab> {
    TokenVocab::build(train.cases.iter().flat_map(|c| c.facts.iter().map(String::as_str)), min_freq)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn case(id: &str, facts: &[&str], labels: &[&str], importance: u8, year: i32) -> Case {
        Case {
            case_id: id.into(),
            facts: facts.iter().map(|s| s.to_string()).collect(),
            violated_articles: labels.iter().map(|s| s.to_string()).collect(),
            importance,
            year,
            raw_text: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::case;
    use super::*;
    use proptest::prelude::*;

    fn split_of(pos: usize, neg: usize) -> CorpusSplit {
        let mut cases = Vec::new();
        for i in 0..pos {
            cases.push(case(&format!("p{i:02}"), &["1. x"], &["3"], 4, 2000));
        }
        for i in 0..neg {
            cases.push(case(&format!("n{i:02}"), &["1. x"], &[], 4, 2000));
        }
        CorpusSplit::new(SplitName::Train, cases)
    }

    #[test]
    fn balance_min_count_rule() {
        let b = balance_binary(&split_of(10, 4), 1).unwrap();
        let pos = b.cases.iter().filter(|c| c.is_violation()).count();
        assert_eq!((pos, b.len() - pos), (4, 4));
        let already = split_of(5, 5);
        assert_eq!(balance_binary(&already, 3).unwrap(), already);
        let ids = |s: &CorpusSplit| s.cases.iter().map(|c| c.case_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&balance_binary(&split_of(10, 4), 9).unwrap()), ids(&balance_binary(&split_of(10, 4), 9).unwrap()));
        assert!(balance_binary(&split_of(3, 0), 1).is_err());
    }

    #[test]
    fn strata_definition() {
        let mut cases = Vec::new();
        for i in 0..60 {
            let labels: &[&str] = if i < 10 { &["A", "B"] } else { &["A"] };
            cases.push(case(&format!("c{i}"), &["1. x"], labels, 2, 2001));
        }
        let vocab = LabelVocabulary::new(vec!["A".into(), "B".into(), "C".into()]).unwrap();
        let s = stratify_labels(&CorpusSplit::new(SplitName::Train, cases), &vocab, 50).unwrap();
        assert_eq!((s.frequent.clone(), s.few.clone(), s.zero.clone()), (vec!["A".to_string()], vec!["B".to_string()], vec!["C".to_string()]));
        assert!(stratify_labels(&split_of(1, 1), &vocab, 0).is_err());
    }

    #[test]
    fn dev_only_tokens_are_unknown() {
        let train = CorpusSplit::new(SplitName::Train, vec![case("a", &["the court held"], &[], 4, 2000)]);
        let vocab = build_token_vocab(&train, 1).unwrap();
        assert_eq!(vocab.encode("court adjourned"), vec![vocab.id("court"), UNK]);
    }

    #[test]
    fn chronological_split_rule() {
        let labels = LabelVocabulary::new(vec!["3".into()]).unwrap();
        let cases = (0..30)
            .map(|i| case(&format!("c{i:02}"), &["1. x"], &[], 4, 2000 + (i % 19)))
            .collect();
        let corpus = split_chronologically(labels, cases, 5, 2).unwrap();
        assert!(corpus.is_chronological());
        assert!(!corpus.require(SplitName::Dev).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn strata_partition_matches_filter(counts in proptest::collection::vec(0usize..120, 1..40), threshold in 1usize..80) {
            let labelled: Vec<(String, usize)> = counts.iter().enumerate().map(|(i, &c)| (format!("L{i}"), c)).collect();
            let s = stratify_counts(labelled.clone().into_iter(), threshold);
            let f: Vec<String> = labelled.iter().filter(|(_, c)| *c >= threshold).map(|(l, _)| l.clone()).collect();
            let w: Vec<String> = labelled.iter().filter(|(_, c)| *c >= 1 && *c < threshold).map(|(l, _)| l.clone()).collect();
            let z: Vec<String> = labelled.iter().filter(|(_, c)| *c == 0).map(|(l, _)| l.clone()).collect();
            prop_assert_eq!(&s.frequent, &f);
            prop_assert_eq!(&s.few, &w);
            prop_assert_eq!(&s.zero, &z);
            prop_assert_eq!(s.frequent.len() + s.few.len() + s.zero.len(), labelled.len());
        }

        #[test]
        fn balanced_output_is_equal_subset(pos in 1usize..30, neg in 1usize..30, seed in 0u64..100) {
            let split = split_of(pos, neg);
            let b = balance_binary(&split, seed).unwrap();
            let p = b.cases.iter().filter(|c| c.is_violation()).count();
            prop_assert_eq!(p, b.len() - p);
            prop_assert!(b.cases.iter().all(|c| split.cases.contains(c)));
        }
    }
}
