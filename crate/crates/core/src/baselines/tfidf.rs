use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Case};
use crate::error::{Error, Result};
use crate::par;

pub const DEFAULT_MAX_FEATURES: usize = 10_000;

/// Sorted `(feature, weight)` pairs.
pub type SparseVec = Vec<(usize, f64)>;

pub fn dot(w: &[f64], x: &SparseVec) -> f64 {
    x.iter().map(|&(i, v)| w[i] * v).sum()
}

/// n-grams of each fact, joined by single spaces; n-grams never span two
/// facts.
fn ngrams(case: &Case, min_n: usize, max_n: usize) -> Vec<String> {
    let mut out = Vec::new();
    for fact in &case.facts {
        let toks = tokenize(fact);
        for n in min_n..=max_n {
            for w in toks.windows(n) {
                out.push(w.join(" "));
            }
        }
    }
    out
}

/// Top-K n-gram counts weighted by `ln(N/df)`, L2-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfFeaturizer {
    pub min_n: usize,
    pub max_n: usize,
    pub max_features: usize,
    vocabulary: Vec<String>,
    idf: Vec<f64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Default for TfidfFeaturizer {
    fn default() -> Self {
        Self::new(1, 5, DEFAULT_MAX_FEATURES)
    }
}

impl TfidfFeaturizer {
    pub fn new(min_n: usize, max_n: usize, max_features: usize) -> Self {
        TfidfFeaturizer {
            min_n,
            max_n,
            max_features,
            vocabulary: Vec::new(),
            idf: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn is_fitted(&self) -> bool {
        !self.index.is_empty()
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn dim(&self) -> usize {
        self.vocabulary.len()
    }

    /// Keeps the `max_features` most frequent n-grams of `train` (ties
    /// alphabetical) and their idf.
    pub fn fit(&mut self, train: &[Case]) -> Result<()> {
        if self.min_n == 0 || self.min_n > self.max_n || self.max_features == 0 {
            return Err(Error::Config(format!(
                "invalid n-gram range [{}, {}] or feature count {}",
                self.min_n, self.max_n, self.max_features
            )));
        }
        if train.is_empty() {
            return Err(Error::Argument("cannot fit tf-idf on an empty split".into()));
        }
        let docs = par::map(train, |c| ngrams(c, self.min_n, self.max_n));
        let mut total: HashMap<&str, usize> = HashMap::new();
        let mut df: HashMap<&str, usize> = HashMap::new();
        for doc in &docs {
            let mut seen: Vec<&str> = doc.iter().map(String::as_str).collect();
            for g in &seen {
                *total.entry(g).or_default() += 1;
            }
            seen.sort_unstable();
            seen.dedup();
            for g in seen {
                *df.entry(g).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = total.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(self.max_features);
        if ranked.is_empty() {
            return Err(Error::Argument("training split has no tokens".into()));
        }
        let n = train.len() as f64;
        self.vocabulary = ranked.iter().map(|(g, _)| g.to_string()).collect();
        self.idf = ranked.iter().map(|(g, _)| (n / df[g] as f64).ln()).collect();
        self.rebuild_index();
        Ok(())
    }

    fn rebuild_index(&mut self) {
        self.index = self.vocabulary.iter().enumerate().map(|(i, g)| (g.clone(), i)).collect();
    }

    /// Restores a fitted featurizer from its vocabulary and idf table.
    pub fn from_parts(min_n: usize, max_n: usize, vocabulary: Vec<String>, idf: Vec<f64>) -> Result<Self> {
        if vocabulary.len() != idf.len() || vocabulary.is_empty() {
            return Err(Error::State("tf-idf vocabulary and idf table disagree".into()));
        }
        let mut f = TfidfFeaturizer {
            min_n,
            max_n,
            max_features: vocabulary.len(),
            vocabulary,
            idf,
            index: HashMap::new(),
        };
        f.rebuild_index();
        Ok(f)
    }

    pub fn transform(&self, case: &Case) -> Result<SparseVec> {
        if !self.is_fitted() {
            return Err(Error::State("tf-idf featurizer used before fit".into()));
        }
        let mut tf: HashMap<usize, f64> = HashMap::new();
        for g in ngrams(case, self.min_n, self.max_n) {
            if let Some(&i) = self.index.get(&g) {
                *tf.entry(i).or_default() += 1.0;
            }
        }
        let mut v: SparseVec = tf
            .into_iter()
            .map(|(i, c)| (i, c * self.idf[i]))
            .filter(|&(_, w)| w != 0.0)
            .collect();
        v.sort_unstable_by_key(|&(i, _)| i);
        let norm = v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, w) in &mut v {
                *w /= norm;
            }
        }
        Ok(v)
    }

    pub fn transform_all(&self, cases: &[Case]) -> Result<Vec<SparseVec>> {
        par::map(cases, |c| self.transform(c)).into_iter().collect()
    }
}
