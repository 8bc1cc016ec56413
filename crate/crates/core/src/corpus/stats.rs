use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusSplit, SplitName};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub split: SplitName,
    pub cases: usize,
    pub mean_words: f64,
    pub mean_facts: f64,
    pub mean_articles: f64,
    /// Set for a split with no cases; its means are zero.
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub splits: Vec<SplitStats>,
    /// Cases with importance 1, 2, 3 and 4 across all splits.
    pub importance_histogram: [usize; 4],
    pub violation_ratio: f64,
}

fn split_stats(s: &CorpusSplit) -> SplitStats {
    let n = s.cases.len();
    if n == 0 {
        return SplitStats {
            split: s.name,
            cases: 0,
            mean_words: 0.0,
            mean_facts: 0.0,
            mean_articles: 0.0,
            empty: true,
        };
    }
    let sum = |f: &dyn Fn(&super::Case) -> usize| s.cases.iter().map(f).sum::<usize>() as f64 / n as f64;
    SplitStats {
        split: s.name,
        cases: n,
        mean_words: sum(&|c| c.word_count()),
        mean_facts: sum(&|c| c.facts.len()),
        mean_articles: sum(&|c| c.violated_articles.len()),
        empty: false,
    }
}

pub fn compute_stats(corpus: &Corpus) -> StatsReport {
    let mut hist = [0usize; 4];
    let mut total = 0usize;
    let mut violations = 0usize;
    for c in corpus.cases() {
        hist[(c.importance - 1) as usize] += 1;
        total += 1;
        violations += usize::from(c.is_violation());
    }
    StatsReport {
        splits: corpus.splits.iter().map(split_stats).collect(),
        importance_histogram: hist,
        violation_ratio: if total == 0 { 0.0 } else { violations as f64 / total as f64 },
    }
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8}{:>8}{:>12}{:>12}{:>14}", "split", "cases", "words/case", "facts/case", "articles/case")?;
        for s in &self.splits {
            writeln!(
                f,
                "{:<8}{:>8}{:>12.0}{:>12.0}{:>14.2}{}",
                s.split.as_str(),
                s.cases,
                s.mean_words,
                s.mean_facts,
                s.mean_articles,
                if s.empty { "  (empty)" } else { "" }
            )?;
        }
        let h = &self.importance_histogram;
        writeln!(f, "importance 1/2/3/4: {}/{}/{}/{}", h[0], h[1], h[2], h[3])?;
        write!(f, "violation ratio: {:.3}", self.violation_ratio)
    }
}
