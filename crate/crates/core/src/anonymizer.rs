//! Entity masking: a deterministic gazetteer and pattern recognizer plus the
//! replacement of recognized spans by type tags.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{Case, Corpus, CorpusSplit, ENTITY_TAGS};
use crate::error::{read_to_string, Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EntityType {
    Person,
    Location,
    Org,
    Date,
    Number,
}

impl EntityType {
    pub fn tag(self) -> &'static str {
        match self {
            EntityType::Person => "PERSON",
            EntityType::Location => "LOCATION",
            EntityType::Org => "ORG",
            EntityType::Date => "DATE",
            EntityType::Number => "NUMBER",
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for EntityType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "PERSON" => EntityType::Person,
            "LOCATION" => EntityType::Location,
            "ORG" => EntityType::Org,
            "DATE" => EntityType::Date,
            "NUMBER" => EntityType::Number,
            other => return Err(Error::Argument(format!("unknown entity type {other}"))),
        })
    }
}

/// Entity occurrence over chars `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub entity_type: EntityType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gazetteer {
    entries: HashMap<String, EntityType>,
    case_sensitive: bool,
    max_chars: usize,
}

impl Gazetteer {
    pub fn new<S: AsRef<str>>(entries: impl IntoIterator<Item = (S, EntityType)>, case_sensitive: bool) -> Result<Self> {
        let mut map = HashMap::new();
        let mut max_chars = 0;
        for (surface, ty) in entries {
            let surface = surface.as_ref().trim();
            if surface.is_empty() || ENTITY_TAGS.contains(&surface) {
                continue;
            }
            let key = if case_sensitive { surface.to_string() } else { surface.to_lowercase() };
            if let Some(prev) = map.insert(key, ty) {
                if prev != ty {
                    return Err(Error::Argument(format!("gazetteer entry {surface} has types {prev} and {ty}")));
                }
            }
            max_chars = max_chars.max(surface.chars().count());
        }
        Ok(Gazetteer {
            entries: map,
            case_sensitive,
            max_chars,
        })
    }

    /// Parses `surface<TAB>TYPE` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str, case_sensitive: bool) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (surface, ty) = line
                .split_once('\t')
                .ok_or_else(|| Error::Argument(format!("gazetteer line {}: expected surface<TAB>TYPE", n + 1)))?;
            entries.push((surface.to_string(), ty.parse()?));
        }
        Self::new(entries, case_sensitive)
    }

    pub fn load(path: &Path, case_sensitive: bool) -> Result<Self> {
        Self::parse(&read_to_string(path)?, case_sensitive)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    fn lookup(&self, s: &str) -> Option<EntityType> {
        if self.case_sensitive {
            self.entries.get(s).copied()
        } else {
            self.entries.get(&s.to_lowercase()).copied()
        }
    }
}

fn date_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"\b(?:\d{4}-\d{2}-\d{2}|\d{1,2} (?:January|February|March|April|May|June|July|August|September|October|November|December) \d{4})\b",
        )
        .expect("valid regex")
    })
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b\d+\b").expect("valid regex"))
}

/// Recognizes entities left to right, taking the longest candidate at each
/// position. Gazetteer entries only match whole tokens; dates and digit runs
/// come from built-in patterns.
pub fn recognize_entities(text: &str, gazetteer: &Gazetteer) -> Vec<EntitySpan> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    // char index of every byte offset that starts a char
    let mut byte_to_char = vec![0usize; text.len() + 1];
    for (ci, (bi, _)) in text.char_indices().enumerate() {
        byte_to_char[bi] = ci;
    }
    byte_to_char[text.len()] = n;

    let mut pattern: Vec<Option<(usize, EntityType)>> = vec![None; n];
    let mut offer = |start: usize, end: usize, ty: EntityType| {
        if pattern[start].is_none_or(|(e, _)| end > e) {
            pattern[start] = Some((end, ty));
        }
    };
    for m in date_re().find_iter(text) {
        offer(byte_to_char[m.start()], byte_to_char[m.end()], EntityType::Date);
    }
    for m in number_re().find_iter(text) {
        offer(byte_to_char[m.start()], byte_to_char[m.end()], EntityType::Number);
    }

    let is_word = |i: usize| chars[i].is_alphanumeric();
    let boundary_before = |i: usize| i == 0 || !is_word(i - 1) || !is_word(i);
    let boundary_after = |j: usize| j == n || !is_word(j) || !is_word(j - 1);

    let mut spans = Vec::new();
    let mut i = 0;
    let mut buf = String::new();
    while i < n {
        let mut best = pattern[i];
        if boundary_before(i) {
            let max = gazetteer.max_chars.min(n - i);
            for len in (1..=max).rev() {
                if best.is_some_and(|(e, _)| e >= i + len) {
                    break;
                }
                if !boundary_after(i + len) {
                    continue;
                }
                buf.clear();
                buf.extend(&chars[i..i + len]);
                if let Some(ty) = gazetteer.lookup(&buf) {
                    best = Some((i + len, ty));
                    break;
                }
            }
        }
        match best {
            Some((end, ty)) => {
                spans.push(EntitySpan {
                    start: i,
                    end,
                    entity_type: ty,
                });
                i = end;
            }
            None => i += 1,
        }
    }
    spans
}

/// Replaces every span by its type tag. Text outside the spans is untouched.
pub fn mask_entities(text: &str, spans: &[EntitySpan]) -> Result<String> {
    let mut chars: Vec<char> = text.chars().collect();
    let mut sorted = spans.to_vec();
    sorted.sort_by_key(|s| (s.start, s.end));
    for w in sorted.windows(2) {
        if w[1].start < w[0].end {
            return Err(Error::Argument(format!(
                "overlapping spans [{}, {}) and [{}, {})",
                w[0].start, w[0].end, w[1].start, w[1].end
            )));
        }
    }
    for s in &sorted {
        if s.start >= s.end || s.end > chars.len() {
            return Err(Error::Argument(format!("span [{}, {}) outside text of {} chars", s.start, s.end, chars.len())));
        }
    }
    for s in sorted.iter().rev() {
        chars.splice(s.start..s.end, s.entity_type.tag().chars());
    }
    Ok(chars.into_iter().collect())
}

pub fn anonymize_text(text: &str, gazetteer: &Gazetteer) -> Result<String> {
    mask_entities(text, &recognize_entities(text, gazetteer))
}

pub fn anonymize_case(case: &Case, gazetteer: &Gazetteer) -> Result<Case> {
    let facts = case
        .facts
        .iter()
        .map(|f| anonymize_text(f, gazetteer))
        .collect::<Result<Vec<_>>>()?;
    Ok(Case {
        facts,
        raw_text: case.raw_text.as_deref().map(|t| anonymize_text(t, gazetteer)).transpose()?,
        ..case.clone()
    })
}

/// Masks every fact of every case; labels, importance and dates are kept.
pub fn anonymize_corpus(corpus: &Corpus, gazetteer: &Gazetteer) -> Result<Corpus> {
    let mut splits = Vec::with_capacity(corpus.splits.len());
    for s in &corpus.splits {
        let cases = par::map(&s.cases, |c| anonymize_case(c, gazetteer))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        splits.push(CorpusSplit { name: s.name, cases });
    }
    Ok(Corpus {
        labels: corpus.labels.clone(),
        splits,
    })
}
