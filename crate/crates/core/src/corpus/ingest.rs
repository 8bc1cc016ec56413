use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde_json::Value;

use super::{segment_facts, split_chronologically, Case, Corpus, CorpusSplit, LabelVocabulary, SplitName};
use crate::error::{read_to_string, write_file, Error, Result};

/// Alternative field names accepted for each canonical case field.
#[derive(Debug, Clone, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct FieldMap {
    aliases: HashMap<String, Vec<String>>,
}

const CANONICAL: [&str; 7] = ["case_id", "facts", "violated_articles", "importance", "year", "raw_text", "split"];

impl FieldMap {
    /// Canonical names only.
    pub fn canonical() -> Self {
        FieldMap::default()
    }

    /// Aliases used by the released ECHR dump.
    pub fn echr() -> Self {
        FieldMap::canonical()
            .with_alias("case_id", "ITEMID")
            .with_alias("facts", "TEXT")
            .with_alias("violated_articles", "VIOLATED_ARTICLES")
            .with_alias("importance", "IMPORTANCE")
            .with_alias("year", "JUDGEMENTDATE")
            .with_alias("year", "DATE")
    }

    pub fn with_alias(mut self, canonical: &str, alias: &str) -> Self {
        self.aliases.entry(canonical.to_string()).or_default().push(alias.to_string());
        self
    }

    /// Reads `{"canonical": ["alias", ...]}` JSON, validating the keys.
    pub fn from_json(text: &str) -> Result<Self> {
        let aliases: HashMap<String, Vec<String>> = serde_json::from_str(text)?;
        for k in aliases.keys() {
            if !CANONICAL.contains(&k.as_str()) {
                return Err(Error::Config(format!("field map names unknown field {k}")));
            }
        }
        Ok(FieldMap { aliases })
    }

    fn lookup<'a>(&self, obj: &'a serde_json::Map<String, Value>, field: &str) -> Option<&'a Value> {
        if let Some(v) = obj.get(field) {
            return Some(v);
        }
        self.aliases
            .get(field)
            .into_iter()
            .flatten()
            .find_map(|a| obj.get(a.as_str()))
            .filter(|v| !v.is_null())
    }
}

fn as_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn as_int(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n.as_i64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn year_of(v: &Value) -> Option<i32> {
    if let Value::Number(n) = v {
        return n.as_i64().map(|y| y as i32);
    }
    let s = v.as_str()?;
    let re = regex::Regex::new(r"\b(\d{4})\b").expect("valid regex");
    re.captures(s).and_then(|c| c[1].parse().ok())
}

fn parse_case(v: &Value, fm: &FieldMap, record: usize) -> Result<(Case, Option<String>)> {
    let obj = v.as_object().ok_or_else(|| Error::Validation {
        case_id: format!("record {record}"),
        detail: "not a JSON object".into(),
    })?;
    let case_id = fm
        .lookup(obj, "case_id")
        .and_then(as_string)
        .ok_or_else(|| Error::Schema {
            case_id: format!("record {record}"),
            field: "case_id".into(),
        })?;
    let missing = |field: &str| Error::Schema {
        case_id: case_id.clone(),
        field: field.into(),
    };
    let invalid = |detail: String| Error::Validation {
        case_id: case_id.clone(),
        detail,
    };

    let raw_text = fm.lookup(obj, "raw_text").and_then(as_string);
    let facts = match fm.lookup(obj, "facts").ok_or_else(|| missing("facts"))? {
        Value::Array(items) => items
            .iter()
            .map(|f| as_string(f).ok_or_else(|| invalid("facts must be strings".into())))
            .collect::<Result<Vec<_>>>()?,
        Value::String(s) => segment_facts(s).facts,
        _ => return Err(invalid("facts must be an array of strings".into())),
    };
    let articles: BTreeSet<String> = match fm.lookup(obj, "violated_articles").ok_or_else(|| missing("violated_articles"))? {
        Value::Array(items) => items
            .iter()
            .map(|a| as_string(a).ok_or_else(|| invalid("article identifiers must be strings".into())))
            .collect::<Result<_>>()?,
        _ => return Err(invalid("violated_articles must be an array".into())),
    };
    let importance = fm
        .lookup(obj, "importance")
        .ok_or_else(|| missing("importance"))
        .and_then(|v| as_int(v).ok_or_else(|| invalid("importance is not an integer".into())))?;
    if !(1..=4).contains(&importance) {
        return Err(invalid(format!("importance {importance} outside [1, 4]")));
    }
    let year = fm
        .lookup(obj, "year")
        .ok_or_else(|| missing("year"))
        .and_then(|v| year_of(v).ok_or_else(|| invalid("year is not a date or integer".into())))?;
    let split = fm.lookup(obj, "split").and_then(as_string);
    let case = Case {
        case_id,
        facts,
        violated_articles: articles.into_iter().collect(),
        importance: importance as u8,
        year,
        raw_text,
    };
    Ok((case, split))
}

fn parse_documents(text: &str) -> Result<Vec<Value>> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        match serde_json::from_str::<Value>(text)? {
            Value::Array(items) => Ok(items),
            _ => unreachable!("starts with ["),
        }
    } else if trimmed.starts_with('{') && serde_json::from_str::<Value>(text).is_ok() {
        Ok(vec![serde_json::from_str(text)?])
    } else {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(Error::from))
            .collect()
    }
}

/// Reads cases from one JSON array, JSON-lines or single-document file.
pub fn read_cases(path: &Path, fm: &FieldMap) -> Result<Vec<Case>> {
    Ok(read_tagged(path, fm)?.into_iter().map(|(c, _)| c).collect())
}

fn read_tagged(path: &Path, fm: &FieldMap) -> Result<Vec<(Case, Option<String>)>> {
    let docs = parse_documents(&read_to_string(path)?)?;
    docs.iter().enumerate().map(|(i, d)| parse_case(d, fm, i)).collect()
}

fn split_aliases(name: SplitName) -> [String; 2] {
    [name.as_str().to_string(), format!("EN_{}", name.as_str())]
}

fn list_json(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json" || x == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

fn read_split(dir: &Path, name: SplitName, fm: &FieldMap) -> Result<Option<Vec<Case>>> {
    for alias in split_aliases(name) {
        for ext in ["json", "jsonl"] {
            let file = dir.join(format!("{alias}.{ext}"));
            if file.is_file() {
                return read_cases(&file, fm).map(Some);
            }
        }
        let sub = dir.join(&alias);
        if sub.is_dir() {
            let mut cases = Vec::new();
            for f in list_json(&sub)? {
                cases.extend(read_cases(&f, fm)?);
            }
            return Ok(Some(cases));
        }
    }
    Ok(None)
}

fn derive_labels<'a>(cases: impl Iterator<Item = &'a Case>) -> Result<LabelVocabulary> {
    let all: BTreeSet<&String> = cases.flat_map(|c| c.violated_articles.iter()).collect();
    LabelVocabulary::new(all.into_iter().cloned().collect())
}

/// Loads a corpus from a directory of split files (`train.json`, `dev.jsonl`,
/// `EN_test/*.json`, ...) or from one file whose records carry a `split`
/// field. A file without split tags is split chronologically.
///
/// The label vocabulary comes from `labels.json` next to the data when
/// present, otherwise from the union of observed labels.
pub fn ingest_corpus(path: &Path, fm: &FieldMap) -> Result<Corpus> {
    let (dir, splits) = if path.is_dir() {
        let mut splits = Vec::new();
        for name in SplitName::ALL {
            if let Some(cases) = read_split(path, name, fm)? {
                splits.push((name, cases));
            }
        }
        if splits.is_empty() {
            return Err(Error::Argument(format!("{} holds no train/dev/test data", path.display())));
        }
        (path.to_path_buf(), splits)
    } else {
        let tagged = read_tagged(path, fm)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if tagged.iter().any(|(_, s)| s.is_none()) {
            let cases: Vec<Case> = tagged.into_iter().map(|(c, _)| c).collect();
            let labels = load_labels(&dir, cases.iter())?;
            for c in &cases {
                c.validate(Some(&labels))?;
            }
            return split_chronologically(labels, cases, 10, 0);
        }
        let mut by: Vec<(SplitName, Vec<Case>)> = SplitName::ALL.iter().map(|&n| (n, Vec::new())).collect();
        for (case, split) in tagged {
            let split = split.unwrap_or_default();
            let slot = by
                .iter_mut()
                .find(|(n, _)| split_aliases(*n).iter().any(|a| a.eq_ignore_ascii_case(&split)))
                .ok_or_else(|| Error::Validation {
                    case_id: case.case_id.clone(),
                    detail: format!("unknown split {split}"),
                })?;
            slot.1.push(case);
        }
        (dir, by.into_iter().filter(|(_, c)| !c.is_empty()).collect())
    };
    let labels = load_labels(&dir, splits.iter().flat_map(|(_, c)| c.iter()))?;
    let splits = splits.into_iter().map(|(n, c)| CorpusSplit::new(n, c)).collect();
    Corpus::new(labels, splits)
}

fn load_labels<'a>(dir: &Path, cases: impl Iterator<Item = &'a Case>) -> Result<LabelVocabulary> {
    let file = dir.join("labels.json");
    if file.is_file() {
        let articles: Vec<String> = serde_json::from_str(&read_to_string(&file)?)?;
        LabelVocabulary::new(articles)
    } else {
        derive_labels(cases)
    }
}

/// Writes `labels.json` and one canonical JSON array per split.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    write_file(&dir.join("labels.json"), serde_json::to_string_pretty(&corpus.labels)? + "\n")?;
    for s in &corpus.splits {
        let body = serde_json::to_string_pretty(&s.cases)? + "\n";
        write_file(&dir.join(format!("{}.json", s.name.as_str())), body)?;
    }
    Ok(())
}
