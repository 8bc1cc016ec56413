//! Word- and fact-level attention capture, HTML heatmaps and entity
//! attention share.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use ljp_tensor::Real;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::anonymizer::{recognize_entities, EntitySpan, Gazetteer};
use crate::corpus::{tokenize, tokenize_with_offsets, Case};
use crate::error::{Error, Result};
use crate::models::{Model, Prediction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactTrace {
    /// Index of the fact in `Case::facts`.
    pub fact_index: usize,
    /// Attended tokens; truncated facts keep only their attended prefix.
    pub tokens: Vec<String>,
    /// Sums to 1 over `tokens`.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub case_id: String,
    pub model: String,
    pub facts: Vec<FactTrace>,
    /// Learned fact attention for hierarchical models; for flat models the
    /// share of word attention falling in each fact. Sums to 1.
    pub fact_weights: Vec<f64>,
    pub hierarchical: bool,
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.iter().map(|x| x / total).collect()
    } else {
        vec![1.0 / v.len() as f64; v.len()]
    }
}

/// Runs `model` on `case` once and reads the prediction and the attention
/// from that pass.
pub fn capture_trace<F: Real>(model: &Model<F>, case: &Case) -> Result<(AttentionTrace, Prediction)> {
    let input = model.encode(case);
    let (tape, fwd) = model.run(&input)?;
    let output = tape.value(fwd.output).to_f64_vec();
    let prediction = model.network.head.predict(model.spec().task, &output)?;
    let att = fwd.attention(&tape);
    let tokens_of = |k: usize| tokenize(&case.facts[input.fact_index[k]]);
    let mut facts = Vec::new();
    let fact_weights;
    let hierarchical = att.facts.is_some();
    if let Some(fw) = att.facts {
        for (k, w) in att.words.iter().enumerate() {
            let mut tokens = tokens_of(k);
            tokens.truncate(w.len());
            facts.push(FactTrace {
                fact_index: input.fact_index[k],
                tokens,
                weights: normalized(w),
            });
        }
        fact_weights = fw;
    } else {
        // one flat segment: fact 0, SEP, fact 1, ... possibly truncated
        let w = &att.words[0];
        let mut pos = 0;
        let mut mass = Vec::new();
        for (k, ids) in input.facts.iter().enumerate() {
            if k > 0 {
                pos += 1;
            }
            if pos >= w.len() {
                break;
            }
            let end = (pos + ids.len()).min(w.len());
            let mut tokens = tokens_of(k);
            tokens.truncate(end - pos);
            mass.push(w[pos..end].iter().sum::<f64>());
            facts.push(FactTrace {
                fact_index: input.fact_index[k],
                tokens,
                weights: normalized(&w[pos..end]),
            });
            pos = end;
        }
        fact_weights = normalized(&mass);
    }
    Ok((
        AttentionTrace {
            case_id: case.case_id.clone(),
            model: model.spec().arch.as_str().into(),
            facts,
            fact_weights,
            hierarchical,
        },
        prediction,
    ))
}

impl AttentionTrace {
    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Error::Argument(format!("trace of {}: {d}", self.case_id));
        if self.fact_weights.len() != self.facts.len() {
            return Err(bad(format!("{} fact weights for {} facts", self.fact_weights.len(), self.facts.len())));
        }
        for f in &self.facts {
            if f.tokens.len() != f.weights.len() {
                return Err(bad(format!(
                    "fact {} has {} tokens and {} weights",
                    f.fact_index,
                    f.tokens.len(),
                    f.weights.len()
                )));
            }
        }
        Ok(())
    }

    /// Checks that the traced tokens are the tokens of `case`.
    pub fn check_against(&self, case: &Case) -> Result<()> {
        self.validate()?;
        for f in &self.facts {
            let text = case
                .facts
                .get(f.fact_index)
                .ok_or_else(|| Error::Argument(format!("trace refers to missing fact {}", f.fact_index)))?;
            let toks = tokenize(text);
            if f.tokens.len() > toks.len() || toks[..f.tokens.len()] != f.tokens[..] {
                return Err(Error::Argument(format!(
                    "trace tokens of fact {} do not match case {}",
                    f.fact_index, case.case_id
                )));
            }
        }
        Ok(())
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> String {
    s.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&amp;", "&")
}

/// Min-max scaling to [0, 1]; constant input maps to 0.5.
fn shades(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo > 0.0 {
        v.iter().map(|x| (x - lo) / (hi - lo)).collect()
    } else {
        vec![0.5; v.len()]
    }
}

const STYLE: &str = "body{font-family:sans-serif;max-width:60em;margin:2em auto}\
.fact{display:flex;gap:.6em;margin:.4em 0}\
.bar{flex:0 0 .6em;border:1px solid #888}\
.w{padding:0 .1em}";

/// Self-contained HTML: each word shaded by its min-max-scaled weight within
/// the fact, one vertical bar per fact. Raw weights are kept in `data-w` and
/// `data-fw` attributes.
pub fn render_heatmap(trace: &AttentionTrace) -> Result<String> {
    trace.validate()?;
    let mut html = String::new();
    let title = format!("{} ({})", escape(&trace.case_id), escape(&trace.model));
    let _ = write!(
        html,
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>{title}</title>\n<style>{STYLE}</style>\n</head>\n<body>\n<h1>{title}</h1>\n"
    );
    let fact_shades = shades(&trace.fact_weights);
    for ((f, fw), fs) in trace.facts.iter().zip(&trace.fact_weights).zip(fact_shades) {
        let _ = writeln!(html, "<div class=\"fact\" data-fact=\"{}\" data-fw=\"{fw:?}\">", f.fact_index);
        let _ = writeln!(html, "<div class=\"bar\" style=\"background:rgba(40,90,200,{fs:.3})\"></div>");
        html.push_str("<p>");
        for (i, ((tok, w), s)) in f.tokens.iter().zip(&f.weights).zip(shades(&f.weights)).enumerate() {
            if i > 0 {
                html.push(' ');
            }
            let _ = write!(
                html,
                "<span class=\"w\" data-w=\"{w:?}\" style=\"background:rgba(220,40,40,{s:.3})\">{}</span>",
                escape(tok)
            );
        }
        html.push_str("</p>\n</div>\n");
    }
    html.push_str("</body>\n</html>\n");
    Ok(html)
}

pub fn export_heatmap(trace: &AttentionTrace, case: &Case, path: &Path) -> Result<()> {
    trace.check_against(case)?;
    let html = render_heatmap(trace)?;
    std::fs::write(path, html).map_err(|e| Error::io(path, e))
}

/// Fact and word weights read back from a rendered heatmap.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedHeatmap {
    pub fact_index: Vec<usize>,
    pub fact_weights: Vec<f64>,
    pub words: Vec<Vec<(String, f64)>>,
}

pub fn parse_heatmap(html: &str) -> Result<ParsedHeatmap> {
    static FACT: OnceLock<Regex> = OnceLock::new();
    static WORD: OnceLock<Regex> = OnceLock::new();
    let fact = FACT.get_or_init(|| Regex::new(r#"<div class="fact" data-fact="(\d+)" data-fw="([^"]+)">"#).expect("valid regex"));
    let word = WORD.get_or_init(|| Regex::new(r#"<span class="w" data-w="([^"]+)"[^>]*>([^<]*)</span>"#).expect("valid regex"));
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| Error::Argument(format!("bad weight `{s}` in heatmap")))
    };
    let starts: Vec<_> = fact.captures_iter(html).collect();
    let mut out = ParsedHeatmap {
        fact_index: Vec::new(),
        fact_weights: Vec::new(),
        words: Vec::new(),
    };
    for (k, c) in starts.iter().enumerate() {
        let body_start = c.get(0).expect("match").end();
        let body_end = starts.get(k + 1).map_or(html.len(), |n| n.get(0).expect("match").start());
        out.fact_index.push(c[1].parse().map_err(|_| Error::Argument("bad fact index".into()))?);
        out.fact_weights.push(num(&c[2])?);
        out.words.push(
            word.captures_iter(&html[body_start..body_end])
                .map(|w| Ok((unescape(&w[2]), num(&w[1])?)))
                .collect::<Result<_>>()?,
        );
    }
    Ok(out)
}

/// Entities of each fact of `case`, in char offsets of that fact.
pub fn entity_spans(case: &Case, gazetteer: &Gazetteer) -> Vec<Vec<EntitySpan>> {
    case.facts.iter().map(|f| recognize_entities(f, gazetteer)).collect()
}

/// Word-attention mass on entity tokens, averaged over facts by fact weight.
/// `spans[i]` holds the entities of `case.facts[i]`. A span whose edges do
/// not fall on token edges is skipped.
pub fn entity_attention_share(trace: &AttentionTrace, case: &Case, spans: &[Vec<EntitySpan>]) -> Result<f64> {
    trace.check_against(case)?;
    let fw = normalized(&trace.fact_weights);
    let mut share = 0.0;
    for (f, w_f) in trace.facts.iter().zip(fw) {
        let toks = tokenize_with_offsets(&case.facts[f.fact_index]);
        let mut is_entity = vec![false; toks.len()];
        for s in spans.get(f.fact_index).map_or(&[][..], Vec::as_slice) {
            let first = toks.iter().position(|t| t.start == s.start);
            let last = toks.iter().position(|t| t.end == s.end);
            match (first, last) {
                (Some(a), Some(b)) if a <= b => is_entity[a..=b].iter_mut().for_each(|e| *e = true),
                _ => log::warn!(
                    "case {}: entity span {}..{} does not align with tokens; skipped",
                    case.case_id,
                    s.start,
                    s.end
                ),
            }
        }
        let mass: f64 = f.weights.iter().zip(&is_entity).filter(|(_, e)| **e).map(|(w, _)| w).sum();
        share += w_f * mass;
    }
    Ok(share.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anonymizer::EntityType;
    use crate::corpus::fixtures::case;

    fn toy_trace() -> (AttentionTrace, Case) {
        let c = case("c1", &["Mr Smith went to Kharkiv", "the <court> & \"judge\""], &[], 1, 2000);
        let t = AttentionTrace {
            case_id: "c1".into(),
            model: "han".into(),
            facts: vec![
                FactTrace {
                    fact_index: 0,
                    tokens: tokenize(&c.facts[0]),
                    weights: vec![0.1, 0.3, 0.2, 0.1, 0.3],
                },
                FactTrace {
                    fact_index: 1,
                    tokens: tokenize(&c.facts[1]),
                    weights: vec![1.0 / 3.0; 3],
                },
            ],
            fact_weights: vec![0.75, 0.25],
            hierarchical: true,
        };
        (t, c)
    }

    #[test]
    fn heatmap_round_trips_weights() {
        let (t, _) = toy_trace();
        let html = render_heatmap(&t).unwrap();
        let back = parse_heatmap(&html).unwrap();
        assert_eq!(back.fact_weights, t.fact_weights);
        assert_eq!(back.fact_index, vec![0, 1]);
        for (f, words) in t.facts.iter().zip(&back.words) {
            let (toks, ws): (Vec<String>, Vec<f64>) = words.iter().cloned().unzip();
            assert_eq!(toks, f.tokens);
            assert_eq!(ws, f.weights);
        }
        assert_eq!(html, render_heatmap(&t).unwrap());
    }

    #[test]
    fn tokens_are_escaped() {
        let (mut t, _) = toy_trace();
        t.facts[1].tokens[0] = "<b>&".into();
        let html = render_heatmap(&t).unwrap();
        assert!(html.contains("&lt;b&gt;&amp;"));
        assert!(!html.contains("<b>&"));
        assert_eq!(parse_heatmap(&html).unwrap().words[1][0].0, "<b>&");
    }

    #[test]
    fn constant_weights_shade_uniformly() {
        let (t, _) = toy_trace();
        let html = render_heatmap(&t).unwrap();
        let fact1 = &html[html.find("data-fact=\"1\"").unwrap()..];
        assert_eq!(fact1.matches("rgba(220,40,40,0.500)").count(), 3);
        assert_eq!(shades(&[0.0, 1.0, 0.25]), vec![0.0, 1.0, 0.25]);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let (mut t, c) = toy_trace();
        t.facts[0].weights.pop();
        assert!(render_heatmap(&t).is_err());
        let (mut t, _) = toy_trace();
        t.facts[0].tokens[0] = "mrs".into();
        assert!(t.check_against(&c).is_err());
    }

    #[test]
    fn entity_share_examples() {
        let (t, c) = toy_trace();
        assert_eq!(entity_attention_share(&t, &c, &[vec![], vec![]]).unwrap(), 0.0);
        // "Smith" is token 1, weight 0.3, in a fact of weight 0.75
        let smith = EntitySpan {
            start: 3,
            end: 8,
            entity_type: EntityType::Person,
        };
        let share = entity_attention_share(&t, &c, &[vec![smith], vec![]]).unwrap();
        assert!((share - 0.75 * 0.3).abs() < 1e-15);
        // misaligned span is skipped
        let bad = EntitySpan {
            start: 4,
            end: 8,
            entity_type: EntityType::Person,
        };
        assert_eq!(entity_attention_share(&t, &c, &[vec![bad], vec![]]).unwrap(), 0.0);
    }

    #[test]
    fn single_fact_full_entity_share() {
        let c = case("c2", &["Kharkiv"], &[], 1, 2000);
        let t = AttentionTrace {
            case_id: "c2".into(),
            model: "bigru-att".into(),
            facts: vec![FactTrace {
                fact_index: 0,
                tokens: vec!["kharkiv".into()],
                weights: vec![1.0],
            }],
            fact_weights: vec![1.0],
            hierarchical: false,
        };
        let span = EntitySpan {
            start: 0,
            end: 7,
            entity_type: EntityType::Location,
        };
        assert_eq!(entity_attention_share(&t, &c, &[vec![span]]).unwrap(), 1.0);
    }
}
