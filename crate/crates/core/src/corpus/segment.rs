use std::sync::OnceLock;

use regex::Regex;

/// Facts cut from a raw case description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmented {
    pub facts: Vec<String>,
    /// Set when no numbered paragraph was found.
    pub warning: bool,
}

fn fact_start() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^[ \t]*\d+\.\s").expect("valid regex"))
}

/// Splits a case description into numbered fact paragraphs.
///
/// A fact starts at every line that begins with `N.` followed by whitespace
/// and runs up to the newline preceding the next such line. Text before the
/// first numbered paragraph is dropped, so joining the facts with `\n`
/// reproduces the input from the first numbered paragraph on.
pub fn segment_facts(raw: &str) -> Segmented {
    let starts: Vec<usize> = fact_start().find_iter(raw).map(|m| m.start()).collect();
    if starts.is_empty() {
        log::warn!("no numbered paragraph found");
        return Segmented {
            facts: Vec::new(),
            warning: true,
        };
    }
    let mut facts = Vec::with_capacity(starts.len());
    for (i, &s) in starts.iter().enumerate() {
        let end = match starts.get(i + 1) {
            // the next match sits at a line start, so the byte before it is '\n'
            Some(&next) => next - 1,
            None => raw.len(),
        };
        facts.push(raw[s..end].to_string());
    }
    Segmented {
        facts,
        warning: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Line-scanning oracle: a line opens a fact when, after horizontal
    /// whitespace, it has digits, a dot and a whitespace character.
    fn oracle(raw: &str) -> Vec<String> {
        let mut facts: Vec<String> = Vec::new();
        let lines: Vec<&str> = raw.split('\n').collect();
        for (i, line) in lines.iter().enumerate() {
            let trimmed = line.trim_start_matches([' ', '\t']);
            let digits = trimmed.chars().take_while(|c| c.is_ascii_digit()).count();
            let rest = &trimmed[digits..];
            let has_next_line = i + 1 < lines.len();
            let opens = digits > 0
                && rest.starts_with('.')
                && (rest[1..].starts_with(char::is_whitespace) || (rest.len() == 1 && has_next_line));
            if opens {
                facts.push(line.to_string());
            } else if let Some(last) = facts.last_mut() {
                last.push('\n');
                last.push_str(line);
            }
        }
        facts
    }

    #[test]
    fn two_paragraphs() {
        let s = segment_facts("1. The applicant was born.\n2. He was arrested.");
        assert_eq!(s.facts, vec!["1. The applicant was born.", "2. He was arrested."]);
        assert!(!s.warning);
    }

    #[test]
    fn preamble_is_dropped() {
        assert_eq!(segment_facts("PREAMBLE\n1. Fact one.").facts, vec!["1. Fact one."]);
    }

    #[test]
    fn no_numbering_warns() {
        let s = segment_facts("just some text\nwithout numbers");
        assert!(s.facts.is_empty() && s.warning);
    }

    #[test]
    fn forty_five_paragraphs_match_line_oracle() {
        let mut raw = String::from("THE FACTS\nI. THE CIRCUMSTANCES OF THE CASE\n");
        let preamble_len = raw.len();
        for i in 1..=45 {
            raw.push_str(&format!("{i}. Paragraph number {i} says something.\n"));
            if i % 7 == 0 {
                raw.push_str("   continuation line with 3.5 percent\n\n");
            }
        }
        let s = segment_facts(&raw);
        assert_eq!(s.facts.len(), 45);
        assert_eq!(s.facts, oracle(&raw));
        assert_eq!(s.facts.join("\n"), raw[preamble_len..]);
    }

    proptest::proptest! {
        #[test]
        fn join_reproduces_input_without_preamble(
            lines in proptest::collection::vec("([0-9]{1,3}\\. )?[a-zA-Z .,0-9]{0,20}", 0..20)
        ) {
            let raw = lines.join("\n");
            let s = segment_facts(&raw);
            if let Some(first) = fact_start().find(&raw) {
                proptest::prop_assert_eq!(s.facts.join("\n"), &raw[first.start()..]);
                proptest::prop_assert_eq!(s.facts, oracle(&raw));
            } else {
                proptest::prop_assert!(s.warning);
            }
        }
    }
}
