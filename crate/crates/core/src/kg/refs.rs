//! Extraction of code references from instructional-note text.
//!
//! excludes1 notes embed their targets as plain text, e.g.
//! "hypertensive disease complicating pregnancy (O10-O11, O13-O16)" or
//! "essential hypertension involving vessels of eye (H35.0-)".

use std::sync::OnceLock;

use regex::Regex;

use crate::code::{CodeRange, IcdCode};

/// A code reference found in note text: a category range, a dotted prefix
/// wildcard (`H35.0-`), or an exact code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodeRef {
    Range(CodeRange),
    Prefix(String),
    Exact(IcdCode),
}

impl CodeRef {
    /// Containment test: exact references cover the code and its
    /// descendants, mirroring single-code range reflexivity.
    pub fn matches(&self, code: &IcdCode) -> bool {
        match self {
            CodeRef::Range(range) => range.contains(code),
            CodeRef::Prefix(prefix) => code.compact().starts_with(prefix),
            CodeRef::Exact(other) => code.is_within(other),
        }
    }
}

fn ref_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        // Branch order matters: ranges, then dotted prefix wildcards, then
        // exact codes. ICD-10-CM categories always carry a digit in the
        // second position, which keeps ordinary words out.
        Regex::new(
            r"\b(?:([A-Z][0-9][0-9A-Z])-([A-Z][0-9][0-9A-Z])\b|([A-Z][0-9][0-9A-Z]\.[0-9A-Z]{0,4})-|([A-Z][0-9][0-9A-Z](?:\.[0-9A-Z]{1,4})?)\b)",
        )
        .expect("static regex")
    })
}

/// Scans free text for code references, left to right.
pub fn extract_code_refs(text: &str) -> Vec<CodeRef> {
    let mut refs = Vec::new();
    for caps in ref_regex().captures_iter(text) {
        if let (Some(start), Some(end)) = (caps.get(1), caps.get(2)) {
            if let Ok(range) = CodeRange::parse(&format!("{}-{}", start.as_str(), end.as_str())) {
                refs.push(CodeRef::Range(range));
            }
        } else if let Some(prefix) = caps.get(3) {
            let compact: String = prefix.as_str().chars().filter(|c| *c != '.').collect();
            refs.push(CodeRef::Prefix(compact));
        } else if let Some(exact) = caps.get(4) {
            if let Ok(code) = IcdCode::new(exact.as_str()) {
                refs.push(CodeRef::Exact(code));
            }
        }
    }
    refs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(s: &str) -> IcdCode {
        IcdCode::new(s).unwrap()
    }

    #[test]
    fn extracts_ranges_prefixes_and_exacts() {
        let text = "hypertensive disease complicating pregnancy, childbirth and the puerperium (O10-O11, O13-O16)";
        let refs = extract_code_refs(text);
        assert_eq!(
            refs,
            vec![
                CodeRef::Range(CodeRange::parse("O10-O11").unwrap()),
                CodeRef::Range(CodeRange::parse("O13-O16").unwrap()),
            ]
        );

        let refs = extract_code_refs("involving vessels of eye (H35.0-)");
        assert_eq!(refs, vec![CodeRef::Prefix("H350".to_string())]);

        let refs = extract_code_refs("elevated blood-pressure reading (R03.0)");
        assert_eq!(refs, vec![CodeRef::Exact(code("R03.0"))]);
    }

    #[test]
    fn ignores_ordinary_words() {
        assert!(extract_code_refs("Hypertensive renal disease NOS").is_empty());
        assert!(extract_code_refs("see section four").is_empty());
    }

    #[test]
    fn containment_semantics() {
        let range = CodeRef::Range(CodeRange::parse("O10-O11").unwrap());
        assert!(range.matches(&code("O10.0")));
        assert!(!range.matches(&code("O13.1")));

        let prefix = CodeRef::Prefix("H350".to_string());
        assert!(prefix.matches(&code("H35.01")));
        assert!(!prefix.matches(&code("H35.1")));

        let exact = CodeRef::Exact(code("I10"));
        assert!(exact.matches(&code("I10")));
        assert!(!exact.matches(&code("I15.0")));
    }
}
