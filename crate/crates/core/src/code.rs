//! ICD-10-CM code strings, categories, and code ranges.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodeError {
    #[error("invalid ICD-10-CM code {0:?}: expected one letter, two alphanumerics, then optionally a dot and 1-4 alphanumerics")]
    InvalidCode(String),
    #[error("invalid code range {0:?}")]
    InvalidRange(String),
}

/// A normalized ICD-10-CM diagnosis code.
///
/// Normal form is uppercase with a single dot after the 3-character category
/// whenever subcategory characters exist, e.g. `I12.9`, `S72.044G`, `I10`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IcdCode(String);

impl IcdCode {
    /// Parses and normalizes a code string. Accepts lowercase and undotted
    /// forms; normalization is idempotent.
    pub fn new(raw: &str) -> Result<Self, CodeError> {
        let trimmed = raw.trim();
        let upper = trimmed.to_ascii_uppercase();
        let compact: String = upper.chars().filter(|c| *c != '.').collect();

        let bytes = compact.as_bytes();
        if bytes.len() < 3 || bytes.len() > 7 {
            return Err(CodeError::InvalidCode(raw.to_string()));
        }
        if !bytes[0].is_ascii_uppercase() {
            return Err(CodeError::InvalidCode(raw.to_string()));
        }
        if !bytes[1..].iter().all(|b| b.is_ascii_alphanumeric()) {
            return Err(CodeError::InvalidCode(raw.to_string()));
        }
        // Reject strings where the dot was somewhere other than after the
        // category (e.g. "I1.29") or doubled.
        if let Some(pos) = upper.find('.') {
            if pos != 3 || upper.matches('.').count() != 1 || upper.len() == 4 {
                return Err(CodeError::InvalidCode(raw.to_string()));
            }
        }

        let normalized = if compact.len() > 3 {
            format!("{}.{}", &compact[..3], &compact[3..])
        } else {
            compact
        };
        Ok(IcdCode(normalized))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The 3-character category, e.g. `I12` for `I12.9`.
    pub fn category(&self) -> &str {
        &self.0[..3]
    }

    /// Dot-free form used for prefix containment checks.
    pub fn compact(&self) -> String {
        self.0.chars().filter(|c| *c != '.').collect()
    }

    /// True when `self` equals `other` or sits below it in the code
    /// hierarchy by string prefix (dot-insensitive), e.g. `I12.9` is within
    /// `I12`.
    pub fn is_within(&self, other: &IcdCode) -> bool {
        self.compact().starts_with(&other.compact())
    }
}

impl fmt::Display for IcdCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for IcdCode {
    type Err = CodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        IcdCode::new(s)
    }
}

impl Serialize for IcdCode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for IcdCode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        IcdCode::new(&raw).map_err(serde::de::Error::custom)
    }
}

/// A category range such as `I10-I16`. Single categories act as one-element
/// ranges (`D49` contains exactly the `D49` subtree).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CodeRange {
    start: String,
    end: String,
}

impl CodeRange {
    pub fn parse(raw: &str) -> Result<Self, CodeError> {
        let trimmed = raw.trim();
        let (start, end) = match trimmed.split_once('-') {
            Some((a, b)) => (a.trim(), b.trim()),
            None => (trimmed, trimmed),
        };
        if !is_category_like(start) || !is_category_like(end) || start > end {
            return Err(CodeError::InvalidRange(raw.to_string()));
        }
        Ok(CodeRange { start: start.to_ascii_uppercase(), end: end.to_ascii_uppercase() })
    }

    pub fn start(&self) -> &str {
        &self.start
    }

    pub fn end(&self) -> &str {
        &self.end
    }

    /// Containment under category-string ordering; inclusive on both ends
    /// and reflexive for single-code ranges.
    pub fn contains(&self, code: &IcdCode) -> bool {
        let cat = code.category();
        self.start.as_str() <= cat && cat <= self.end.as_str()
    }

    pub fn contains_category(&self, category: &str) -> bool {
        self.start.as_str() <= category && category <= self.end.as_str()
    }
}

impl fmt::Display for CodeRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.start == self.end {
            f.write_str(&self.start)
        } else {
            write!(f, "{}-{}", self.start, self.end)
        }
    }
}

fn is_category_like(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() == 3
        && b[0].is_ascii_alphabetic()
        && b[1..].iter().all(|c| c.is_ascii_alphanumeric())
}

/// True when the string is a well-formed node identifier for a code range
/// (either `A00-B99` or a bare category).
pub fn is_range_node(s: &str) -> bool {
    CodeRange::parse(s).is_ok()
}
