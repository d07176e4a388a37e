//! Guideline store: ToC-indexed sections, code-to-section routing, and
//! cached per-code summaries.

mod cache;
mod summary;
pub mod toc;

pub use cache::{CacheGet, CacheKey, SummaryCache};
pub use summary::{
    summarise_for_code, GuidelineSummary, SummariseOptions, SummaryError, SummaryStatus,
};
pub use toc::{build_toc, build_toc_from_sidecar, builtin_chapter_range, SidecarEntry, TocEntry};

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code::IcdCode;

#[derive(Debug, Error)]
pub enum GuidelineError {
    #[error("no table of contents found; supply a sidecar ToC file (JSON list of {{section_id, title, code_range, line}})")]
    MissingToc,
    #[error("store file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("store file malformed: {0}")]
    Malformed(#[from] serde_json::Error),
}

/// A contiguous slice of the guidelines narrative addressed by section id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidelineSection {
    pub section_id: String,
    pub text: String,
    pub page_estimate: usize,
}

/// Roughly one printed page of extracted text.
const CHARS_PER_PAGE: usize = 3000;

#[derive(Debug, Clone)]
pub struct StoreOptions {
    /// Guideline vintage tag; autodetected from an `FY <year>` marker when
    /// not set.
    pub version: Option<String>,
    /// Always-applicable general-convention sections, returned for every
    /// code ahead of the chapter-specific section.
    pub general_sections: Vec<String>,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions { version: None, general_sections: vec!["I.A".to_string(), "I.B".to_string()] }
    }
}

/// Code-to-section routing result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeSections {
    /// General sections first, then the chapter-specific section.
    pub section_ids: Vec<String>,
    /// The chapter-specific entry, when the code's category fell inside a
    /// chapter range.
    pub chapter_section: Option<String>,
    /// Set when the code's category lies outside every chapter range.
    pub notice: Option<String>,
}

/// Immutable index over the guidelines text.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuidelineStore {
    version: String,
    general_sections: Vec<String>,
    toc: Vec<TocEntry>,
    sections: BTreeMap<String, GuidelineSection>,
    /// Verbatim code mention -> retrievable section ids, rebuilt on load.
    #[serde(skip)]
    mention_index: BTreeMap<String, BTreeSet<String>>,
}

impl GuidelineStore {
    /// Builds the store from pre-extracted guidelines text, using the
    /// embedded ToC or a sidecar when provided.
    pub fn build(
        text: &str,
        sidecar: Option<&[SidecarEntry]>,
        options: StoreOptions,
    ) -> Result<Self, GuidelineError> {
        let toc = match sidecar {
            Some(entries) => build_toc_from_sidecar(text, entries)?,
            None => build_toc(text)?,
        };

        let mut sections = BTreeMap::new();
        for entry in &toc {
            if let Some((start, end)) = entry.span {
                let slice = &text[start..end.min(text.len())];
                sections.insert(
                    entry.section_id.clone(),
                    GuidelineSection {
                        section_id: entry.section_id.clone(),
                        text: slice.to_string(),
                        page_estimate: slice.len().div_ceil(CHARS_PER_PAGE).max(1),
                    },
                );
            }
        }

        let version = options
            .version
            .or_else(|| detect_version(text))
            .unwrap_or_else(|| "unknown".to_string());

        let mut store = GuidelineStore {
            version,
            general_sections: options.general_sections,
            toc,
            sections,
            mention_index: BTreeMap::new(),
        };
        store.rebuild_mention_index();
        Ok(store)
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn toc(&self) -> &[TocEntry] {
        &self.toc
    }

    pub fn general_sections(&self) -> &[String] {
        &self.general_sections
    }

    pub fn section(&self, section_id: &str) -> Option<&GuidelineSection> {
        self.sections.get(section_id)
    }

    /// The sections consulted for any code: the configured general
    /// conventions first, then the chapter whose range contains the code's
    /// category.
    pub fn sections_for_code(&self, code: &IcdCode) -> CodeSections {
        let mut section_ids: Vec<String> = self
            .general_sections
            .iter()
            .filter(|id| self.sections.contains_key(*id))
            .cloned()
            .collect();

        let chapter_section = self
            .toc
            .iter()
            .filter(|e| e.section_id.starts_with("I.C.") && e.depth() == 2)
            .find(|e| {
                e.parsed_range()
                    .or_else(|| e.chapter_number().and_then(builtin_chapter_range))
                    .map(|r| r.contains(code))
                    .unwrap_or(false)
            })
            .map(|e| e.section_id.clone());

        let notice = match &chapter_section {
            Some(id) => {
                section_ids.push(id.clone());
                None
            }
            None => Some(format!(
                "category {} is outside every chapter range; general sections only",
                code.category()
            )),
        };
        CodeSections { section_ids, chapter_section, notice }
    }

    /// Sections (beyond the routed ones) whose text mentions the code
    /// verbatim; surfaces cross-chapter rules deterministically.
    pub fn related_sections_for_code(&self, code: &IcdCode) -> Vec<String> {
        let routed: BTreeSet<String> =
            self.sections_for_code(code).section_ids.into_iter().collect();
        self.mention_index
            .get(code.as_str())
            .map(|ids| ids.iter().filter(|id| !routed.contains(*id)).cloned().collect())
            .unwrap_or_default()
    }

    /// The full retrieval set for summarisation: general + chapter +
    /// related-mention sections, resolved to section texts.
    pub fn retrieve_for_code(&self, code: &IcdCode) -> Vec<&GuidelineSection> {
        let mut ids = self.sections_for_code(code).section_ids;
        ids.extend(self.related_sections_for_code(code));
        ids.iter().filter_map(|id| self.sections.get(id)).collect()
    }

    /// Sections whose contents are scanned for verbatim code mentions: the
    /// general sections plus every chapter entry.
    fn retrievable_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.general_sections.clone();
        for entry in &self.toc {
            if entry.section_id.starts_with("I.C.") && entry.depth() == 2 {
                ids.push(entry.section_id.clone());
            }
        }
        ids
    }

    fn rebuild_mention_index(&mut self) {
        static RE: OnceLock<Regex> = OnceLock::new();
        let re = RE.get_or_init(|| {
            Regex::new(r"\b[A-Z][0-9][0-9A-Z](?:\.[0-9A-Z]{1,4})?\b").expect("static regex")
        });
        let mut index: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for id in self.retrievable_ids() {
            if let Some(section) = self.sections.get(&id) {
                for token in re.find_iter(&section.text) {
                    if let Ok(code) = IcdCode::new(token.as_str()) {
                        index.entry(code.as_str().to_string()).or_default().insert(id.clone());
                    }
                }
            }
        }
        self.mention_index = index;
    }

    pub fn save(&self, path: &Path) -> Result<(), GuidelineError> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GuidelineError> {
        let raw = std::fs::read_to_string(path)?;
        let mut store: GuidelineStore = serde_json::from_str(&raw)?;
        store.rebuild_mention_index();
        Ok(store)
    }
}

fn detect_version(text: &str) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"FY\s?(\d{4})").expect("static regex"));
    re.captures(text).map(|c| c[1].to_string())
}
