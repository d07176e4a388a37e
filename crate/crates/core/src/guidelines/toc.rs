//! Table-of-contents extraction for the narrative coding guidelines.
//!
//! Input is pre-extracted plain text with the ToC intact: a block of lines
//! with dot leaders and page numbers near the top, followed by the body in
//! the same heading order. Broken extractions can supply a sidecar ToC
//! (JSON list of entries with body line numbers) instead.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::code::CodeRange;
use crate::guidelines::GuidelineError;

/// One ToC entry. `section_id` values are dotted paths such as `I`, `I.A`,
/// `I.C.9`, `I.C.9.a`; chapter-specific entries (`I.C.*`) carry the code
/// range governed by that chapter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TocEntry {
    pub section_id: String,
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code_range: Option<String>,
    /// Byte span of the section body (including child sections), when the
    /// heading could be located in the body.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<(usize, usize)>,
    /// Set when the body heading could not be resolved.
    #[serde(default)]
    pub degraded: bool,
}

impl TocEntry {
    pub fn depth(&self) -> usize {
        self.section_id.matches('.').count()
    }

    pub fn parsed_range(&self) -> Option<CodeRange> {
        self.code_range.as_deref().and_then(|r| CodeRange::parse(r).ok())
    }

    /// Chapter number for `I.C.<n>` entries.
    pub fn chapter_number(&self) -> Option<u32> {
        let rest = self.section_id.strip_prefix("I.C.")?;
        let head = rest.split('.').next()?;
        head.parse().ok()
    }
}

/// Sidecar ToC record: `line` is the 1-based line in the guidelines text
/// where the section body starts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SidecarEntry {
    pub section_id: String,
    pub title: String,
    #[serde(default)]
    pub code_range: Option<String>,
    pub line: usize,
}

/// The 22 ICD-10-CM chapters; used to resolve an `I.C.<n>` entry whose ToC
/// line does not carry its range.
pub const CHAPTER_TABLE: [(u32, &str, &str); 22] = [
    (1, "A00-B99", "Certain infectious and parasitic diseases"),
    (2, "C00-D49", "Neoplasms"),
    (3, "D50-D89", "Diseases of the blood and blood-forming organs and certain disorders involving the immune mechanism"),
    (4, "E00-E89", "Endocrine, nutritional and metabolic diseases"),
    (5, "F01-F99", "Mental, Behavioral and Neurodevelopmental disorders"),
    (6, "G00-G99", "Diseases of the nervous system"),
    (7, "H00-H59", "Diseases of the eye and adnexa"),
    (8, "H60-H95", "Diseases of the ear and mastoid process"),
    (9, "I00-I99", "Diseases of the circulatory system"),
    (10, "J00-J99", "Diseases of the respiratory system"),
    (11, "K00-K95", "Diseases of the digestive system"),
    (12, "L00-L99", "Diseases of the skin and subcutaneous tissue"),
    (13, "M00-M99", "Diseases of the musculoskeletal system and connective tissue"),
    (14, "N00-N99", "Diseases of the genitourinary system"),
    (15, "O00-O9A", "Pregnancy, childbirth and the puerperium"),
    (16, "P00-P96", "Certain conditions originating in the perinatal period"),
    (17, "Q00-Q99", "Congenital malformations, deformations and chromosomal abnormalities"),
    (18, "R00-R99", "Symptoms, signs and abnormal clinical and laboratory findings, not elsewhere classified"),
    (19, "S00-T88", "Injury, poisoning and certain other consequences of external causes"),
    (20, "V00-Y99", "External causes of morbidity"),
    (21, "Z00-Z99", "Factors influencing health status and contact with health services"),
    (22, "U00-U85", "Codes for special purposes"),
];

pub fn builtin_chapter_range(chapter: u32) -> Option<CodeRange> {
    CHAPTER_TABLE
        .iter()
        .find(|(n, _, _)| *n == chapter)
        .and_then(|(_, range, _)| CodeRange::parse(range).ok())
}

#[derive(Debug, Clone)]
struct TocLine {
    depth: usize,
    label: String,
    title: String,
}

fn toc_line_regexes() -> &'static [(usize, Regex)] {
    static RES: OnceLock<Vec<(usize, Regex)>> = OnceLock::new();
    RES.get_or_init(|| {
        vec![
            (0, Regex::new(r"^Section\s+([IVXLC]+)\.?\s+(.+?)\s*\.{3,}\s*\d+\s*$").unwrap()),
            (1, Regex::new(r"^([A-Z])\.\s+(.+?)\s*\.{3,}\s*\d+\s*$").unwrap()),
            (2, Regex::new(r"^(\d{1,2})\.\s+(.+?)\s*\.{3,}\s*\d+\s*$").unwrap()),
            (3, Regex::new(r"^([a-z])\.\s+(.+?)\s*\.{3,}\s*\d+\s*$").unwrap()),
        ]
    })
}

fn match_toc_line(line: &str) -> Option<TocLine> {
    let trimmed = line.trim();
    for (depth, regex) in toc_line_regexes() {
        if let Some(caps) = regex.captures(trimmed) {
            return Some(TocLine {
                depth: *depth,
                label: caps[1].to_string(),
                title: caps[2].trim().to_string(),
            });
        }
    }
    None
}

fn chapter_range_from_title(title: &str) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"\(([A-Z][0-9][0-9A-Z])-([A-Z][0-9][0-9A-Z])\)").expect("static regex")
    });
    re.captures(title).map(|c| format!("{}-{}", &c[1], &c[2]))
}

/// Parses the ToC block and resolves each entry's byte span by locating
/// its heading in the body. Entries whose headings cannot be found are
/// flagged degraded rather than failing the build.
pub fn build_toc(text: &str) -> Result<Vec<TocEntry>, GuidelineError> {
    let (lines, block_start, block_end) = find_toc_block(text)?;

    // Assemble dotted ids from the nesting of the matched lines.
    let mut entries: Vec<(TocEntry, String)> = Vec::new();
    let mut path: Vec<String> = Vec::new();
    for line in &lines {
        path.truncate(line.depth);
        if path.len() < line.depth {
            // Orphan nesting (e.g. a letter entry with no Section parent);
            // skip rather than guess.
            continue;
        }
        path.push(line.label.clone());
        let section_id = path.join(".");
        let code_range = if section_id.starts_with("I.C.") && line.depth == 2 {
            chapter_range_from_title(&line.title).or_else(|| {
                line.label
                    .parse::<u32>()
                    .ok()
                    .and_then(builtin_chapter_range)
                    .map(|r| r.to_string())
            })
        } else {
            None
        };
        let needle = format!("{} {}", heading_token(line.depth, &line.label), line.title);
        entries.push((
            TocEntry { section_id, title: line.title.clone(), code_range, span: None, degraded: false },
            needle,
        ));
    }
    if entries.is_empty() {
        return Err(GuidelineError::MissingToc);
    }

    resolve_spans(text, block_start, block_end, entries)
}

/// Builds entries from a sidecar ToC: body line numbers instead of heading
/// search.
pub fn build_toc_from_sidecar(
    text: &str,
    sidecar: &[SidecarEntry],
) -> Result<Vec<TocEntry>, GuidelineError> {
    if sidecar.is_empty() {
        return Err(GuidelineError::MissingToc);
    }
    let line_offsets: Vec<usize> = {
        let mut offsets = vec![0usize];
        for (i, b) in text.bytes().enumerate() {
            if b == b'\n' {
                offsets.push(i + 1);
            }
        }
        offsets
    };

    let mut with_starts: Vec<(TocEntry, Option<usize>)> = sidecar
        .iter()
        .map(|s| {
            let start = if s.line >= 1 && s.line <= line_offsets.len() {
                Some(line_offsets[s.line - 1])
            } else {
                None
            };
            (
                TocEntry {
                    section_id: s.section_id.clone(),
                    title: s.title.clone(),
                    code_range: s.code_range.clone().or_else(|| {
                        chapter_range_from_title(&s.title)
                    }),
                    span: None,
                    degraded: start.is_none(),
                },
                start,
            )
        })
        .collect();
    with_starts.sort_by_key(|(_, start)| start.unwrap_or(usize::MAX));
    close_spans(text.len(), &mut with_starts);
    Ok(with_starts.into_iter().map(|(e, _)| e).collect())
}

fn heading_token(depth: usize, label: &str) -> String {
    match depth {
        0 => format!("Section {label}."),
        _ => format!("{label}."),
    }
}

/// Finds the first run of at least three ToC-shaped lines.
fn find_toc_block(text: &str) -> Result<(Vec<TocLine>, usize, usize), GuidelineError> {
    let mut offset = 0usize;
    let mut run: Vec<TocLine> = Vec::new();
    let mut run_start = 0usize;
    let mut run_end = 0usize;

    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let content = line.trim_end_matches('\n');
        if content.trim().is_empty() {
            continue;
        }
        match match_toc_line(content) {
            Some(parsed) => {
                if run.is_empty() {
                    run_start = start;
                }
                run.push(parsed);
                run_end = offset;
            }
            None => {
                if run.len() >= 3 {
                    return Ok((run, run_start, run_end));
                }
                run.clear();
            }
        }
    }
    if run.len() >= 3 {
        return Ok((run, run_start, run_end));
    }
    Err(GuidelineError::MissingToc)
}

/// Locates each entry's heading in the body (monotonically, after the ToC
/// block) on whitespace-normalized text, then closes the spans by depth.
fn resolve_spans(
    text: &str,
    _block_start: usize,
    block_end: usize,
    entries: Vec<(TocEntry, String)>,
) -> Result<Vec<TocEntry>, GuidelineError> {
    let (normalized, offsets) = normalize_with_offsets(text);
    // Normalized position corresponding to the end of the ToC block.
    let mut cursor = offsets.partition_point(|&o| o < block_end);

    let mut with_starts: Vec<(TocEntry, Option<usize>)> = Vec::with_capacity(entries.len());
    for (mut entry, needle) in entries {
        let needle_norm = normalize(&needle);
        match normalized[cursor..].find(&needle_norm) {
            Some(rel) => {
                let norm_pos = cursor + rel;
                let byte_start = offsets[norm_pos];
                cursor = norm_pos + needle_norm.len();
                with_starts.push((entry, Some(byte_start)));
            }
            None => {
                entry.degraded = true;
                with_starts.push((entry, None));
            }
        }
    }
    close_spans(text.len(), &mut with_starts);
    Ok(with_starts.into_iter().map(|(e, _)| e).collect())
}

/// Sets `span = [start, next entry at same-or-shallower depth)`, so sibling
/// spans do not overlap and parents cover their children.
fn close_spans(text_len: usize, entries: &mut [(TocEntry, Option<usize>)]) {
    let n = entries.len();
    for i in 0..n {
        let Some(start) = entries[i].1 else { continue };
        let depth = entries[i].0.depth();
        let mut end = text_len;
        for (later, later_start) in entries.iter().skip(i + 1) {
            if let Some(s) = later_start {
                if later.depth() <= depth {
                    end = *s;
                    break;
                }
            }
        }
        entries[i].0.span = Some((start, end));
    }
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Whitespace-collapsed copy plus a byte-offset map back into the source.
fn normalize_with_offsets(text: &str) -> (String, Vec<usize>) {
    let mut out = String::with_capacity(text.len());
    let mut offsets = Vec::with_capacity(text.len());
    let mut pending_space = false;
    for (idx, ch) in text.char_indices() {
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
            continue;
        }
        if pending_space {
            out.push(' ');
            offsets.push(idx);
            pending_space = false;
        }
        out.push(ch);
        for _ in 0..ch.len_utf8() {
            offsets.push(idx);
        }
    }
    (out, offsets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chapter_table_covers_22_chapters() {
        assert_eq!(CHAPTER_TABLE.len(), 22);
        for (n, range, _) in CHAPTER_TABLE {
            assert!(builtin_chapter_range(n).is_some(), "chapter {n} range {range} must parse");
        }
    }

    #[test]
    fn toc_line_shapes() {
        assert!(match_toc_line("Section I. Conventions, general coding guidelines and chapter specific guidelines ...... 2").is_some());
        assert!(match_toc_line("  A. Conventions for the ICD-10-CM ........ 2").is_some());
        assert!(match_toc_line("9. Chapter 9: Diseases of the Circulatory System (I00-I99) ...... 5").is_some());
        assert!(match_toc_line("a. Hypertension .... 5").is_some());
        assert!(match_toc_line("plain narrative text").is_none());
        assert!(match_toc_line("A. No page number here").is_none());
    }

    #[test]
    fn missing_toc_is_fatal() {
        let err = build_toc("just some text\nwith no table of contents\n").unwrap_err();
        assert!(matches!(err, GuidelineError::MissingToc));
    }
}
