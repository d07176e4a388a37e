//! CMS ICD-10-CM tabular-list XML parsing.
//!
//! The tabular list nests chapter → section → diag elements; each diag
//! carries a code name, a description, and instructional-note lists. The
//! parser lowers that nesting into ancestor edges and each known note list
//! into one triplet, joining multiple `<note>` texts with ", ".

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::OnceLock;

use quick_xml::events::Event;
use quick_xml::Reader;
use regex::Regex;

use crate::code::{CodeRange, IcdCode};
use crate::kg::{CodeGraph, EdgeKind, GraphBuilder, KgError, Triplet};

/// Note-list element names that become triplets, with their edge kinds.
const NOTE_KINDS: [(&str, EdgeKind); 5] = [
    ("includes", EdgeKind::Includes),
    ("inclusionTerm", EdgeKind::InclusionTerm),
    ("excludes1", EdgeKind::Excludes1),
    ("useAdditionalCode", EdgeKind::UseAdditionalCode),
    ("codeFirst", EdgeKind::CodeFirst),
];

/// Structural elements that are navigation or front matter, not notes.
const IGNORED: [&str; 8] = [
    "name",
    "desc",
    "diag",
    "section",
    "sectionIndex",
    "sectionRef",
    "introduction",
    "version",
];

pub fn parse_tabular_file(path: &Path) -> Result<CodeGraph, KgError> {
    let file = File::open(path)?;
    parse_tabular_list(BufReader::new(file))
}

/// Parses a tabular-list XML stream into a [`CodeGraph`].
pub fn parse_tabular_list<R: BufRead>(source: R) -> Result<CodeGraph, KgError> {
    let root = read_document(source)?;
    let tabular = root
        .children
        .iter()
        .find(|e| e.name == "ICD10CM.tabular")
        .unwrap_or(&root);

    let version = tabular
        .child_text("version")
        .unwrap_or_else(|| "unknown".to_string());
    let mut builder = GraphBuilder::new(&version);

    for chapter in tabular.children.iter().filter(|e| e.name == "chapter") {
        walk_chapter(chapter, &mut builder)?;
    }
    builder.finish()
}

fn walk_chapter(chapter: &Element, builder: &mut GraphBuilder) -> Result<(), KgError> {
    let chapter_label = chapter
        .child_text("name")
        .or_else(|| chapter.child_text("desc"))
        .unwrap_or_else(|| "?".to_string());
    let desc = chapter.child_text("desc").ok_or_else(|| KgError::Structure {
        chapter: chapter_label.clone(),
        message: "chapter has no desc".to_string(),
    })?;

    let range = chapter_range(chapter, &desc).ok_or_else(|| KgError::Structure {
        chapter: chapter_label.clone(),
        message: "cannot determine chapter code range".to_string(),
    })?;
    let chapter_node = range.to_string();
    builder.add_range_node(&chapter_node);
    builder.add_triplet(Triplet::new(&chapter_node, EdgeKind::Description, &desc))?;

    emit_notes(chapter, &chapter_node, builder)?;

    for section in chapter.children.iter().filter(|e| e.name == "section") {
        walk_section(section, &chapter_node, &chapter_label, builder)?;
    }
    Ok(())
}

fn walk_section(
    section: &Element,
    chapter_node: &str,
    chapter_label: &str,
    builder: &mut GraphBuilder,
) -> Result<(), KgError> {
    let parent_node = match section.id_attr.as_deref().and_then(|id| CodeRange::parse(id).ok()) {
        Some(range) => {
            let section_node = range.to_string();
            if section_node != chapter_node {
                builder.add_range_node(&section_node);
                builder.add_triplet(Triplet::new(
                    &section_node,
                    EdgeKind::Ancestor,
                    chapter_node,
                ))?;
            }
            if let Some(desc) = section.child_text("desc") {
                builder.add_triplet(Triplet::new(&section_node, EdgeKind::Description, &desc))?;
            }
            emit_notes(section, &section_node, builder)?;
            section_node
        }
        None => {
            // Sections without a parseable range id contribute their codes
            // directly to the chapter.
            builder.count_skipped("section", 1);
            chapter_node.to_string()
        }
    };

    for diag in section.children.iter().filter(|e| e.name == "diag") {
        walk_diag(diag, &parent_node, chapter_label, false, builder)?;
    }
    Ok(())
}

fn walk_diag(
    diag: &Element,
    parent_node: &str,
    chapter_label: &str,
    under_extension: bool,
    builder: &mut GraphBuilder,
) -> Result<(), KgError> {
    let raw_code = diag.child_text("name").ok_or_else(|| KgError::Structure {
        chapter: chapter_label.to_string(),
        message: "diag element without a code name".to_string(),
    })?;
    let desc = diag.child_text("desc").ok_or_else(|| KgError::Structure {
        chapter: chapter_label.to_string(),
        message: format!("diag {raw_code} has no description"),
    })?;
    let code = IcdCode::new(&raw_code).map_err(|e| KgError::Structure {
        chapter: chapter_label.to_string(),
        message: e.to_string(),
    })?;
    let node = code.as_str().to_string();

    builder.add_code_node(&node);
    // A single-category section shares its id with its top code; the code's
    // ancestor is then the section's own parent.
    if node != parent_node {
        builder.add_triplet(Triplet::new(&node, EdgeKind::Ancestor, parent_node))?;
    }
    builder.add_triplet(Triplet::new(&node, EdgeKind::Description, &desc))?;
    emit_notes(diag, &node, builder)?;

    let extension_here = under_extension
        || diag.children.iter().any(|c| c.name == "sevenChrDef" || c.name == "sevenChrNote");
    if extension_here {
        builder.mark_placeholder_extension(&node);
    }

    for child in diag.children.iter().filter(|e| e.name == "diag") {
        walk_diag(child, &node, chapter_label, extension_here, builder)?;
    }
    Ok(())
}

/// Turns each known note-list child into one triplet and counts everything
/// else under its element name.
fn emit_notes(element: &Element, subject: &str, builder: &mut GraphBuilder) -> Result<(), KgError> {
    for child in &element.children {
        if let Some((_, kind)) = NOTE_KINDS.iter().find(|(name, _)| *name == child.name) {
            let text = joined_note_text(child);
            if !text.is_empty() {
                builder.add_triplet(Triplet::new(subject, *kind, text))?;
            }
        } else if !IGNORED.contains(&child.name.as_str()) {
            let notes = child.children.iter().filter(|c| c.name == "note").count();
            builder.count_skipped(&child.name, notes.max(1));
        }
    }
    Ok(())
}

fn joined_note_text(list: &Element) -> String {
    let notes: Vec<String> = list
        .children
        .iter()
        .filter(|c| c.name == "note")
        .map(|c| c.text.clone())
        .filter(|t| !t.is_empty())
        .collect();
    if notes.is_empty() {
        list.text.clone()
    } else {
        notes.join(", ")
    }
}

/// Chapter node id from the trailing parenthesized range in the chapter
/// desc, falling back to the span of its section ids.
fn chapter_range(chapter: &Element, desc: &str) -> Option<CodeRange> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"\(([A-Z][0-9][0-9A-Z])-([A-Z][0-9][0-9A-Z])\)").expect("static regex")
    });
    if let Some(caps) = re.captures_iter(desc).last() {
        return CodeRange::parse(&format!("{}-{}", &caps[1], &caps[2])).ok();
    }

    let mut bounds: Option<(String, String)> = None;
    for section in chapter.children.iter().filter(|e| e.name == "section") {
        if let Some(range) = section.id_attr.as_deref().and_then(|id| CodeRange::parse(id).ok()) {
            bounds = Some(match bounds {
                None => (range.start().to_string(), range.end().to_string()),
                Some((lo, hi)) => (
                    lo.min(range.start().to_string()),
                    hi.max(range.end().to_string()),
                ),
            });
        }
    }
    bounds.and_then(|(lo, hi)| CodeRange::parse(&format!("{lo}-{hi}")).ok())
}

/// Minimal in-memory element tree; the tabular list is small enough that
/// buffering per document keeps the walker simple.
#[derive(Debug, Default)]
struct Element {
    name: String,
    id_attr: Option<String>,
    text: String,
    children: Vec<Element>,
}

impl Element {
    fn child_text(&self, name: &str) -> Option<String> {
        self.children
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.text.clone())
            .filter(|t| !t.is_empty())
    }
}

fn read_document<R: BufRead>(source: R) -> Result<Element, KgError> {
    let mut reader = Reader::from_reader(source);
    let mut buf = Vec::new();
    let mut stack: Vec<Element> = vec![Element { name: "#document".into(), ..Default::default() }];

    loop {
        let position = reader.buffer_position();
        match reader.read_event_into(&mut buf) {
            Ok(Event::Start(start)) => {
                let name = String::from_utf8_lossy(start.name().as_ref()).into_owned();
                let mut element = Element { name, ..Default::default() };
                for attr in start.attributes() {
                    let attr = attr.map_err(|e| KgError::Xml {
                        offset: position,
                        message: e.to_string(),
                    })?;
                    if attr.key.as_ref() == b"id" {
                        element.id_attr = Some(
                            attr.unescape_value()
                                .map_err(|e| KgError::Xml {
                                    offset: position,
                                    message: e.to_string(),
                                })?
                                .into_owned(),
                        );
                    }
                }
                stack.push(element);
            }
            Ok(Event::Empty(_)) => {}
            Ok(Event::Text(text)) => {
                let decoded = text.unescape().map_err(|e| KgError::Xml {
                    offset: position,
                    message: e.to_string(),
                })?;
                let top = stack.last_mut().expect("stack never empty");
                append_text(&mut top.text, &decoded);
            }
            Ok(Event::End(_)) => {
                if stack.len() <= 1 {
                    return Err(KgError::Xml {
                        offset: position,
                        message: "unbalanced closing tag".to_string(),
                    });
                }
                let done = stack.pop().expect("checked length");
                stack.last_mut().expect("stack never empty").children.push(done);
            }
            Ok(Event::Eof) => break,
            Ok(_) => {}
            Err(e) => {
                return Err(KgError::Xml {
                    offset: reader.buffer_position(),
                    message: e.to_string(),
                })
            }
        }
        buf.clear();
    }

    if stack.len() != 1 {
        return Err(KgError::Xml {
            offset: reader.buffer_position(),
            message: format!("unclosed element <{}>", stack.last().expect("non-empty").name),
        });
    }
    Ok(stack.pop().expect("checked length"))
}

/// Collapses whitespace runs so note texts are single-line and byte-stable.
fn append_text(target: &mut String, chunk: &str) {
    let normalized = chunk.split_whitespace().collect::<Vec<_>>().join(" ");
    if normalized.is_empty() {
        return;
    }
    if !target.is_empty() {
        target.push(' ');
    }
    target.push_str(&normalized);
}
