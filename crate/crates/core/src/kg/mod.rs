//! Knowledge graph over the ICD-10-CM tabular list.
//!
//! Nodes are codes, category ranges (sections and chapters), and
//! instructional-note texts. Edges are `[subject, predicate, object]`
//! triplets; the predicate vocabulary is fixed to the seven kinds the
//! graph auditor understands.

mod refs;
pub mod tabular;

pub use refs::{extract_code_refs, CodeRef};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code::{is_range_node, CodeError, IcdCode};

#[derive(Debug, Error)]
pub enum KgError {
    #[error("XML parse error at byte {offset}: {message}")]
    Xml { offset: u64, message: String },
    #[error("structural error in chapter {chapter}: {message}")]
    Structure { chapter: String, message: String },
    #[error("triplet text line {line}: {message}")]
    TripletLine { line: usize, message: String },
    #[error("graph invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Code(#[from] CodeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The seven edge kinds. Declaration order matches the lexicographic order
/// of the serialized predicate names so that derived `Ord` sorts edges the
/// same way their text form does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Ancestor,
    CodeFirst,
    Description,
    Excludes1,
    Includes,
    InclusionTerm,
    UseAdditionalCode,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 7] = [
        EdgeKind::Ancestor,
        EdgeKind::CodeFirst,
        EdgeKind::Description,
        EdgeKind::Excludes1,
        EdgeKind::Includes,
        EdgeKind::InclusionTerm,
        EdgeKind::UseAdditionalCode,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EdgeKind::Ancestor => "ancestor",
            EdgeKind::CodeFirst => "code_first",
            EdgeKind::Description => "description",
            EdgeKind::Excludes1 => "excludes1",
            EdgeKind::Includes => "includes",
            EdgeKind::InclusionTerm => "inclusion_term",
            EdgeKind::UseAdditionalCode => "use_additional_code",
        }
    }

    pub fn from_name(name: &str) -> Option<EdgeKind> {
        EdgeKind::ALL.iter().copied().find(|k| k.name() == name)
    }
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One `[subject, predicate, object]` edge.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub subject: String,
    pub kind: EdgeKind,
    pub object: String,
}

impl Triplet {
    pub fn new(subject: impl Into<String>, kind: EdgeKind, object: impl Into<String>) -> Self {
        Triplet { subject: subject.into(), kind, object: object.into() }
    }

    /// The `[subject, predicate, object]` line form.
    pub fn to_line(&self) -> String {
        format!("[{}, {}, {}]", self.subject, self.kind.name(), self.object)
    }

    pub fn parse_line(line: &str) -> Result<Triplet, String> {
        let inner = line
            .strip_prefix('[')
            .and_then(|rest| rest.strip_suffix(']'))
            .ok_or_else(|| format!("not bracketed: {line:?}"))?;
        let (subject, rest) = inner
            .split_once(", ")
            .ok_or_else(|| format!("missing predicate separator: {line:?}"))?;
        let (kind_name, object) = rest
            .split_once(", ")
            .ok_or_else(|| format!("missing object separator: {line:?}"))?;
        let kind = EdgeKind::from_name(kind_name)
            .ok_or_else(|| format!("unknown predicate {kind_name:?}"))?;
        if subject.is_empty() || object.is_empty() {
            return Err(format!("empty subject or object: {line:?}"));
        }
        Ok(Triplet::new(subject, kind, object))
    }
}

/// Per-kind edge counts plus parse-time skip counters, exported as the
/// stats JSON next to a graph dump.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges_by_kind: BTreeMap<String, usize>,
    pub skipped_by_kind: BTreeMap<String, usize>,
    pub version: String,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub placeholder_extension_codes: BTreeSet<String>,
}

/// The tabular list as an immutable triplet graph.
#[derive(Debug, Clone)]
pub struct CodeGraph {
    version: String,
    nodes: BTreeSet<String>,
    edges: Vec<Triplet>,
    out_index: BTreeMap<String, Vec<u32>>,
    in_index: BTreeMap<String, Vec<u32>>,
    parent: BTreeMap<String, String>,
    descriptions: BTreeMap<String, String>,
    code_nodes: BTreeSet<String>,
    chapter_nodes: BTreeSet<String>,
    placeholder_extension: BTreeSet<String>,
    skipped_by_kind: BTreeMap<String, usize>,
}

impl CodeGraph {
    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(String::as_str)
    }

    pub fn edges(&self) -> &[Triplet] {
        &self.edges
    }

    /// All nodes that are actual codes (not ranges, not note texts).
    pub fn code_nodes(&self) -> impl Iterator<Item = &str> {
        self.code_nodes.iter().map(String::as_str)
    }

    pub fn chapter_nodes(&self) -> &BTreeSet<String> {
        &self.chapter_nodes
    }

    pub fn contains_node(&self, node: &str) -> bool {
        self.nodes.contains(node)
    }

    pub fn contains_code(&self, code: &IcdCode) -> bool {
        self.code_nodes.contains(code.as_str())
    }

    pub fn has_edge(&self, subject: &str, kind: EdgeKind, object: &str) -> bool {
        self.out_index
            .get(subject)
            .map(|idx| {
                idx.iter().any(|&i| {
                    let e = &self.edges[i as usize];
                    e.kind == kind && e.object == object
                })
            })
            .unwrap_or(false)
    }

    pub fn parent_of(&self, node: &str) -> Option<&str> {
        self.parent.get(node).map(String::as_str)
    }

    pub fn description_of(&self, node: &str) -> Option<&str> {
        self.descriptions.get(node).map(String::as_str)
    }

    /// Ancestor chain from the node's parent up to (and including) its
    /// chapter range node.
    pub fn ancestors(&self, node: &str) -> Vec<String> {
        let mut chain = Vec::new();
        let mut cur = node;
        while let Some(parent) = self.parent_of(cur) {
            chain.push(parent.to_string());
            cur = parent;
        }
        chain
    }

    /// The chapter-level range node a code resolves to, if present.
    pub fn chapter_of(&self, code: &IcdCode) -> Option<&str> {
        let mut cur = code.as_str();
        if !self.nodes.contains(cur) {
            return None;
        }
        while let Some(parent) = self.parent_of(cur) {
            cur = parent;
        }
        if self.chapter_nodes.contains(cur) {
            // Borrow from the set so the lifetime is tied to self.
            self.chapter_nodes.get(cur).map(String::as_str)
        } else {
            None
        }
    }

    /// Looks up a raw code string, validating syntax first. `Ok(None)`
    /// means well-formed but absent from this vintage.
    pub fn lookup_str(&self, raw: &str) -> Result<Option<LookupRecord>, CodeError> {
        let code = IcdCode::new(raw)?;
        Ok(self.lookup(&code))
    }

    pub fn lookup(&self, code: &IcdCode) -> Option<LookupRecord> {
        if !self.code_nodes.contains(code.as_str()) {
            return None;
        }
        let mut notes: BTreeMap<EdgeKind, Vec<String>> = BTreeMap::new();
        if let Some(idx) = self.out_index.get(code.as_str()) {
            for &i in idx {
                let e = &self.edges[i as usize];
                if e.kind != EdgeKind::Ancestor && e.kind != EdgeKind::Description {
                    notes.entry(e.kind).or_default().push(e.object.clone());
                }
            }
        }
        Some(LookupRecord {
            code: code.clone(),
            description: self.description_of(code.as_str()).map(str::to_string),
            parent: self.parent_of(code.as_str()).map(str::to_string),
            notes,
            placeholder_extension: self.placeholder_extension.contains(code.as_str()),
        })
    }

    /// Closed subgraph for a candidate set: the candidates, their ancestors
    /// up to chapter level, and every edge incident to any of those core
    /// nodes. Boundary endpoints of those edges are pulled into the node
    /// set so the result is edge-closed.
    pub fn extract_subgraph(&self, candidates: &[IcdCode]) -> Subgraph {
        let mut seeds: Vec<IcdCode> = candidates.to_vec();
        seeds.sort();
        seeds.dedup();

        let mut absent = Vec::new();
        let mut core: BTreeSet<String> = BTreeSet::new();
        for code in &seeds {
            if !self.code_nodes.contains(code.as_str()) {
                absent.push(code.clone());
                continue;
            }
            core.insert(code.as_str().to_string());
            for anc in self.ancestors(code.as_str()) {
                core.insert(anc);
            }
        }

        let mut edge_indices: BTreeSet<u32> = BTreeSet::new();
        for node in &core {
            if let Some(idx) = self.out_index.get(node) {
                edge_indices.extend(idx.iter().copied());
            }
            if let Some(idx) = self.in_index.get(node) {
                edge_indices.extend(idx.iter().copied());
            }
        }

        let mut edges: BTreeSet<Triplet> = BTreeSet::new();
        let mut nodes: BTreeSet<String> = core.clone();
        for i in edge_indices {
            let e = self.edges[i as usize].clone();
            nodes.insert(e.subject.clone());
            nodes.insert(e.object.clone());
            edges.insert(e);
        }

        Subgraph { seed_codes: seeds, core_nodes: core, nodes, edges, absent }
    }

    /// Mutual-exclusion scan: reports every pair among `codes` where one
    /// code (or any of its ancestors) carries an excludes1 note whose code
    /// references contain the other. Each unordered pair is reported once.
    pub fn conflicts(&self, codes: &[IcdCode]) -> ConflictReport {
        let mut present: Vec<&IcdCode> = Vec::new();
        let mut absent = Vec::new();
        for code in codes {
            if self.code_nodes.contains(code.as_str()) {
                if !present.iter().any(|c| *c == code) {
                    present.push(code);
                }
            } else if !absent.contains(code) {
                absent.push(code.clone());
            }
        }

        let mut pairs: BTreeSet<(IcdCode, IcdCode, EdgeKind)> = BTreeSet::new();
        for a in &present {
            let refs = self.excludes1_refs(a);
            if refs.is_empty() {
                continue;
            }
            for b in &present {
                if a == b {
                    continue;
                }
                if refs.iter().any(|r| r.matches(b)) {
                    let (lo, hi) = if a <= b { (*a, *b) } else { (*b, *a) };
                    pairs.insert((lo.clone(), hi.clone(), EdgeKind::Excludes1));
                }
            }
        }

        ConflictReport { pairs: pairs.into_iter().collect(), absent }
    }

    /// excludes1 references attached to the code or inherited from its
    /// ancestors (note inheritance is resolved at query time).
    fn excludes1_refs(&self, code: &IcdCode) -> Vec<CodeRef> {
        let mut refs = Vec::new();
        let mut subjects = vec![code.as_str().to_string()];
        subjects.extend(self.ancestors(code.as_str()));
        for subject in subjects {
            if let Some(idx) = self.out_index.get(&subject) {
                for &i in idx {
                    let e = &self.edges[i as usize];
                    if e.kind == EdgeKind::Excludes1 {
                        refs.extend(extract_code_refs(&e.object));
                    }
                }
            }
        }
        refs
    }

    /// Full graph dump in the byte-stable triplet line format.
    pub fn to_triplet_text(&self) -> String {
        let mut out = String::new();
        for edge in &self.edges {
            out.push_str(&edge.to_line());
            out.push('\n');
        }
        out
    }

    /// Rebuilds a graph from a triplet dump produced by
    /// [`CodeGraph::to_triplet_text`].
    pub fn from_triplet_text(text: &str, version: &str) -> Result<CodeGraph, KgError> {
        let mut builder = GraphBuilder::new(version);
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let triplet = Triplet::parse_line(line)
                .map_err(|message| KgError::TripletLine { line: lineno + 1, message })?;
            builder.add_triplet(triplet)?;
        }
        builder.finish()
    }

    pub fn stats(&self) -> GraphStats {
        let mut edges_by_kind: BTreeMap<String, usize> = BTreeMap::new();
        for e in &self.edges {
            *edges_by_kind.entry(e.kind.name().to_string()).or_insert(0) += 1;
        }
        GraphStats {
            nodes: self.nodes.len(),
            edges_by_kind,
            skipped_by_kind: self.skipped_by_kind.clone(),
            version: self.version.clone(),
            placeholder_extension_codes: self.placeholder_extension.clone(),
        }
    }

    /// Checks the structural invariants: every non-chapter code or range
    /// node has a unique ancestor chain reaching a chapter range node in at
    /// most 7 hops without revisiting a node.
    pub fn validate(&self) -> Result<(), KgError> {
        for node in self.code_nodes.iter().chain(self.parent.keys()) {
            if self.chapter_nodes.contains(node) {
                continue;
            }
            let mut seen = BTreeSet::new();
            let mut cur = node.as_str();
            let mut hops = 0usize;
            loop {
                if !seen.insert(cur.to_string()) {
                    return Err(KgError::Invariant(format!("ancestor cycle at {cur}")));
                }
                match self.parent_of(cur) {
                    Some(parent) => {
                        cur = parent;
                        hops += 1;
                        if hops > 7 {
                            return Err(KgError::Invariant(format!(
                                "ancestor chain for {node} exceeds 7 hops"
                            )));
                        }
                    }
                    None => break,
                }
            }
            if !self.chapter_nodes.contains(cur) {
                return Err(KgError::Invariant(format!(
                    "ancestor chain for {node} terminates at non-chapter node {cur}"
                )));
            }
        }
        for e in &self.edges {
            if e.kind == EdgeKind::Excludes1 && !self.nodes.contains(&e.object) {
                return Err(KgError::Invariant(format!(
                    "excludes1 object not a node: {}",
                    e.object
                )));
            }
        }
        Ok(())
    }
}

impl PartialEq for CodeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version && self.nodes == other.nodes && self.edges == other.edges
    }
}

/// One code's record: description, parent, and its own instructional notes
/// grouped by kind.
#[derive(Debug, Clone, Serialize)]
pub struct LookupRecord {
    pub code: IcdCode,
    pub description: Option<String>,
    pub parent: Option<String>,
    pub notes: BTreeMap<EdgeKind, Vec<String>>,
    /// Set when the code sits under a seventh-character extension table;
    /// extension expansion itself is not modeled.
    pub placeholder_extension: bool,
}

/// Edge-closed subgraph for a candidate set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subgraph {
    pub seed_codes: Vec<IcdCode>,
    /// Seeds plus their ancestors; the nodes whose incident edges define
    /// the closure.
    pub core_nodes: BTreeSet<String>,
    pub nodes: BTreeSet<String>,
    pub edges: BTreeSet<Triplet>,
    /// Well-formed candidates that do not exist in this graph vintage.
    pub absent: Vec<IcdCode>,
}

impl Subgraph {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty() && self.edges.is_empty()
    }

    /// One `[subject, predicate, object]` line per edge, sorted
    /// lexicographically by subject, then predicate name, then object.
    pub fn to_triplet_text(&self) -> String {
        let mut out = String::new();
        for edge in &self.edges {
            out.push_str(&edge.to_line());
            out.push('\n');
        }
        out
    }

    /// Parses a triplet block back into an edge set (round-trip check).
    pub fn parse_triplet_text(text: &str) -> Result<BTreeSet<Triplet>, KgError> {
        let mut edges = BTreeSet::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let triplet = Triplet::parse_line(line)
                .map_err(|message| KgError::TripletLine { line: lineno + 1, message })?;
            edges.insert(triplet);
        }
        Ok(edges)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ConflictReport {
    /// Conflicting pairs, lexicographic, one entry per unordered pair.
    pub pairs: Vec<(IcdCode, IcdCode, EdgeKind)>,
    /// Codes skipped because they are absent from the graph.
    pub absent: Vec<IcdCode>,
}

/// Incremental builder used by the tabular parser and the triplet reloader.
pub(crate) struct GraphBuilder {
    version: String,
    nodes: BTreeSet<String>,
    edges: BTreeSet<Triplet>,
    parent: BTreeMap<String, String>,
    descriptions: BTreeMap<String, String>,
    code_nodes: BTreeSet<String>,
    range_nodes: BTreeSet<String>,
    placeholder_extension: BTreeSet<String>,
    skipped_by_kind: BTreeMap<String, usize>,
}

impl GraphBuilder {
    pub fn new(version: &str) -> Self {
        GraphBuilder {
            version: version.to_string(),
            nodes: BTreeSet::new(),
            edges: BTreeSet::new(),
            parent: BTreeMap::new(),
            descriptions: BTreeMap::new(),
            code_nodes: BTreeSet::new(),
            range_nodes: BTreeSet::new(),
            placeholder_extension: BTreeSet::new(),
            skipped_by_kind: BTreeMap::new(),
        }
    }

    pub fn add_code_node(&mut self, code: &str) {
        self.nodes.insert(code.to_string());
        self.code_nodes.insert(code.to_string());
    }

    pub fn add_range_node(&mut self, range: &str) {
        self.nodes.insert(range.to_string());
        self.range_nodes.insert(range.to_string());
    }

    pub fn mark_placeholder_extension(&mut self, code: &str) {
        self.placeholder_extension.insert(code.to_string());
    }

    pub fn count_skipped(&mut self, kind: &str, n: usize) {
        *self.skipped_by_kind.entry(kind.to_string()).or_insert(0) += n;
    }

    pub fn add_triplet(&mut self, triplet: Triplet) -> Result<(), KgError> {
        if triplet.subject == triplet.object {
            // Self-loops are forbidden; they only arise from single-category
            // sections whose id equals their sole code, which the tabular
            // walker already redirects.
            return Ok(());
        }
        match triplet.kind {
            EdgeKind::Ancestor => {
                if let Some(existing) = self.parent.get(&triplet.subject) {
                    if existing != &triplet.object {
                        return Err(KgError::Invariant(format!(
                            "{} has two ancestors: {} and {}",
                            triplet.subject, existing, triplet.object
                        )));
                    }
                } else {
                    self.parent.insert(triplet.subject.clone(), triplet.object.clone());
                }
                self.classify_node(&triplet.subject);
                self.classify_node(&triplet.object);
            }
            EdgeKind::Description => {
                self.classify_node(&triplet.subject);
                self.descriptions
                    .entry(triplet.subject.clone())
                    .or_insert_with(|| triplet.object.clone());
                self.nodes.insert(triplet.object.clone());
            }
            _ => {
                self.classify_node(&triplet.subject);
                self.nodes.insert(triplet.object.clone());
            }
        }
        self.nodes.insert(triplet.subject.clone());
        self.nodes.insert(triplet.object.clone());
        self.edges.insert(triplet);
        Ok(())
    }

    /// Syntax-based classification used when reloading from triplet text;
    /// the tabular walker registers nodes explicitly instead.
    fn classify_node(&mut self, node: &str) {
        if self.code_nodes.contains(node) || self.range_nodes.contains(node) {
            return;
        }
        if IcdCode::new(node).map(|c| c.as_str() == node).unwrap_or(false) {
            self.code_nodes.insert(node.to_string());
        } else if is_range_node(node) {
            self.range_nodes.insert(node.to_string());
        }
    }

    pub fn finish(self) -> Result<CodeGraph, KgError> {
        let edges: Vec<Triplet> = self.edges.into_iter().collect();
        let mut out_index: BTreeMap<String, Vec<u32>> = BTreeMap::new();
        let mut in_index: BTreeMap<String, Vec<u32>> = BTreeMap::new();
        for (i, e) in edges.iter().enumerate() {
            out_index.entry(e.subject.clone()).or_default().push(i as u32);
            in_index.entry(e.object.clone()).or_default().push(i as u32);
        }

        // Chapters are range nodes that never point to a parent. A code
        // node with no parent in a hierarchy-bearing graph is a violation
        // caught by validate().
        let chapter_nodes: BTreeSet<String> = self
            .range_nodes
            .iter()
            .filter(|r| !self.parent.contains_key(*r))
            .cloned()
            .collect();

        let graph = CodeGraph {
            version: self.version,
            nodes: self.nodes,
            edges,
            out_index,
            in_index,
            parent: self.parent,
            descriptions: self.descriptions,
            code_nodes: self.code_nodes,
            chapter_nodes,
            placeholder_extension: self.placeholder_extension,
            skipped_by_kind: self.skipped_by_kind,
        };
        graph.validate()?;
        Ok(graph)
    }
}
