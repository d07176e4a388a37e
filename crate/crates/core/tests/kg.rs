//! Knowledge-graph tests against the bundled tabular-list fixture.

use std::collections::BTreeSet;
use std::io::Cursor;
use std::path::PathBuf;

use icdkit::code::IcdCode;
use icdkit::kg::tabular::{parse_tabular_file, parse_tabular_list};
use icdkit::kg::{CodeGraph, EdgeKind, KgError, Subgraph, Triplet};

fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("testdata/tabular_fixture.xml")
}

fn fixture_graph() -> CodeGraph {
    parse_tabular_file(&fixture_path()).expect("fixture parses")
}

fn code(s: &str) -> IcdCode {
    IcdCode::new(s).unwrap()
}

#[test]
fn parses_fixture_with_expected_triplets() {
    let graph = fixture_graph();
    assert_eq!(graph.version(), "2022");
    assert!(graph.has_edge("I12.9", EdgeKind::Ancestor, "I12"));
    assert!(graph.has_edge(
        "I12.9",
        EdgeKind::InclusionTerm,
        "Hypertensive chronic kidney disease NOS, Hypertensive renal disease NOS"
    ));
    assert!(graph.has_edge("I12", EdgeKind::Ancestor, "I10-I16"));
    assert!(graph.has_edge("I10-I16", EdgeKind::Ancestor, "I00-I99"));

    let stats = graph.stats();
    assert!(stats.nodes > 0);
    assert!(stats.edges_by_kind["ancestor"] > 0);
    assert!(stats.edges_by_kind["description"] > 0);
    // excludes2 notes exist in the source but are not part of the predicate
    // vocabulary; they are counted, not emitted.
    assert_eq!(stats.skipped_by_kind["excludes2"], 3);
    assert!(stats.skipped_by_kind.contains_key("sevenChrDef"));
    assert!(!stats.edges_by_kind.contains_key("excludes2"));
}

#[test]
fn empty_chapter_list_yields_empty_graph() {
    let xml = r#"<?xml version="1.0"?><ICD10CM.tabular><version>2022</version></ICD10CM.tabular>"#;
    let graph = parse_tabular_list(Cursor::new(xml.as_bytes())).unwrap();
    assert_eq!(graph.node_count(), 0);
    assert_eq!(graph.edge_count(), 0);
}

#[test]
fn malformed_xml_reports_byte_offset() {
    let xml = "<ICD10CM.tabular><chapter><name>9</name>";
    let err = parse_tabular_list(Cursor::new(xml.as_bytes())).unwrap_err();
    match err {
        KgError::Xml { offset, .. } => assert!(offset > 0),
        other => panic!("expected Xml error, got {other:?}"),
    }
}

#[test]
fn diag_without_code_names_enclosing_chapter() {
    let xml = r#"<ICD10CM.tabular><chapter><name>9</name>
        <desc>Diseases of the circulatory system (I00-I99)</desc>
        <section id="I10-I16"><desc>Hypertensive diseases (I10-I16)</desc>
        <diag><desc>orphaned description</desc></diag>
        </section></chapter></ICD10CM.tabular>"#;
    let err = parse_tabular_list(Cursor::new(xml.as_bytes())).unwrap_err();
    match err {
        KgError::Structure { chapter, .. } => assert_eq!(chapter, "9"),
        other => panic!("expected Structure error, got {other:?}"),
    }
}

#[test]
fn lookup_returns_grouped_notes() {
    let graph = fixture_graph();
    let record = graph.lookup(&code("I12.9")).expect("I12.9 present");
    assert_eq!(record.parent.as_deref(), Some("I12"));
    assert!(record.description.unwrap().starts_with("Hypertensive chronic kidney disease"));
    assert_eq!(record.notes[&EdgeKind::InclusionTerm].len(), 1);
    assert!(record.notes.contains_key(&EdgeKind::UseAdditionalCode));
    assert!(!record.placeholder_extension);

    // Normalization: lowercase input resolves to the same record.
    let lower = graph.lookup_str("i12.9").unwrap().expect("normalized lookup");
    assert_eq!(lower.parent, record.parent);

    // Well-formed but nonexistent is absent, not an error.
    assert!(graph.lookup_str("ZZZ.99").unwrap().is_none());

    // Syntactically invalid is an error, distinct from absent.
    assert!(graph.lookup_str("12.9X").is_err());
}

#[test]
fn seventh_character_subtrees_are_flagged() {
    let graph = fixture_graph();
    assert!(graph.lookup(&code("S72.044")).unwrap().placeholder_extension);
    assert!(graph.lookup(&code("S72")).unwrap().placeholder_extension);
    assert!(!graph.lookup(&code("I12.9")).unwrap().placeholder_extension);
}

/// Independent closure oracle: core nodes from a raw scan of ancestor
/// edges, then every edge incident to the core by brute force.
fn closure_oracle(graph: &CodeGraph, seeds: &[IcdCode]) -> (BTreeSet<String>, BTreeSet<Triplet>) {
    let mut core = BTreeSet::new();
    for seed in seeds {
        if graph.edges().iter().any(|e| e.subject == seed.as_str())
            || graph.edges().iter().any(|e| e.object == seed.as_str())
        {
            let mut cur = seed.as_str().to_string();
            core.insert(cur.clone());
            loop {
                let parent = graph
                    .edges()
                    .iter()
                    .find(|e| e.kind == EdgeKind::Ancestor && e.subject == cur)
                    .map(|e| e.object.clone());
                match parent {
                    Some(p) => {
                        core.insert(p.clone());
                        cur = p;
                    }
                    None => break,
                }
            }
        }
    }
    let edges: BTreeSet<Triplet> = graph
        .edges()
        .iter()
        .filter(|e| core.contains(&e.subject) || core.contains(&e.object))
        .cloned()
        .collect();
    (core, edges)
}

#[test]
fn subgraph_for_i12_9_walked_by_hand() {
    let graph = fixture_graph();
    let sub = graph.extract_subgraph(&[code("I12.9")]);

    // Hand-walked chain: I12.9 -> I12 -> I10-I16 -> I00-I99.
    for expected in ["I12.9", "I12", "I10-I16", "I00-I99"] {
        assert!(sub.nodes.contains(expected), "missing node {expected}");
    }
    assert_eq!(
        sub.core_nodes.iter().cloned().collect::<Vec<_>>(),
        vec!["I00-I99", "I10-I16", "I12", "I12.9"]
    );
    assert!(sub.edges.contains(&Triplet::new(
        "I12.9",
        EdgeKind::InclusionTerm,
        "Hypertensive chronic kidney disease NOS, Hypertensive renal disease NOS"
    )));
    // Sibling I12.0 is pulled in as the endpoint of an edge incident to I12.
    assert!(sub.nodes.contains("I12.0"));
    assert!(sub.absent.is_empty());

    let (oracle_core, oracle_edges) = closure_oracle(&graph, &[code("I12.9")]);
    assert_eq!(sub.core_nodes, oracle_core);
    assert_eq!(sub.edges, oracle_edges);
}

#[test]
fn subgraph_edges_and_dedup() {
    let graph = fixture_graph();

    let empty = graph.extract_subgraph(&[]);
    assert!(empty.is_empty());
    assert!(empty.absent.is_empty());

    let once = graph.extract_subgraph(&[code("I12.9")]);
    let twice = graph.extract_subgraph(&[code("I12.9"), code("I12.9")]);
    assert_eq!(once, twice);

    let missing = graph.extract_subgraph(&[code("ZZZ.99")]);
    assert!(missing.is_empty());
    assert_eq!(missing.absent, vec![code("ZZZ.99")]);
}

#[test]
fn triplet_serialization_round_trips() {
    let graph = fixture_graph();

    let single = Subgraph {
        seed_codes: vec![code("I12.9")],
        core_nodes: BTreeSet::new(),
        nodes: BTreeSet::new(),
        edges: [Triplet::new("I12.9", EdgeKind::Ancestor, "I12")].into_iter().collect(),
        absent: Vec::new(),
    };
    assert_eq!(single.to_triplet_text(), "[I12.9, ancestor, I12]\n");

    let empty = Subgraph {
        seed_codes: Vec::new(),
        core_nodes: BTreeSet::new(),
        nodes: BTreeSet::new(),
        edges: BTreeSet::new(),
        absent: Vec::new(),
    };
    assert_eq!(empty.to_triplet_text(), "");

    // serialize -> parse -> serialize is byte-identical for the whole graph.
    let text = graph.to_triplet_text();
    let reparsed = CodeGraph::from_triplet_text(&text, graph.version()).unwrap();
    assert_eq!(reparsed.to_triplet_text(), text);

    // And for an extracted subgraph block.
    let sub = graph.extract_subgraph(&[code("I12.9"), code("I27.20")]);
    let block = sub.to_triplet_text();
    let edges = Subgraph::parse_triplet_text(&block).unwrap();
    assert_eq!(edges, sub.edges);
}

#[test]
fn conflicts_from_excludes1_notes() {
    let graph = fixture_graph();

    // Brute-force pick: I10 carries an excludes1 note naming O10-O11 and
    // O13-O16, so any fixture code in those ranges conflicts with it.
    let report = graph.conflicts(&[code("I10"), code("O10.0")]);
    assert_eq!(report.pairs.len(), 1);
    let (a, b, kind) = &report.pairs[0];
    assert_eq!((a.as_str(), b.as_str()), ("I10", "O10.0"));
    assert_eq!(*kind, EdgeKind::Excludes1);

    // R03.0 excludes hypertensive disease (I10-I1A).
    let report = graph.conflicts(&[code("R03.0"), code("I10")]);
    assert_eq!(report.pairs.len(), 1);

    // Section-level notes are inherited: I10-I16 excludes primary
    // pulmonary hypertension (I27.0), so descendants of the section
    // conflict with I27.0.
    let report = graph.conflicts(&[code("I12.9"), code("I27.0")]);
    assert_eq!(report.pairs.len(), 1);
    assert_eq!(report.pairs[0].0.as_str(), "I12.9");

    // Disjoint unrelated codes: no conflict.
    assert!(graph.conflicts(&[code("E11.9"), code("Z79.4")]).pairs.is_empty());

    // A single code can never form a pair.
    assert!(graph.conflicts(&[code("I10")]).pairs.is_empty());

    // Absent codes are skipped with a notice, not an error.
    let report = graph.conflicts(&[code("I10"), code("ZZZ.99")]);
    assert!(report.pairs.is_empty());
    assert_eq!(report.absent, vec![code("ZZZ.99")]);
}

#[test]
fn conflict_scan_matches_brute_force_over_all_fixture_pairs() {
    let graph = fixture_graph();
    let codes: Vec<IcdCode> = graph.code_nodes().map(|c| code(c)).collect();

    // Oracle: for every ordered pair, collect excludes1 notes of a and its
    // ancestors by raw edge scan and test reference containment.
    let mut expected: BTreeSet<(String, String)> = BTreeSet::new();
    for a in &codes {
        let mut subjects = vec![a.as_str().to_string()];
        subjects.extend(graph.ancestors(a.as_str()));
        let refs: Vec<_> = graph
            .edges()
            .iter()
            .filter(|e| e.kind == EdgeKind::Excludes1 && subjects.contains(&e.subject))
            .flat_map(|e| icdkit::kg::extract_code_refs(&e.object))
            .collect();
        for b in &codes {
            if a != b && refs.iter().any(|r| r.matches(b)) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                expected.insert((lo.as_str().to_string(), hi.as_str().to_string()));
            }
        }
    }

    let report = graph.conflicts(&codes);
    let actual: BTreeSet<(String, String)> = report
        .pairs
        .iter()
        .map(|(a, b, _)| (a.as_str().to_string(), b.as_str().to_string()))
        .collect();
    assert_eq!(actual, expected);
    assert!(!actual.is_empty());
}

#[test]
fn tree_property_holds_for_every_code() {
    let graph = fixture_graph();
    graph.validate().expect("invariants hold");
    for node in graph.code_nodes() {
        let chain = graph.ancestors(node);
        assert!(chain.len() <= 7, "{node} chain too long: {chain:?}");
        let unique: BTreeSet<_> = chain.iter().collect();
        assert_eq!(unique.len(), chain.len(), "{node} revisits a node");
        let last = chain.last().expect("non-chapter code has ancestors");
        assert!(graph.chapter_nodes().contains(last), "{node} does not reach a chapter");
    }
}

#[test]
fn parsing_is_deterministic() {
    let first = parse_tabular_file(&fixture_path()).unwrap();
    let second = parse_tabular_file(&fixture_path()).unwrap();
    assert_eq!(first, second);
    assert_eq!(first.to_triplet_text(), second.to_triplet_text());
}

#[test]
fn single_category_section_does_not_self_loop() {
    let graph = fixture_graph();
    // Section D49 shares its id with the D49 category; the code's chain
    // must skip the would-be self-loop and land on the chapter.
    assert_eq!(graph.ancestors("D49"), vec!["C00-D49".to_string()]);
    assert_eq!(
        graph.ancestors("D49.9"),
        vec!["D49".to_string(), "C00-D49".to_string()]
    );
    assert!(graph.edges().iter().all(|e| e.subject != e.object));
}
