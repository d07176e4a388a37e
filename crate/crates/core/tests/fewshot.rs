//! Few-shot index: exactness against brute force, tie determinism, and
//! file round-trips.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::TcpListener;

use icdkit::code::IcdCode;
use icdkit::fewshot::{
    cosine_similarity, Embedder, FewShotConfig, FewShotError, FewShotIndex, HashEmbedder,
    HttpEmbedder, IndexedExample,
};

use rand::Rng;
use rand::SeedableRng;

fn code(s: &str) -> IcdCode {
    IcdCode::new(s).unwrap()
}

/// Test embedder with explicit per-text vectors.
struct MapEmbedder {
    map: HashMap<String, Vec<f32>>,
}

impl Embedder for MapEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f32>, String> {
        self.map.get(text).cloned().ok_or_else(|| format!("no vector for {text:?}"))
    }

    fn fingerprint(&self) -> String {
        "map-test".to_string()
    }
}

fn example(note_id: &str, text: &str) -> (String, String, Vec<IcdCode>) {
    (note_id.to_string(), text.to_string(), vec![code("I10")])
}

#[test]
fn builds_uniform_index() {
    let embedder = HashEmbedder::new(64);
    let examples: Vec<_> = (0..10)
        .map(|i| example(&format!("n{i:02}"), &format!("patient note number {i} with hypertension")))
        .collect();
    let index = FewShotIndex::build(&examples, &embedder).unwrap();
    assert_eq!(index.len(), 10);
    assert_eq!(index.dimension(), 64);
    assert_eq!(index.fingerprint(), "hash-v1:64");
}

#[test]
fn empty_index_retrieves_nothing() {
    let embedder = HashEmbedder::new(16);
    let index = FewShotIndex::build(&[], &embedder).unwrap();
    assert!(index.is_empty());
    assert!(index.retrieve(None, &[0.0; 16], 3).is_empty());
}

#[test]
fn mixed_dimensions_fail_the_build() {
    let mut map = HashMap::new();
    map.insert("a".to_string(), vec![1.0, 0.0]);
    map.insert("b".to_string(), vec![1.0, 0.0, 0.0]);
    let err = FewShotIndex::build(
        &[example("n1", "a"), example("n2", "b")],
        &MapEmbedder { map },
    )
    .unwrap_err();
    assert!(matches!(err, FewShotError::MixedDimensions { .. }));
}

#[test]
fn embedder_failures_list_failed_ids() {
    let mut map = HashMap::new();
    map.insert("a".to_string(), vec![1.0, 0.0]);
    let err = FewShotIndex::build(
        &[example("n1", "a"), example("n2", "missing"), example("n3", "also missing")],
        &MapEmbedder { map },
    )
    .unwrap_err();
    match err {
        FewShotError::PartialBuild { failed_ids, .. } => {
            assert_eq!(failed_ids, vec!["n2", "n3"]);
        }
        other => panic!("expected PartialBuild, got {other:?}"),
    }
}

#[test]
fn duplicate_note_ids_are_rejected() {
    let embedder = HashEmbedder::new(16);
    let err = FewShotIndex::build(
        &[example("n1", "text one"), example("n1", "text two")],
        &embedder,
    )
    .unwrap_err();
    assert!(matches!(err, FewShotError::DuplicateNoteId(_)));
}

#[test]
fn k_zero_returns_empty() {
    let embedder = HashEmbedder::new(16);
    let index = FewShotIndex::build(&[example("n1", "some text")], &embedder).unwrap();
    assert!(index.retrieve(None, &[1.0; 16], 0).is_empty());
}

#[test]
fn identical_text_under_a_different_id_ranks_first() {
    let embedder = HashEmbedder::new(64);
    let examples = vec![
        example("n1", "acute chest pain with shortness of breath"),
        example("n2", "chronic kidney disease stage three"),
        example("n3", "fracture of the right femur after a fall"),
    ];
    let index = FewShotIndex::build(&examples, &embedder).unwrap();
    let hits = index
        .retrieve_for_text(Some("query"), "chronic kidney disease stage three", 1, &embedder)
        .unwrap();
    assert_eq!(hits[0].note_id, "n2");
    let sim = cosine_similarity(
        &embedder.embed("chronic kidney disease stage three").unwrap(),
        &hits[0].embedding,
    );
    assert!((sim - 1.0).abs() < 1e-6);
}

#[test]
fn query_id_is_excluded_from_results() {
    let embedder = HashEmbedder::new(64);
    let examples = vec![example("n1", "identical words"), example("n2", "identical words")];
    let index = FewShotIndex::build(&examples, &embedder).unwrap();
    let hits = index
        .retrieve_for_text(Some("n1"), "identical words", 2, &embedder)
        .unwrap();
    assert_eq!(hits.iter().map(|h| h.note_id.as_str()).collect::<Vec<_>>(), ["n2"]);
}

#[test]
fn five_vector_toy_index_matches_hand_computed_cosines() {
    // Query (1, 0) against: n1 -> 1.0, n2 -> 0.0, n3 -> 0.6, n4 -> -1.0,
    // n5 -> 0.8. Exhaustive cosine order: n1, n5, n3, n2, n4.
    let mut map = HashMap::new();
    map.insert("t1".to_string(), vec![1.0, 0.0]);
    map.insert("t2".to_string(), vec![0.0, 1.0]);
    map.insert("t3".to_string(), vec![0.6, 0.8]);
    map.insert("t4".to_string(), vec![-1.0, 0.0]);
    map.insert("t5".to_string(), vec![0.8, -0.6]);
    let embedder = MapEmbedder { map };
    let examples = vec![
        example("n1", "t1"),
        example("n2", "t2"),
        example("n3", "t3"),
        example("n4", "t4"),
        example("n5", "t5"),
    ];
    let index = FewShotIndex::build(&examples, &embedder).unwrap();

    let top2 = index.retrieve(None, &[1.0, 0.0], 2);
    assert_eq!(top2.iter().map(|h| h.note_id.as_str()).collect::<Vec<_>>(), ["n1", "n5"]);

    let all = index.retrieve(None, &[1.0, 0.0], 10);
    assert_eq!(
        all.iter().map(|h| h.note_id.as_str()).collect::<Vec<_>>(),
        ["n1", "n5", "n3", "n2", "n4"]
    );
}

/// Independent oracle: score every record, argsort by (-cosine, note_id).
fn brute_force_oracle<'a>(
    records: &'a [IndexedExample],
    query: &[f32],
    k: usize,
) -> Vec<&'a str> {
    let mut scored: Vec<(f32, &str)> = records
        .iter()
        .map(|r| {
            let mut dot = 0f32;
            let mut na = 0f32;
            let mut nb = 0f32;
            for (x, y) in query.iter().zip(&r.embedding) {
                dot += x * y;
                na += x * x;
                nb += y * y;
            }
            let sim = if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na.sqrt() * nb.sqrt()) };
            (sim, r.note_id.as_str())
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    scored.into_iter().take(k).map(|(_, id)| id).collect()
}

#[test]
fn retrieval_equals_brute_force_on_random_vectors() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    for trial in 0..20 {
        let dim = 8;
        let n = 200;
        let records: Vec<IndexedExample> = (0..n)
            .map(|i| IndexedExample {
                note_id: format!("n{i:04}"),
                text: String::new(),
                gold_codes: vec![],
                embedding: (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
            })
            .collect();
        let index = FewShotIndex::from_records("test", records).unwrap();

        let query: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let k = 1 + (trial % 10);
        let got: Vec<&str> = index.retrieve(None, &query, k).iter().map(|r| r.note_id.as_str()).collect();
        let expected = brute_force_oracle(index.records(), &query, k);
        assert_eq!(got, expected, "trial {trial}");
    }
}

#[test]
fn tie_breaks_are_insertion_order_independent() {
    // Two identical vectors under different ids: ties resolve by note_id
    // ascending no matter the insertion order.
    let make_index = |order: &[(&str, Vec<f32>)]| {
        let records: Vec<IndexedExample> = order
            .iter()
            .map(|(id, v)| IndexedExample {
                note_id: id.to_string(),
                text: String::new(),
                gold_codes: vec![],
                embedding: v.clone(),
            })
            .collect();
        FewShotIndex::from_records("test", records).unwrap()
    };

    let tied = vec![1.0f32, 0.0];
    let other = vec![0.0f32, 1.0];
    let forward = make_index(&[("na", tied.clone()), ("nb", tied.clone()), ("nc", other.clone())]);
    let backward = make_index(&[("nc", other), ("nb", tied.clone()), ("na", tied)]);

    let query = [1.0f32, 0.0];
    let f: Vec<&str> = forward.retrieve(None, &query, 3).iter().map(|r| r.note_id.as_str()).collect();
    let b: Vec<&str> = backward.retrieve(None, &query, 3).iter().map(|r| r.note_id.as_str()).collect();
    assert_eq!(f, ["na", "nb", "nc"]);
    assert_eq!(f, b);
}

#[test]
fn index_round_trips_through_disk_exactly() {
    let embedder = HashEmbedder::new(32);
    let examples: Vec<_> = (0..5)
        .map(|i| example(&format!("n{i}"), &format!("note body {i} with varied terms")))
        .collect();
    let index = FewShotIndex::build(&examples, &embedder).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("index.json");
    index.save(&path).unwrap();
    let reloaded = FewShotIndex::load(&path).unwrap();
    assert_eq!(index, reloaded);

    // Bytes written twice are identical.
    let again = dir.path().join("again.json");
    reloaded.save(&again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn fingerprint_mismatch_is_an_error() {
    let embedder = HashEmbedder::new(32);
    let index = FewShotIndex::build(&[example("n1", "text")], &embedder).unwrap();
    let other = HashEmbedder::new(64);
    let err = index.retrieve_for_text(None, "text", 1, &other).unwrap_err();
    assert!(matches!(err, FewShotError::FingerprintMismatch { .. }));
}

#[test]
fn default_config_uses_two_examples() {
    assert_eq!(FewShotConfig::default().k, 2);
}

#[test]
fn http_embedder_round_trip() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = std::thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        let mut buf = vec![0u8; 65536];
        let mut read = 0;
        loop {
            let n = stream.read(&mut buf[read..]).unwrap();
            read += n;
            let text = String::from_utf8_lossy(&buf[..read]).into_owned();
            if let Some(header_end) = text.find("\r\n\r\n") {
                let content_length = text
                    .lines()
                    .find_map(|l| {
                        l.to_ascii_lowercase()
                            .strip_prefix("content-length:")
                            .map(str::trim)
                            .map(str::to_string)
                    })
                    .and_then(|v| v.parse::<usize>().ok())
                    .unwrap_or(0);
                if read >= header_end + 4 + content_length {
                    break;
                }
            }
            if n == 0 {
                break;
            }
        }
        let body = r#"{"data": [{"embedding": [0.5, 0.25, -0.125]}]}"#;
        let response = format!(
            "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        );
        stream.write_all(response.as_bytes()).unwrap();
    });

    let embedder =
        HttpEmbedder::new(&format!("http://{addr}"), "embed-model", "ICDKIT_API_KEY", 10).unwrap();
    let vector = embedder.embed("some text").unwrap();
    assert_eq!(vector, vec![0.5, 0.25, -0.125]);
    assert_eq!(embedder.fingerprint(), "embed-model");
    server.join().unwrap();
}
