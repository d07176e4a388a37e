//! Exact nearest-neighbor index over training notes, used to pick
//! in-context examples for candidate generation.

use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::code::IcdCode;

#[derive(Debug, Error)]
pub enum FewShotError {
    #[error("embedder failed for notes {failed_ids:?}: {message}")]
    PartialBuild { failed_ids: Vec<String>, message: String },
    #[error("embedding dimensions are not uniform: expected {expected}, note {note_id} has {actual}")]
    MixedDimensions { expected: usize, note_id: String, actual: usize },
    #[error("duplicate note_id {0:?} in index input")]
    DuplicateNoteId(String),
    #[error("index file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("index file malformed: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("index header inconsistent: {0}")]
    Header(String),
    #[error("embedder fingerprint mismatch: index built with {index}, queried with {query}")]
    FingerprintMismatch { index: String, query: String },
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f32>, String>;
    fn fingerprint(&self) -> String;
}

/// Deterministic offline embedder: signed token hashing into a fixed
/// dimension, L2-normalized. Identical text yields identical vectors.
pub struct HashEmbedder {
    dimension: usize,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        HashEmbedder { dimension }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(256)
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f32>, String> {
        static TOKEN: OnceLock<Regex> = OnceLock::new();
        let token_re = TOKEN.get_or_init(|| Regex::new(r"[A-Za-z0-9]+").expect("static regex"));
        let mut vector = vec![0f32; self.dimension];
        for token in token_re.find_iter(&text.to_ascii_lowercase()) {
            let digest = Sha256::digest(token.as_str().as_bytes());
            let hash = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
            let idx = (hash % self.dimension as u64) as usize;
            let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
            vector[idx] += sign;
        }
        let norm: f32 = vector.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm > 0.0 {
            for v in &mut vector {
                *v /= norm;
            }
        }
        Ok(vector)
    }

    fn fingerprint(&self) -> String {
        format!("hash-v1:{}", self.dimension)
    }
}

/// OpenAI-compatible embeddings endpoint.
pub struct HttpEmbedder {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key_env: String,
}

impl HttpEmbedder {
    pub fn new(
        endpoint: &str,
        model: &str,
        api_key_env: &str,
        timeout_secs: u64,
    ) -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(timeout_secs))
            .build()
            .map_err(|e| e.to_string())?;
        Ok(HttpEmbedder {
            client,
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key_env: api_key_env.to_string(),
        })
    }

    fn url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/embeddings") {
            base.to_string()
        } else {
            format!("{base}/embeddings")
        }
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
}

impl Embedder for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f32>, String> {
        let body = serde_json::json!({ "model": self.model, "input": text });
        let mut request = self.client.post(self.url()).json(&body);
        if let Ok(key) = std::env::var(&self.api_key_env) {
            if !key.is_empty() {
                request = request.bearer_auth(key);
            }
        }
        let response = request.send().map_err(|e| e.to_string())?;
        if !response.status().is_success() {
            return Err(format!("HTTP {}", response.status().as_u16()));
        }
        let parsed: EmbeddingResponse =
            response.json().map_err(|e| format!("bad embedding payload: {e}"))?;
        parsed
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| "embedding response had no data".to_string())
    }

    fn fingerprint(&self) -> String {
        self.model.clone()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FewShotConfig {
    /// In-context example count for candidate generation.
    pub k: usize,
    pub embedder_fingerprint: String,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        FewShotConfig { k: 2, embedder_fingerprint: String::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedExample {
    pub note_id: String,
    pub text: String,
    pub gold_codes: Vec<IcdCode>,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexHeader {
    dimension: usize,
    count: usize,
    fingerprint: String,
}

/// Immutable, exact-search index. Persisted as a single JSON file with a
/// `{dimension, count, fingerprint}` header followed by the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotIndex {
    header: IndexHeader,
    records: Vec<IndexedExample>,
}

impl FewShotIndex {
    pub fn build(
        examples: &[(String, String, Vec<IcdCode>)],
        embedder: &dyn Embedder,
    ) -> Result<Self, FewShotError> {
        let mut seen = std::collections::BTreeSet::new();
        for (note_id, _, _) in examples {
            if !seen.insert(note_id.clone()) {
                return Err(FewShotError::DuplicateNoteId(note_id.clone()));
            }
        }

        let mut records = Vec::with_capacity(examples.len());
        let mut failed_ids = Vec::new();
        let mut first_error = String::new();
        for (note_id, text, gold_codes) in examples {
            match embedder.embed(text) {
                Ok(embedding) => records.push(IndexedExample {
                    note_id: note_id.clone(),
                    text: text.clone(),
                    gold_codes: gold_codes.clone(),
                    embedding,
                }),
                Err(message) => {
                    if failed_ids.is_empty() {
                        first_error = message;
                    }
                    failed_ids.push(note_id.clone());
                }
            }
        }
        if !failed_ids.is_empty() {
            return Err(FewShotError::PartialBuild { failed_ids, message: first_error });
        }

        let dimension = records.first().map(|r| r.embedding.len()).unwrap_or(0);
        for record in &records {
            if record.embedding.len() != dimension {
                return Err(FewShotError::MixedDimensions {
                    expected: dimension,
                    note_id: record.note_id.clone(),
                    actual: record.embedding.len(),
                });
            }
        }

        Ok(FewShotIndex {
            header: IndexHeader {
                dimension,
                count: records.len(),
                fingerprint: embedder.fingerprint(),
            },
            records,
        })
    }

    /// Builds an index directly from pre-embedded records.
    pub fn from_records(
        fingerprint: &str,
        records: Vec<IndexedExample>,
    ) -> Result<Self, FewShotError> {
        let dimension = records.first().map(|r| r.embedding.len()).unwrap_or(0);
        for record in &records {
            if record.embedding.len() != dimension {
                return Err(FewShotError::MixedDimensions {
                    expected: dimension,
                    note_id: record.note_id.clone(),
                    actual: record.embedding.len(),
                });
            }
        }
        Ok(FewShotIndex {
            header: IndexHeader {
                dimension,
                count: records.len(),
                fingerprint: fingerprint.to_string(),
            },
            records,
        })
    }

    pub fn records(&self) -> &[IndexedExample] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.header.dimension
    }

    pub fn fingerprint(&self) -> &str {
        &self.header.fingerprint
    }

    /// Exact top-k by cosine similarity, descending; ties broken by
    /// note_id ascending; the query's own note_id is excluded when present.
    pub fn retrieve(
        &self,
        query_note_id: Option<&str>,
        query: &[f32],
        k: usize,
    ) -> Vec<&IndexedExample> {
        if k == 0 || self.records.is_empty() {
            return Vec::new();
        }
        let mut scored: Vec<(f32, &IndexedExample)> = self
            .records
            .iter()
            .filter(|r| Some(r.note_id.as_str()) != query_note_id)
            .map(|r| (cosine_similarity(query, &r.embedding), r))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.note_id.cmp(&b.1.note_id)));
        scored.into_iter().take(k).map(|(_, r)| r).collect()
    }

    /// Embeds the query text and retrieves, checking the embedder matches
    /// the one the index was built with.
    pub fn retrieve_for_text(
        &self,
        query_note_id: Option<&str>,
        text: &str,
        k: usize,
        embedder: &dyn Embedder,
    ) -> Result<Vec<&IndexedExample>, FewShotError> {
        if embedder.fingerprint() != self.header.fingerprint {
            return Err(FewShotError::FingerprintMismatch {
                index: self.header.fingerprint.clone(),
                query: embedder.fingerprint(),
            });
        }
        if k == 0 || self.records.is_empty() {
            return Ok(Vec::new());
        }
        let query = embedder
            .embed(text)
            .map_err(|message| FewShotError::PartialBuild { failed_ids: vec![], message })?;
        Ok(self.retrieve(query_note_id, &query, k))
    }

    pub fn save(&self, path: &Path) -> Result<(), FewShotError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FewShotError> {
        let raw = std::fs::read_to_string(path)?;
        let index: FewShotIndex = serde_json::from_str(&raw)?;
        if index.header.count != index.records.len() {
            return Err(FewShotError::Header(format!(
                "header count {} != record count {}",
                index.header.count,
                index.records.len()
            )));
        }
        for record in &index.records {
            if record.embedding.len() != index.header.dimension {
                return Err(FewShotError::Header(format!(
                    "record {} dimension {} != header dimension {}",
                    record.note_id,
                    record.embedding.len(),
                    index.header.dimension
                )));
            }
        }
        Ok(index)
    }
}

/// Cosine similarity with a zero-vector guard (similarity 0.0).
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f32 {
    if a.len() != b.len() {
        return 0.0;
    }
    let mut dot = 0f32;
    let mut norm_a = 0f32;
    let mut norm_b = 0f32;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    if norm_a == 0.0 || norm_b == 0.0 {
        return 0.0;
    }
    dot / (norm_a.sqrt() * norm_b.sqrt())
}
