//! Per-code distillation of guideline sections into bullet-point rules.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::cache::{CacheKey, SummaryCache};
use super::GuidelineSection;
use crate::code::IcdCode;
use crate::gateway::{
    AgentMessage, Gateway, GatewayError, ParsedResponse, ResponseContract, StepLabel,
};

pub use crate::gateway::SummaryStatus;

/// Bullet-point rules applicable to one code, or an explicit not-found
/// marker (which downstream auditing treats as "retain by default").
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidelineSummary {
    pub code: IcdCode,
    pub status: SummaryStatus,
    pub bullets: Vec<String>,
    pub source_sections: Vec<String>,
    pub version: String,
    pub backend_fingerprint: String,
}

impl GuidelineSummary {
    pub fn is_found(&self) -> bool {
        self.status == SummaryStatus::Found
    }

    pub fn not_found(
        code: &IcdCode,
        source_sections: Vec<String>,
        version: &str,
        backend_fingerprint: &str,
    ) -> Self {
        GuidelineSummary {
            code: code.clone(),
            status: SummaryStatus::NotFound,
            bullets: Vec::new(),
            source_sections,
            version: version.to_string(),
            backend_fingerprint: backend_fingerprint.to_string(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SummaryError {
    #[error("no guideline sections supplied for {0}")]
    NoSections(IcdCode),
    #[error("backend failed summarising {code} (completed sections: {completed:?}): {source}")]
    Backend {
        code: IcdCode,
        completed: Vec<String>,
        #[source]
        source: GatewayError,
    },
    #[error("cache write failed for {code}: {source}")]
    Cache {
        code: IcdCode,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct SummariseOptions {
    /// Upper bound on guideline characters per backend call; larger section
    /// sets are summarised in deterministic chunks and merged.
    pub chunk_chars: usize,
}

impl Default for SummariseOptions {
    fn default() -> Self {
        SummariseOptions { chunk_chars: 24_000 }
    }
}

const SUMMARISER_SYSTEM_PROMPT: &str = "You are an expert medical coder.\n\n\
Summarise the provided ICD-10-CM coding guideline excerpts into concise bullet-point rules \
that apply to the code being validated. Include only rules applicable to that code.\n\n\
JSON Output Format (you must strictly follow this format and output nothing else):\n\
{\"status\": \"found\", \"bullets\": [\"<applicable rule>\", ...]}\n\
or, when none of the excerpts contains a rule applicable to the code:\n\
{\"status\": \"not_found\"}";

/// Distils the given sections into a per-code summary, chunking when the
/// section set exceeds the configured size, and writes the result to the
/// cache before returning.
pub fn summarise_for_code(
    code: &IcdCode,
    sections: &[&GuidelineSection],
    gateway: &Gateway,
    cache: &SummaryCache,
    version: &str,
    options: &SummariseOptions,
) -> Result<GuidelineSummary, SummaryError> {
    if sections.is_empty() {
        return Err(SummaryError::NoSections(code.clone()));
    }

    let chunks = pack_chunks(sections, options.chunk_chars);
    let mut bullets: Vec<String> = Vec::new();
    let mut any_found = false;
    let mut completed: Vec<String> = Vec::new();

    for chunk in &chunks {
        let user = render_chunk_prompt(code, chunk);
        let messages =
            [AgentMessage::system(SUMMARISER_SYSTEM_PROMPT), AgentMessage::user(user)];
        let (parsed, _) = gateway
            .complete(StepLabel::Step3, &messages, ResponseContract::SummaryBullets)
            .map_err(|source| SummaryError::Backend {
                code: code.clone(),
                completed: completed.clone(),
                source,
            })?;
        if let ParsedResponse::Summary(raw) = parsed {
            if raw.status == SummaryStatus::Found {
                any_found = true;
                for bullet in raw.bullets {
                    if !bullets.contains(&bullet) {
                        bullets.push(bullet);
                    }
                }
            }
        }
        completed.extend(chunk.iter().map(|(id, _)| id.clone()));
    }

    let source_sections: Vec<String> = sections.iter().map(|s| s.section_id.clone()).collect();
    let summary = GuidelineSummary {
        code: code.clone(),
        status: if any_found { SummaryStatus::Found } else { SummaryStatus::NotFound },
        bullets,
        source_sections,
        version: version.to_string(),
        backend_fingerprint: gateway.fingerprint(),
    };

    let key = CacheKey::new(code, version, &summary.backend_fingerprint);
    cache
        .put(&key, &summary)
        .map_err(|source| SummaryError::Cache { code: code.clone(), source })?;
    Ok(summary)
}

/// Greedy packing of whole sections into chunks up to `chunk_chars`; a
/// single oversized section is split at character boundaries.
fn pack_chunks(sections: &[&GuidelineSection], chunk_chars: usize) -> Vec<Vec<(String, String)>> {
    let mut chunks: Vec<Vec<(String, String)>> = Vec::new();
    let mut current: Vec<(String, String)> = Vec::new();
    let mut current_len = 0usize;

    let push_piece = |chunks: &mut Vec<Vec<(String, String)>>,
                          current: &mut Vec<(String, String)>,
                          current_len: &mut usize,
                          id: String,
                          text: String| {
        let len = text.chars().count();
        if *current_len + len > chunk_chars && !current.is_empty() {
            chunks.push(std::mem::take(current));
            *current_len = 0;
        }
        *current_len += len;
        current.push((id, text));
    };

    for section in sections {
        let total = section.text.chars().count();
        if total <= chunk_chars {
            push_piece(
                &mut chunks,
                &mut current,
                &mut current_len,
                section.section_id.clone(),
                section.text.clone(),
            );
        } else {
            let chars: Vec<char> = section.text.chars().collect();
            for (i, piece) in chars.chunks(chunk_chars).enumerate() {
                push_piece(
                    &mut chunks,
                    &mut current,
                    &mut current_len,
                    format!("{} (part {})", section.section_id, i + 1),
                    piece.iter().collect(),
                );
            }
        }
    }
    if !current.is_empty() {
        chunks.push(current);
    }
    chunks
}

fn render_chunk_prompt(code: &IcdCode, chunk: &[(String, String)]) -> String {
    let mut out = format!("Code: {code}\n\nGuideline excerpts:\n");
    for (id, text) in chunk {
        out.push_str(&format!("\n[section {id}]\n{text}\n"));
    }
    out
}
