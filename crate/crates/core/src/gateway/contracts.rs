//! Output contracts for the four agents.
//!
//! Steps 1 and 2 answer in strict JSON; the guideline auditor answers with
//! a single `Final Answer: Code1, Code2` line; the summariser returns a
//! found/not-found bullet payload.

use serde::{Deserialize, Serialize};

use crate::code::IcdCode;

/// Which output shape the caller expects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseContract {
    /// `{"results": [{"code", "description", "evidence": [..]}]}`
    CandidateList,
    /// `{"results": [{"code", "justification"}]}`
    AuditList,
    /// `{"status": "found"|"not_found", "bullets": [..]}`
    SummaryBullets,
    /// One `Final Answer: Code1, Code2` line.
    FinalAnswer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawCandidate {
    pub code: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub evidence: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawAudit {
    pub code: String,
    #[serde(default)]
    pub justification: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSummary {
    pub status: SummaryStatus,
    #[serde(default)]
    pub bullets: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryStatus {
    Found,
    NotFound,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParsedResponse {
    Candidates(Vec<RawCandidate>),
    Audited(Vec<RawAudit>),
    Summary(RawSummary),
    FinalAnswer(Vec<IcdCode>),
}

#[derive(Deserialize)]
struct ResultsEnvelope<T> {
    results: Vec<T>,
}

/// Parses a raw response against the declared contract. The error string
/// names the violation for the repair reprompt.
pub fn parse(contract: ResponseContract, text: &str) -> Result<ParsedResponse, String> {
    match contract {
        ResponseContract::CandidateList => {
            let envelope: ResultsEnvelope<RawCandidate> = parse_json_payload(text)?;
            for item in &envelope.results {
                IcdCode::new(&item.code)
                    .map_err(|e| format!("candidate code invalid: {e}"))?;
            }
            Ok(ParsedResponse::Candidates(envelope.results))
        }
        ResponseContract::AuditList => {
            let envelope: ResultsEnvelope<RawAudit> = parse_json_payload(text)?;
            for item in &envelope.results {
                IcdCode::new(&item.code).map_err(|e| format!("audited code invalid: {e}"))?;
            }
            Ok(ParsedResponse::Audited(envelope.results))
        }
        ResponseContract::SummaryBullets => {
            let summary: RawSummary = parse_json_payload(text)?;
            if summary.status == SummaryStatus::Found && summary.bullets.is_empty() {
                return Err("status is found but bullets are empty".to_string());
            }
            Ok(ParsedResponse::Summary(summary))
        }
        ResponseContract::FinalAnswer => parse_final_answer(text).map(ParsedResponse::FinalAnswer),
    }
}

/// Extracts a JSON object from the response, tolerating markdown fences
/// and surrounding prose, then deserializes it into the expected shape.
fn parse_json_payload<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, String> {
    let start = text.find('{').ok_or("no JSON object in response")?;
    let end = text.rfind('}').ok_or("no closing brace in response")?;
    if end < start {
        return Err("malformed JSON braces".to_string());
    }
    serde_json::from_str(&text[start..=end]).map_err(|e| format!("JSON does not match the required shape: {e}"))
}

/// Parses the last `Final Answer:` line into a code list. An empty list
/// (`Final Answer:` alone or `Final Answer: None`) is valid.
fn parse_final_answer(text: &str) -> Result<Vec<IcdCode>, String> {
    let line = text
        .lines()
        .rev()
        .find_map(|l| l.trim().strip_prefix("Final Answer:"))
        .ok_or("no 'Final Answer:' line in response")?;
    let trimmed = line.trim();
    if trimmed.is_empty() || trimmed.eq_ignore_ascii_case("none") {
        return Ok(Vec::new());
    }
    let mut codes = Vec::new();
    for token in trimmed.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        let code = IcdCode::new(token)
            .map_err(|_| format!("final answer token {token:?} is not a valid code"))?;
        if !codes.contains(&code) {
            codes.push(code);
        }
    }
    Ok(codes)
}
