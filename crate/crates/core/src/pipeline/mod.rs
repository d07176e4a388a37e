//! Four-step coding pipeline over a clinical note, with stage gating and a
//! closed-book self-correction mode.
//!
//! Step 1 generates candidate codes with evidence; step 2 audits them
//! against the tabular-list knowledge graph; step 3 retrieves and
//! summarises applicable guidelines (cache-first); step 4 audits against
//! those summaries. Every candidate carries a provenance trail that fully
//! explains its presence in, or absence from, the final code set.

pub mod io;
mod steps;

pub use steps::{
    self_correct, step1_generate, step2_kg_audit, step3_summarise, step4_guideline_audit,
    Step3Outcome,
};

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code::IcdCode;
use crate::fewshot::{Embedder, FewShotIndex, IndexedExample};
use crate::gateway::{Gateway, LedgerReport, UsageLedger};
use crate::guidelines::{GuidelineStore, SummariseOptions, SummaryCache};
use crate::kg::CodeGraph;

/// One dataset unit: a single note within a patient encounter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalNote {
    pub note_id: String,
    pub encounter_id: String,
    #[serde(default)]
    pub note_type: String,
    pub text: String,
}

impl ClinicalNote {
    pub fn validate(&self) -> Result<(), String> {
        if self.note_id.trim().is_empty() {
            return Err("note_id is empty".to_string());
        }
        if self.encounter_id.trim().is_empty() {
            return Err(format!("note {}: encounter_id is empty", self.note_id));
        }
        if self.text.trim().is_empty() {
            return Err(format!("note {}: text is empty", self.note_id));
        }
        Ok(())
    }
}

/// Pipeline step a trail entry belongs to. Step 3 never acts on candidates
/// directly, so it has no tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum StepTag {
    Step1,
    Step2,
    Step4,
    SelfCorrection,
}

impl StepTag {
    pub fn label(&self) -> &'static str {
        match self {
            StepTag::Step1 => "1",
            StepTag::Step2 => "2",
            StepTag::Step4 => "4",
            StepTag::SelfCorrection => "SC",
        }
    }

    pub fn from_label(label: &str) -> Option<StepTag> {
        match label {
            "1" => Some(StepTag::Step1),
            "2" => Some(StepTag::Step2),
            "4" => Some(StepTag::Step4),
            "SC" => Some(StepTag::SelfCorrection),
            _ => None,
        }
    }
}

impl Serialize for StepTag {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for StepTag {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        StepTag::from_label(&raw)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown step tag {raw:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrailAction {
    Generated,
    Retained,
    Removed,
    ReplacedBy,
    Added,
    ReplacementTarget,
}

impl TrailAction {
    /// Actions whose presence as the last trail entry keeps a code in the
    /// final set.
    pub fn keeps_code(&self) -> bool {
        matches!(
            self,
            TrailAction::Generated
                | TrailAction::Retained
                | TrailAction::Added
                | TrailAction::ReplacementTarget
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrailEntry {
    pub step: StepTag,
    pub action: TrailAction,
    pub justification: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceSpan {
    pub text: String,
    /// True when the span is a verbatim substring of the note.
    pub verbatim: bool,
}

/// A candidate code with its evidence and full audit provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateCode {
    pub code: IcdCode,
    pub description: String,
    pub evidence: Vec<EvidenceSpan>,
    pub trail: Vec<TrailEntry>,
}

impl CandidateCode {
    pub fn is_active(&self) -> bool {
        self.trail.last().map(|e| e.action.keeps_code()).unwrap_or(false)
    }

    /// Whether the code was in the working set after all trail entries up
    /// to and including `step` (used to reconstruct intermediate states).
    pub fn active_after(&self, step: StepTag) -> bool {
        self.trail
            .iter()
            .filter(|e| e.step <= step)
            .next_back()
            .map(|e| e.action.keeps_code())
            .unwrap_or(false)
    }

    pub fn push(&mut self, step: StepTag, action: TrailAction, justification: impl Into<String>) {
        self.trail.push(TrailEntry { step, action, justification: justification.into() });
    }
}

/// Reconstructs the working code set after a given step from trails alone.
pub fn codes_after_step(candidates: &[CandidateCode], step: StepTag) -> BTreeSet<IcdCode> {
    candidates
        .iter()
        .filter(|c| c.active_after(step))
        .map(|c| c.code.clone())
        .collect()
}

/// Which stages run. The chain is prefix-closed over {1,2,3,4}; the
/// self-correction variant replaces steps 2-4 with closed-book review.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageSet {
    #[serde(rename = "1")]
    Step1Only,
    #[serde(rename = "12")]
    Steps12,
    #[serde(rename = "123")]
    Steps123,
    #[serde(rename = "1234")]
    Steps1234,
    #[serde(rename = "1+sc")]
    Step1SelfCorrect,
}

impl StageSet {
    pub fn parse(raw: &str) -> Option<StageSet> {
        match raw {
            "1" => Some(StageSet::Step1Only),
            "12" => Some(StageSet::Steps12),
            "123" => Some(StageSet::Steps123),
            "1234" => Some(StageSet::Steps1234),
            "1+sc" => Some(StageSet::Step1SelfCorrect),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            StageSet::Step1Only => "1",
            StageSet::Steps12 => "12",
            StageSet::Steps123 => "123",
            StageSet::Steps1234 => "1234",
            StageSet::Step1SelfCorrect => "1+sc",
        }
    }

    pub fn runs_step2(&self) -> bool {
        matches!(self, StageSet::Steps12 | StageSet::Steps123 | StageSet::Steps1234)
    }

    pub fn runs_step3(&self) -> bool {
        matches!(self, StageSet::Steps123 | StageSet::Steps1234)
    }

    pub fn runs_step4(&self) -> bool {
        matches!(self, StageSet::Steps1234)
    }

    pub fn runs_self_correction(&self) -> bool {
        matches!(self, StageSet::Step1SelfCorrect)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub stages: StageSet,
    /// Closed-book review rounds in the `1+sc` mode; 0 disables the review
    /// entirely.
    pub self_correction_rounds: u32,
    /// Few-shot example count for step 1.
    pub k: usize,
    /// Whether step 4 may introduce codes beyond replacements.
    pub allow_additions: bool,
    /// Few-shot note rendering is truncated to this many characters.
    pub example_truncate_chars: usize,
    /// Concurrent note workers for batch runs.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            stages: StageSet::Steps1234,
            self_correction_rounds: 0,
            k: 2,
            allow_additions: true,
            example_truncate_chars: 4000,
            workers: 1,
        }
    }
}

/// Per-agent gateways. Only the gateways for enabled stages are required.
#[derive(Clone)]
pub struct StepGateways {
    pub step1: Gateway,
    pub step2: Option<Gateway>,
    pub step3: Option<Gateway>,
    pub step4: Option<Gateway>,
    pub self_correction: Option<Gateway>,
}

impl StepGateways {
    /// Single-backend setup: the same gateway serves every agent.
    pub fn uniform(gateway: Gateway) -> Self {
        StepGateways {
            step1: gateway.clone(),
            step2: Some(gateway.clone()),
            step3: Some(gateway.clone()),
            step4: Some(gateway.clone()),
            self_correction: Some(gateway),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodingResult {
    pub note_id: String,
    pub encounter_id: String,
    pub final_codes: BTreeSet<IcdCode>,
    pub candidates: Vec<CandidateCode>,
    pub usage: LedgerReport,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Error, Serialize, Deserialize)]
#[error("note {note_id} failed at {stage}: {error}")]
pub struct NoteFailure {
    pub note_id: String,
    pub stage: String,
    pub error: String,
}

pub struct Pipeline {
    pub graph: Arc<CodeGraph>,
    pub store: Option<Arc<GuidelineStore>>,
    pub cache: Option<SummaryCache>,
    pub index: Option<Arc<FewShotIndex>>,
    pub embedder: Option<Arc<dyn Embedder>>,
    pub gateways: StepGateways,
    pub config: PipelineConfig,
    /// Run-level ledger; per-note usage is merged in after each note.
    pub ledger: Arc<UsageLedger>,
    pub summarise_options: SummariseOptions,
}

impl Pipeline {
    /// Checks that every dependency needed by the configured stages is
    /// present.
    pub fn validate(&self) -> Result<(), String> {
        let stages = self.config.stages;
        if stages.runs_step2() && self.gateways.step2.is_none() {
            return Err("stage 2 enabled but no step2 backend configured".to_string());
        }
        if stages.runs_step3() {
            if self.gateways.step3.is_none() {
                return Err("stage 3 enabled but no step3 backend configured".to_string());
            }
            if self.store.is_none() {
                return Err("stage 3 enabled but no guideline store configured".to_string());
            }
            if self.cache.is_none() {
                return Err("stage 3 enabled but no summary cache configured".to_string());
            }
        }
        if stages.runs_step4() && self.gateways.step4.is_none() {
            return Err("stage 4 enabled but no step4 backend configured".to_string());
        }
        if stages.runs_self_correction()
            && self.config.self_correction_rounds > 0
            && self.gateways.self_correction.is_none()
        {
            return Err("self-correction enabled but no backend configured".to_string());
        }
        if self.config.k > 0 && self.index.is_some() && self.embedder.is_none() {
            return Err("few-shot index configured without an embedder".to_string());
        }
        Ok(())
    }

    /// Runs the configured stages over one note. Stage errors abort the
    /// note with a structured failure; batch runs continue with others.
    pub fn run(&self, note: &ClinicalNote) -> Result<CodingResult, NoteFailure> {
        let fail = |stage: &str, error: String| NoteFailure {
            note_id: note.note_id.clone(),
            stage: stage.to_string(),
            error,
        };
        note.validate().map_err(|e| fail("input", e))?;

        let note_ledger = Arc::new(UsageLedger::new());
        let mut warnings: Vec<String> = Vec::new();

        let examples: Vec<IndexedExample> = if self.config.k > 0 {
            match (&self.index, &self.embedder) {
                (Some(index), Some(embedder)) => index
                    .retrieve_for_text(
                        Some(note.note_id.as_str()),
                        &note.text,
                        self.config.k,
                        embedder.as_ref(),
                    )
                    .map_err(|e| fail("fewshot", e.to_string()))?
                    .into_iter()
                    .cloned()
                    .collect(),
                _ => {
                    warnings.push(format!(
                        "k={} requested but no few-shot index configured; running zero-shot",
                        self.config.k
                    ));
                    Vec::new()
                }
            }
        } else {
            Vec::new()
        };

        let gateway1 = self.gateways.step1.with_ledger(Arc::clone(&note_ledger));
        let (mut candidates, step1_warnings) = step1_generate(
            note,
            &examples,
            &self.graph,
            &gateway1,
            self.config.example_truncate_chars,
        )
        .map_err(|e| fail("step1", e.to_string()))?;
        warnings.extend(step1_warnings);

        // An empty candidate set short-circuits the remaining stages; no
        // further backend calls are made for this note.
        if !candidates.is_empty() {
            if self.config.stages.runs_self_correction() && self.config.self_correction_rounds > 0 {
                let gateway = self
                    .gateways
                    .self_correction
                    .as_ref()
                    .expect("validated")
                    .with_ledger(Arc::clone(&note_ledger));
                let (next, w) =
                    self_correct(note, candidates, &gateway, self.config.self_correction_rounds)
                        .map_err(|e| fail("self_correction", e.to_string()))?;
                candidates = next;
                warnings.extend(w);
            }

            if self.config.stages.runs_step2() {
                let gateway = self
                    .gateways
                    .step2
                    .as_ref()
                    .expect("validated")
                    .with_ledger(Arc::clone(&note_ledger));
                let (next, w) = step2_kg_audit(note, candidates, &self.graph, &gateway)
                    .map_err(|e| fail("step2", e.to_string()))?;
                candidates = next;
                warnings.extend(w);
            }

            if self.config.stages.runs_step3() {
                let gateway = self
                    .gateways
                    .step3
                    .as_ref()
                    .expect("validated")
                    .with_ledger(Arc::clone(&note_ledger));
                let active: Vec<IcdCode> = candidates
                    .iter()
                    .filter(|c| c.is_active())
                    .map(|c| c.code.clone())
                    .collect();
                let outcome = step3_summarise(
                    &active,
                    self.store.as_ref().expect("validated"),
                    self.cache.as_ref().expect("validated"),
                    &gateway,
                    &self.summarise_options,
                );
                for (code, error) in &outcome.failures {
                    warnings.push(format!("step3 failed for {code}: {error}"));
                }

                if self.config.stages.runs_step4() {
                    let gateway = self
                        .gateways
                        .step4
                        .as_ref()
                        .expect("validated")
                        .with_ledger(Arc::clone(&note_ledger));
                    let (next, w) = step4_guideline_audit(
                        note,
                        candidates,
                        &outcome.summaries,
                        &self.graph,
                        &gateway,
                        self.config.allow_additions,
                    )
                    .map_err(|e| fail("step4", e.to_string()))?;
                    candidates = next;
                    warnings.extend(w);
                }
            }
        }

        let final_codes: BTreeSet<IcdCode> =
            candidates.iter().filter(|c| c.is_active()).map(|c| c.code.clone()).collect();

        let usage = note_ledger.report();
        self.ledger.merge(&usage);

        Ok(CodingResult {
            note_id: note.note_id.clone(),
            encounter_id: note.encounter_id.clone(),
            final_codes,
            candidates,
            usage,
            warnings,
        })
    }

    /// Processes notes concurrently up to the configured worker limit.
    /// Results are returned in input order regardless of scheduling.
    pub fn run_batch(&self, notes: &[ClinicalNote]) -> Vec<Result<CodingResult, NoteFailure>> {
        let workers = self.config.workers.max(1).min(notes.len().max(1));
        if workers <= 1 {
            return notes.iter().map(|n| self.run(n)).collect();
        }

        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<CodingResult, NoteFailure>>>> =
            notes.iter().map(|_| Mutex::new(None)).collect();

        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= notes.len() {
                        break;
                    }
                    let result = self.run(&notes[i]);
                    *slots[i].lock().expect("slot lock") = Some(result);
                });
            }
        });

        slots
            .into_iter()
            .map(|slot| slot.into_inner().expect("slot lock").expect("worker filled slot"))
            .collect()
    }
}
