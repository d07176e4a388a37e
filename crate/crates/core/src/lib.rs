//! ICD-10-CM coding engine.
//!
//! Builds a knowledge graph from the CMS tabular list, indexes the narrative
//! coding guidelines by table of contents, and runs a four-step agentic
//! pipeline (candidate generation, graph audit, guideline summarisation,
//! guideline audit) over clinical notes. Also ships the evaluation kit:
//! encounter-level micro/macro metrics, Krippendorff's alpha, and code-space
//! filters.

pub mod code;
pub mod config;
pub mod eval;
pub mod fewshot;
pub mod gateway;
pub mod guidelines;
pub mod kg;
pub mod pipeline;

pub use code::IcdCode;
