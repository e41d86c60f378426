// SPDX-License-Identifier: MIT OR Apache-2.0

//! Automated interpretation of latents.
//!
//! For each latent the strongest test cases are split into a construction
//! half, shown to a language model with their intensity levels, and a
//! held-out half. The model's description is then scored by how well it
//! predicts activation on the held-out cases and on silent ones.

mod cases;
mod llm;
mod pipeline;
mod prompt;

pub use cases::{
    bin_level, select_cases, ActivationTable, Case, CaseContext, CaseRef, LatentCaseSet, Selection, Skipped,
};
pub use llm::{content_tokens, HttpChatClient, HttpLlmConfig, LlmClient, StubLlm};
pub use pipeline::{
    clean_description, export_annotations, generate_concept, interpret_latent, parse_level, run_pipeline,
    verify_concept, BandCounts, CasePrediction, Catalog, CatalogSummary, Concept, Failure, PipelineConfig,
    Verification, CATALOG_FILE, POSITIVE_ABOVE, SUMMARY_FILE,
};
pub use prompt::{
    construction_prompt, fill, render_case, render_case_line, verification_prompt, ChatMessage, Role, Template,
    TemplateSet, BUILTIN_VERSION,
};
