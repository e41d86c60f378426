// SPDX-License-Identifier: MIT OR Apache-2.0

use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cases::{select_cases, ActivationTable, Case, CaseContext, CaseRef, LatentCaseSet, Selection, Skipped};
use super::llm::LlmClient;
use super::prompt::{construction_prompt, render_case_line, verification_prompt, ChatMessage, TemplateSet};
use crate::corpus::flatten_text;
use crate::error::{Error, Result};

/// Predicted levels above this count as "fires".
pub const POSITIVE_ABOVE: u8 = 5;

pub const CATALOG_FILE: &str = "concepts.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Cases per role: construction, verify-positive and verify-negative.
    pub n: usize,
    pub seed: u64,
    /// Latents processed concurrently, bounding in-flight requests.
    pub concurrency: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n: 5,
            seed: 0,
            concurrency: 4,
        }
    }
}

/// Outcome for one verification case. `predicted` is `None` when the
/// response held no level or the request failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CasePrediction {
    pub record: usize,
    pub positive: bool,
    pub true_level: u8,
    pub predicted: Option<u8>,
    pub response: Option<String>,
    pub error: Option<String>,
}

impl CasePrediction {
    pub fn correct(&self) -> bool {
        match self.predicted {
            Some(p) => (p > POSITIVE_ABOVE) == self.positive,
            None => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub predictions: Vec<CasePrediction>,
    pub correct: usize,
    pub total: usize,
    pub confidence: f64,
}

impl Verification {
    pub fn from_predictions(predictions: Vec<CasePrediction>) -> Self {
        let correct = predictions.iter().filter(|p| p.correct()).count();
        let total = predictions.len();
        let confidence = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
        Self {
            predictions,
            correct,
            total,
            confidence,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub latent: usize,
    pub description: String,
    pub confidence: f64,
    pub correct: usize,
    pub total: usize,
    pub firing_count: usize,
    pub a_max: f32,
    pub mean_pos_activation: f64,
    pub construct: Vec<CaseRef>,
    pub verify_pos: Vec<CaseRef>,
    pub verify_neg: Vec<CaseRef>,
    pub predictions: Vec<CasePrediction>,
    pub prompt: Vec<ChatMessage>,
    pub raw_response: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub latent: usize,
    pub error: String,
}

/// Nested confidence bands.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandCounts {
    pub c_1_0: usize,
    pub c_ge_0_9: usize,
    pub c_ge_0_8: usize,
    pub all: usize,
}

impl BandCounts {
    /// Thresholds are applied to the integer ratio `correct / total`, so
    /// 9/10 lands in the 0.9 band without float slack.
    pub fn from_ratios(ratios: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut b = Self::default();
        for (correct, total) in ratios {
            b.all += 1;
            if total > 0 && correct == total {
                b.c_1_0 += 1;
            }
            if 10 * correct >= 9 * total {
                b.c_ge_0_9 += 1;
            }
            if 10 * correct >= 8 * total {
                b.c_ge_0_8 += 1;
            }
        }
        b
    }

    /// Bands from plain confidence values, with a small tolerance at each
    /// threshold.
    pub fn from_confidences(confidences: impl IntoIterator<Item = f64>) -> Self {
        const EPS: f64 = 1e-9;
        let mut b = Self::default();
        for c in confidences {
            b.all += 1;
            if c >= 1.0 - EPS {
                b.c_1_0 += 1;
            }
            if c >= 0.9 - EPS {
                b.c_ge_0_9 += 1;
            }
            if c >= 0.8 - EPS {
                b.c_ge_0_8 += 1;
            }
        }
        b
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogSummary {
    pub bands: BandCounts,
    pub n_latents: usize,
    pub n_records: usize,
    pub eligible: usize,
    pub skipped: Vec<Skipped>,
    pub failures: Vec<Failure>,
    pub config: PipelineConfig,
    pub template_version: String,
    pub llm: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub concepts: Vec<Concept>,
    pub summary: CatalogSummary,
}

impl Catalog {
    pub fn concept(&self, latent: usize) -> Option<&Concept> {
        self.concepts
            .binary_search_by_key(&latent, |c| c.latent)
            .ok()
            .map(|i| &self.concepts[i])
    }

    /// Writes one concept per line to `concepts.jsonl` and the summary to
    /// `summary.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CATALOG_FILE);
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for c in &self.concepts {
            serde_json::to_writer(&mut w, c)?;
            w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        let path = dir.join(SUMMARY_FILE);
        std::fs::write(&path, serde_json::to_vec_pretty(&self.summary)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(CATALOG_FILE);
        let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut concepts = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let c: Concept = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.clone(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            concepts.push(c);
        }
        concepts.sort_by_key(|c| c.latent);
        let path = dir.join(SUMMARY_FILE);
        let raw = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            concepts,
            summary: serde_json::from_slice(&raw)?,
        })
    }
}

/// First integer token in `0..=10`, ignoring digits glued to letters.
pub fn parse_level(response: &str) -> Option<u8> {
    let bytes = response.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let glued = (start > 0 && bytes[start - 1].is_ascii_alphabetic())
                || (i < bytes.len() && bytes[i].is_ascii_alphabetic());
            let decimal = i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit();
            if !glued && !decimal {
                if let Ok(v) = response[start..i].parse::<u32>() {
                    if v <= 10 {
                        return Some(v as u8);
                    }
                }
            }
            if decimal {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
        } else {
            i += 1;
        }
    }
    None
}

/// Strips a leading label and surrounding quotes and flattens whitespace.
pub fn clean_description(raw: &str) -> String {
    let mut text = flatten_text(raw);
    for label in ["concept:", "description:", "answer:"] {
        if text.to_lowercase().starts_with(label) {
            text = text[label.len()..].trim().to_string();
        }
    }
    text.trim_matches(|c| c == '"' || c == '\'' || c == '`').trim().to_string()
}

/// Asks for a description. Returns the cleaned text and the raw completion.
pub fn generate_concept(prompt: &[ChatMessage], llm: &dyn LlmClient) -> Result<(String, String)> {
    let raw = llm.complete(prompt)?;
    let description = clean_description(&raw);
    if description.is_empty() {
        return Err(Error::Llm("empty completion".into()));
    }
    Ok((description, raw))
}

/// Predicts a level for every held-out positive and negative case.
pub fn verify_concept(
    description: &str,
    set: &LatentCaseSet,
    ctx: &CaseContext<'_>,
    templates: &TemplateSet,
    llm: &dyn LlmClient,
) -> Result<Verification> {
    let cases = set
        .verify_pos
        .iter()
        .map(|c| (c, true))
        .chain(set.verify_neg.iter().map(|c| (c, false)));
    let mut predictions = Vec::with_capacity(set.verify_pos.len() + set.verify_neg.len());
    for (case_ref, positive) in cases {
        let case = ctx.resolve(case_ref)?;
        let prompt = verification_prompt(templates, description, &case)?;
        let mut p = CasePrediction {
            record: case_ref.record,
            positive,
            true_level: case_ref.level,
            predicted: None,
            response: None,
            error: None,
        };
        match llm.complete(&prompt) {
            Ok(text) => {
                p.predicted = parse_level(&text);
                p.response = Some(text);
            }
            Err(e) => p.error = Some(e.to_string()),
        }
        predictions.push(p);
    }
    Ok(Verification::from_predictions(predictions))
}

fn resolve_all(ctx: &CaseContext<'_>, refs: &[CaseRef]) -> Result<Vec<Case>> {
    refs.iter().map(|c| ctx.resolve(c)).collect()
}

/// Builds, describes and verifies one eligible latent.
pub fn interpret_latent(
    set: &LatentCaseSet,
    firing_count: usize,
    ctx: &CaseContext<'_>,
    templates: &TemplateSet,
    llm: &dyn LlmClient,
) -> Result<Concept> {
    let cases = resolve_all(ctx, &set.construct)?;
    let prompt = construction_prompt(templates, &cases)?;
    let (description, raw_response) = generate_concept(&prompt, llm)?;
    let v = verify_concept(&description, set, ctx, templates, llm)?;
    Ok(Concept {
        latent: set.latent,
        description,
        confidence: v.confidence,
        correct: v.correct,
        total: v.total,
        firing_count,
        a_max: set.a_max,
        mean_pos_activation: set.mean_pos_activation,
        construct: set.construct.clone(),
        verify_pos: set.verify_pos.clone(),
        verify_neg: set.verify_neg.clone(),
        predictions: v.predictions,
        prompt,
        raw_response,
    })
}

/// Interprets every latent of `table`. Per-latent errors are recorded as
/// failures and do not stop the run.
pub fn run_pipeline(
    table: &ActivationTable,
    ctx: &CaseContext<'_>,
    templates: &TemplateSet,
    llm: &dyn LlmClient,
    cfg: &PipelineConfig,
) -> Result<Catalog> {
    if table.n_records() != ctx.dump.len() {
        return Err(Error::invalid(
            "run_pipeline",
            format!("table has {} records, dump has {}", table.n_records(), ctx.dump.len()),
        ));
    }
    let mut eligible = Vec::new();
    let mut skipped = Vec::new();
    for latent in 0..table.n_latents() {
        match select_cases(table, latent, cfg.n, cfg.seed)? {
            Selection::Eligible(set) => eligible.push(set),
            Selection::Skipped(s) => skipped.push(s),
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.concurrency.max(1))
        .build()
        .map_err(|e| Error::invalid("run_pipeline", e.to_string()))?;
    let outcomes: Vec<Result<Concept>> = pool.install(|| {
        eligible
            .par_iter()
            .map(|set| {
                interpret_latent(set, table.firing_count(set.latent), ctx, templates, llm).map_err(|e| {
                    Error::Latent {
                        latent: set.latent,
                        reason: e.to_string(),
                    }
                })
            })
            .collect()
    });
    let mut concepts = Vec::new();
    let mut failures = Vec::new();
    for (set, outcome) in eligible.iter().zip(outcomes) {
        match outcome {
            Ok(c) => concepts.push(c),
            Err(e) => failures.push(Failure {
                latent: set.latent,
                error: e.to_string(),
            }),
        }
    }
    let bands = BandCounts::from_ratios(concepts.iter().map(|c| (c.correct, c.total)));
    Ok(Catalog {
        concepts,
        summary: CatalogSummary {
            bands,
            n_latents: table.n_latents(),
            n_records: table.n_records(),
            eligible: eligible.len(),
            skipped,
            failures,
            config: cfg.clone(),
            template_version: templates.version.clone(),
            llm: llm.name(),
        },
    })
}

/// Writes a CSV for human relevance rating: latent, description, up to
/// five held-out activating cases and an empty `relevance` column.
pub fn export_annotations(catalog: &Catalog, ctx: &CaseContext<'_>, path: &Path) -> Result<()> {
    const CASES: usize = 5;
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut header = vec!["latent_id".to_string(), "description".to_string()];
    header.extend((1..=CASES).map(|i| format!("case_{i}")));
    header.push("relevance".into());
    w.write_record(&header).map_err(|e| Error::Data(e.to_string()))?;
    for c in &catalog.concepts {
        let mut row = vec![c.latent.to_string(), flatten_text(&c.description)];
        for i in 0..CASES {
            row.push(match c.verify_pos.get(i) {
                Some(r) => render_case_line(&ctx.resolve(r)?),
                None => String::new(),
            });
        }
        row.push(String::new());
        w.write_record(&row).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
