// SPDX-License-Identifier: MIT OR Apache-2.0

//! One function per subcommand. Each reads its inputs from the store,
//! commits one artifact (two for `sweep`) and returns a JSON summary.

use std::collections::BTreeMap;

use recprobe::conceptlab::{
    export_annotations, run_pipeline, verify_concept, ActivationTable, BandCounts, CaseContext, Catalog,
    HttpChatClient, LatentCaseSet, LlmClient, StubLlm, TemplateSet, BUILTIN_VERSION,
};
use recprobe::corpus::synthetic::genre_dataset;
use recprobe::corpus::{load_interactions, load_item_meta, InputFormat, Partition, PreparedDataset};
use recprobe::evalmetrics::{downstream_retention, ConceptGeometry, MetricsReport};
use recprobe::recmodels::{dump_activations, evaluate, train_model, ActivationDump, RecModel, DEFAULT_CUTOFFS};
use recprobe::sae::{relative_error, reconstruction_mse, train, train_checkpointed, SaeConfig, SaeModel, SweepRow};
use recprobe::steering::steering_report;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{LlmProvider, RunConfig};
use crate::error::{CliError, CliResult};
use crate::store::{Artifact, ArtifactRecord, ArtifactStore, Kind};

pub const TRAIN_DUMP: &str = "train.rsae";
pub const TEST_DUMP: &str = "test.rsae";
pub const GROUPS_FILE: &str = "groups.json";
pub const API_KEY_ENV: &str = "RECPROBE_LLM_API_KEY";

/// What a command produced.
#[derive(Clone, Debug, Serialize)]
pub struct Outcome {
    pub command: &'static str,
    pub artifact: Option<String>,
    pub summary: Value,
}

impl Outcome {
    fn new(command: &'static str, artifact: &Artifact) -> Self {
        Self {
            command,
            artifact: Some(artifact.reference()),
            summary: artifact.record.summary.clone(),
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> CliResult<Value> {
    Ok(serde_json::to_value(v)?)
}

fn record(kind: Kind, inputs: &[(&str, &Artifact)], config: Value, summary: Value) -> ArtifactRecord {
    ArtifactRecord {
        kind,
        command: kind.producer().into(),
        inputs: inputs.iter().map(|(r, a)| (r.to_string(), a.reference())).collect(),
        config,
        summary,
    }
}

pub fn prepare_data(store: &ArtifactStore, cfg: &RunConfig) -> CliResult<Outcome> {
    let staging = store.stage(Kind::Dataset)?;
    let data = &cfg.data;
    let (prepared, config) = if data.synthetic {
        let synth = genre_dataset(&cfg.synthetic)?;
        let prepared = PreparedDataset::build(
            &synth.to_loaded(),
            Some(&synth.meta),
            data.k_core,
            data.max_history_len,
            cfg.synthetic.seed,
            "synthetic-genre",
        )?;
        // Planted groups, re-indexed to the filtered ids.
        let item_group: Vec<usize> = (0..prepared.items.len())
            .map(|i| raw_index(prepared.items.raw(i)).map(|r| synth.item_group[r]))
            .collect::<CliResult<_>>()?;
        let user_group: Vec<usize> = (0..prepared.users.len())
            .map(|u| raw_index(prepared.users.raw(u)).map(|r| synth.user_group[r]))
            .collect::<CliResult<_>>()?;
        let groups = json!({ "item_group": item_group, "user_group": user_group });
        std::fs::write(staging.file(GROUPS_FILE), serde_json::to_vec(&groups)?)?;
        (prepared, json!({ "data": data, "synthetic": cfg.synthetic }))
    } else {
        let path = data.interactions.as_ref().expect("validated");
        let loaded = load_interactions(path, InputFormat::from_path(path))?;
        let meta = match &data.meta {
            Some(m) => Some(load_item_meta(m, &loaded.items)?),
            None => None,
        };
        let source = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let prepared =
            PreparedDataset::build(&loaded, meta.as_deref(), data.k_core, data.max_history_len, 0, &source)?;
        (prepared, json!({ "data": data }))
    };
    prepared.save(&staging.dir)?;
    let summary = to_value(&prepared.manifest)?;
    let artifact = store.commit(staging, record(Kind::Dataset, &[], config, summary))?;
    Ok(Outcome::new("prepare-data", &artifact))
}

/// Index out of a synthetic `u<n>` / `i<n>` raw id.
fn raw_index(raw: Option<&str>) -> CliResult<usize> {
    raw.and_then(|r| r.get(1..)?.parse().ok())
        .ok_or_else(|| CliError::Store(format!("unexpected synthetic id {raw:?}")))
}

pub fn train_rec(store: &ArtifactStore, cfg: &RunConfig) -> CliResult<Outcome> {
    let dataset_art = store.latest(Kind::Dataset)?;
    let dataset = PreparedDataset::load(&dataset_art.path)?;
    let (model, report) = train_model(cfg.model.kind, &dataset.split, &cfg.model.rec)?;
    let valid = evaluate(&model, &dataset.split, Partition::Dev, &DEFAULT_CUTOFFS, None)?;
    let test = evaluate(&model, &dataset.split, Partition::Test, &DEFAULT_CUTOFFS, None)?;
    let staging = store.stage(Kind::Model)?;
    model.save(&staging.dir)?;
    let eval = json!({ "dev": valid, "test": test, "epoch_loss": report.epoch_loss });
    std::fs::write(staging.file("eval.json"), serde_json::to_vec_pretty(&eval)?)?;
    let summary = json!({
        "kind": model.kind(),
        "d": model.d(),
        "checksum": model.checksum(),
        "final_loss": report.epoch_loss.last(),
        "dev": valid.values,
        "test": test.values,
    });
    let artifact = store.commit(
        staging,
        record(Kind::Model, &[("dataset", &dataset_art)], to_value(&cfg.model)?, summary),
    )?;
    Ok(Outcome::new("train-rec", &artifact))
}

fn load_model(store: &ArtifactStore, model_art: &Artifact) -> CliResult<(Artifact, PreparedDataset, RecModel)> {
    let dataset_art = store.input(model_art, "dataset")?;
    let dataset = PreparedDataset::load(&dataset_art.path)?;
    let model = RecModel::load(&model_art.path, &dataset.split)?;
    Ok((dataset_art, dataset, model))
}

pub fn dump(store: &ArtifactStore) -> CliResult<Outcome> {
    let model_art = store.latest(Kind::Model)?;
    let (_, dataset, model) = load_model(store, &model_art)?;
    let staging = store.stage(Kind::Dump)?;
    let train = dump_activations(&model, &dataset.split, Partition::Train, &staging.file(TRAIN_DUMP))?;
    let test = dump_activations(&model, &dataset.split, Partition::Test, &staging.file(TEST_DUMP))?;
    let summary = json!({
        "d": train.d,
        "train_records": train.len(),
        "test_records": test.len(),
        "model_kind": model.kind(),
    });
    let artifact = store.commit(staging, record(Kind::Dump, &[("model", &model_art)], json!({}), summary))?;
    Ok(Outcome::new("dump-activations", &artifact))
}

fn load_dumps(dump_art: &Artifact) -> CliResult<(ActivationDump, ActivationDump)> {
    Ok((
        ActivationDump::load(&dump_art.file(TRAIN_DUMP))?,
        ActivationDump::load(&dump_art.file(TEST_DUMP))?,
    ))
}

fn sae_config(cfg: &RunConfig, d: usize) -> SaeConfig {
    SaeConfig { d, ..cfg.sae.clone() }
}

pub fn train_sae(store: &ArtifactStore, cfg: &RunConfig) -> CliResult<Outcome> {
    let dump_art = store.latest(Kind::Dump)?;
    let (train_dump, test_dump) = load_dumps(&dump_art)?;
    let sae_cfg = sae_config(cfg, train_dump.d);
    let staging = store.stage(Kind::Sae)?;
    let data = train_dump.matrix();
    let (sae, report) = if sae_cfg.checkpoint_every.is_some() {
        train_checkpointed(&data, &sae_cfg, &staging.file("checkpoints"), &dump_art.hash)?
    } else {
        train(&data, &sae_cfg)?
    };
    sae.save(&staging.dir, &dump_art.hash)?;
    std::fs::write(staging.file("report.json"), serde_json::to_vec(&report)?)?;
    let heldout = test_dump.matrix();
    let summary = json!({
        "n_latents": sae.n_latents(),
        "k": sae.k(),
        "steps": report.steps,
        "dead_fraction": report.final_dead_fraction,
        "test_mse": reconstruction_mse(&sae, &heldout),
        "test_relative_error": relative_error(&sae, &heldout),
        "checksum": sae.checksum(),
    });
    let artifact = store.commit(staging, record(Kind::Sae, &[("dump", &dump_art)], to_value(&sae_cfg)?, summary))?;
    Ok(Outcome::new("train-sae", &artifact))
}

pub fn sweep(store: &ArtifactStore, cfg: &RunConfig) -> CliResult<Outcome> {
    let dump_art = store.latest(Kind::Dump)?;
    let model_art = store.input(&dump_art, "model")?;
    let (_, dataset, model) = load_model(store, &model_art)?;
    let (train_dump, test_dump) = load_dumps(&dump_art)?;
    let (data, heldout) = (train_dump.matrix(), test_dump.matrix());
    if cfg.sweep.scales.is_empty() || cfg.sweep.ks.is_empty() {
        return Err(CliError::Config("sweep needs at least one scale and one k".into()));
    }
    let mut rows = Vec::new();
    let mut cells: Vec<(String, Artifact)> = Vec::new();
    for &scale in &cfg.sweep.scales {
        for &k in &cfg.sweep.ks {
            let sae_cfg = SaeConfig {
                scale,
                k,
                ..sae_config(cfg, train_dump.d)
            };
            let mut row = SweepRow {
                scale,
                k,
                n_latents: sae_cfg.n_latents(),
                ..SweepRow::default()
            };
            match sweep_cell(store, &dump_art, &model, &dataset, &data, &heldout, &sae_cfg, &mut row) {
                Ok(art) => cells.push((format!("sae_s{scale}_k{k}"), art)),
                Err(e) => row.error = Some(e.to_string()),
            }
            rows.push(row);
        }
    }
    let staging = store.stage(Kind::Sweep)?;
    let refs: BTreeMap<&str, String> = cells.iter().map(|(r, a)| (r.as_str(), a.reference())).collect();
    std::fs::write(staging.file("frontier.json"), serde_json::to_vec_pretty(&json!({ "rows": rows, "artifacts": refs }))?)?;
    std::fs::write(staging.file("frontier.csv"), frontier_csv(&rows))?;
    let mut inputs: Vec<(&str, &Artifact)> = vec![("dump", &dump_art)];
    inputs.extend(cells.iter().map(|(r, a)| (r.as_str(), a)));
    let summary = json!({ "cells": rows.len(), "failed": rows.iter().filter(|r| r.error.is_some()).count(), "rows": rows });
    let artifact = store.commit(staging, record(Kind::Sweep, &inputs, to_value(&cfg.sweep)?, summary))?;
    Ok(Outcome::new("sweep", &artifact))
}

#[allow(clippy::too_many_arguments)]
fn sweep_cell(
    store: &ArtifactStore,
    dump_art: &Artifact,
    model: &RecModel,
    dataset: &PreparedDataset,
    data: &recprobe::tape::Tensor,
    heldout: &recprobe::tape::Tensor,
    sae_cfg: &SaeConfig,
    row: &mut SweepRow,
) -> CliResult<Artifact> {
    let (sae, report) = train(data, sae_cfg)?;
    row.mse = Some(reconstruction_mse(&sae, heldout));
    row.relative_error = Some(relative_error(&sae, heldout));
    row.dead_fraction = Some(report.final_dead_fraction);
    let retention = downstream_retention(model, &dataset.split, &sae, Partition::Test, &DEFAULT_CUTOFFS)?;
    row.downstream = retention.replaced.values.clone();
    for (key, ratio) in &retention.ratio {
        row.downstream.insert(format!("retention {key}"), *ratio);
    }
    let staging = store.stage(Kind::Sae)?;
    sae.save(&staging.dir, &dump_art.hash)?;
    std::fs::write(staging.file("report.json"), serde_json::to_vec(&report)?)?;
    let summary = json!({
        "n_latents": sae.n_latents(),
        "k": sae.k(),
        "dead_fraction": report.final_dead_fraction,
        "test_mse": row.mse,
        "test_relative_error": row.relative_error,
        "checksum": sae.checksum(),
    });
    store.commit_with(
        staging,
        record(Kind::Sae, &[("dump", dump_art)], to_value(sae_cfg)?, summary),
        false,
    )
}

fn frontier_csv(rows: &[SweepRow]) -> String {
    let mut keys: Vec<&String> = rows.iter().flat_map(|r| r.downstream.keys()).collect();
    keys.sort();
    keys.dedup();
    let mut out = String::from("scale,k,n_latents,mse,relative_error,dead_fraction");
    for k in &keys {
        out.push(',');
        out.push_str(k);
    }
    out.push_str(",error\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}",
            r.scale,
            r.k,
            r.n_latents,
            opt(r.mse),
            opt(r.relative_error),
            opt(r.dead_fraction)
        ));
        for k in &keys {
            out.push(',');
            out.push_str(&opt(r.downstream.get(*k).copied()));
        }
        out.push(',');
        out.push_str(&r.error.as_deref().unwrap_or_default().replace([',', '\n'], " "));
        out.push('\n');
    }
    out
}

/// The chat client selected by the configuration.
pub fn llm_client(cfg: &RunConfig) -> CliResult<Box<dyn LlmClient>> {
    match cfg.llm.provider {
        LlmProvider::Stub => Ok(Box::new(StubLlm)),
        LlmProvider::Http => {
            let mut http = cfg.llm.http.clone();
            if http.endpoint.is_empty() {
                return Err(CliError::Config("llm.endpoint is required for the http provider".into()));
            }
            if http.api_key.is_none() {
                http.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
            }
            Ok(Box::new(HttpChatClient::new(http)))
        }
    }
}

fn templates(cfg: &RunConfig) -> CliResult<TemplateSet> {
    let p = &cfg.pipeline;
    match &p.template_dir {
        Some(dir) => Ok(TemplateSet::load(dir, &p.template_version)?),
        None if p.template_version == BUILTIN_VERSION => Ok(TemplateSet::builtin()),
        None => Err(CliError::Config(format!(
            "template version {:?} needs pipeline.template_dir",
            p.template_version
        ))),
    }
}

/// Configuration recorded for LLM-backed artifacts; never includes the key.
fn llm_record(cfg: &RunConfig) -> CliResult<Value> {
    let mut llm = cfg.llm.clone();
    llm.http.api_key = None;
    Ok(json!({ "pipeline": cfg.pipeline, "llm": llm }))
}

pub fn interpret(store: &ArtifactStore, cfg: &RunConfig) -> CliResult<Outcome> {
    let (sae_art, dump_art) = if cfg.pipeline.base_model {
        (None, store.latest(Kind::Dump)?)
    } else {
        let sae_art = store.latest(Kind::Sae)?;
        let dump_art = store.input(&sae_art, "dump")?;
        (Some(sae_art), dump_art)
    };
    let model_art = store.input(&dump_art, "model")?;
    let dataset = PreparedDataset::load(&store.input(&model_art, "dataset")?.path)?;
    let test_dump = ActivationDump::load(&dump_art.file(TEST_DUMP))?;
    let table = match &sae_art {
        Some(a) => ActivationTable::from_sae(&SaeModel::load(&a.path)?, &test_dump)?,
        None => ActivationTable::from_raw(&test_dump)?,
    };
    let templates = templates(cfg)?;
    let llm = llm_client(cfg)?;
    let ctx = CaseContext::new(&test_dump, &dataset.meta);
    let catalog = run_pipeline(&table, &ctx, &templates, llm.as_ref(), &cfg.pipeline.pipeline)?;
    let staging = store.stage(Kind::Catalog)?;
    catalog.save(&staging.dir)?;
    let s = &catalog.summary;
    let summary = json!({
        "mode": if sae_art.is_some() { "sae" } else { "base" },
        "n_latents": s.n_latents,
        "eligible": s.eligible,
        "concepts": catalog.concepts.len(),
        "skipped": s.skipped.len(),
        "failures": s.failures.len(),
        "bands": s.bands,
        "llm": s.llm,
        "template_version": s.template_version,
    });
    let mut inputs = vec![("dump", &dump_art)];
    if let Some(a) = &sae_art {
        inputs.push(("sae", a));
    }
    let artifact = store.commit(staging, record(Kind::Catalog, &inputs, llm_record(cfg)?, summary))?;
    Ok(Outcome::new("interpret", &artifact))
}

/// A catalog with everything needed to resolve, measure and steer it.
pub struct ConceptContext {
    pub catalog_artifact: Artifact,
    pub catalog: Catalog,
    pub dataset: PreparedDataset,
    pub model: RecModel,
    pub dump_artifact: Artifact,
    pub dump: ActivationDump,
    pub sae_artifact: Option<Artifact>,
    pub sae: Option<SaeModel>,
    pub table: ActivationTable,
}

impl ConceptContext {
    pub fn load(store: &ArtifactStore, catalog_art: Artifact) -> CliResult<Self> {
        let catalog = Catalog::load(&catalog_art.path)?;
        let dump_art = store.input(&catalog_art, "dump")?;
        let sae_art = match catalog_art.record.inputs.contains_key("sae") {
            true => Some(store.input(&catalog_art, "sae")?),
            false => None,
        };
        let model_art = store.input(&dump_art, "model")?;
        let (_, dataset, model) = load_model(store, &model_art)?;
        let dump = ActivationDump::load(&dump_art.file(TEST_DUMP))?;
        let sae = sae_art.as_ref().map(|a| SaeModel::load(&a.path)).transpose()?;
        let table = match &sae {
            Some(s) => ActivationTable::from_sae(s, &dump)?,
            None => ActivationTable::from_raw(&dump)?,
        };
        Ok(Self {
            catalog_artifact: catalog_art,
            catalog,
            dataset,
            model,
            dump_artifact: dump_art,
            dump,
            sae_artifact: sae_art,
            sae,
            table,
        })
    }

    pub fn case_context(&self) -> CaseContext<'_> {
        CaseContext::new(&self.dump, &self.dataset.meta)
    }

    /// The most confident concept; ties go to the more frequent latent, then
    /// the lower id.
    pub fn best_latent(&self) -> Option<usize> {
        self.catalog
            .concepts
            .iter()
            .max_by(|a, b| {
                (a.correct * b.total)
                    .cmp(&(b.correct * a.total))
                    .then(a.firing_count.cmp(&b.firing_count))
                    .then(b.latent.cmp(&a.latent))
            })
            .map(|c| c.latent)
    }
}

pub fn verify_concepts(store: &ArtifactStore, cfg: &RunConfig) -> CliResult<Outcome> {
    let ctx = ConceptContext::load(store, store.latest(Kind::Catalog)?)?;
    let templates = templates(cfg)?;
    let llm = llm_client(cfg)?;
    let cases = ctx.case_context();
    let mut lines = String::new();
    let mut ratios = Vec::new();
    let mut unchanged = 0usize;
    for c in &ctx.catalog.concepts {
        let set = LatentCaseSet {
            latent: c.latent,
            construct: c.construct.clone(),
            verify_pos: c.verify_pos.clone(),
            verify_neg: c.verify_neg.clone(),
            a_max: c.a_max,
            mean_pos_activation: c.mean_pos_activation,
        };
        let v = verify_concept(&c.description, &set, &cases, &templates, llm.as_ref())?;
        unchanged += usize::from(v.correct == c.correct && v.total == c.total);
        ratios.push((v.correct, v.total));
        let line = json!({
            "latent": c.latent,
            "description": c.description,
            "correct": v.correct,
            "total": v.total,
            "confidence": v.confidence,
            "catalog_confidence": c.confidence,
            "predictions": v.predictions,
        });
        lines.push_str(&serde_json::to_string(&line)?);
        lines.push('\n');
    }
    let staging = store.stage(Kind::Verification)?;
    std::fs::write(staging.file("verification.jsonl"), lines)?;
    let summary = json!({
        "concepts": ratios.len(),
        "bands": BandCounts::from_ratios(ratios),
        "unchanged": unchanged,
    });
    let artifact = store.commit(
        staging,
        record(Kind::Verification, &[("catalog", &ctx.catalog_artifact)], llm_record(cfg)?, summary),
    )?;
    Ok(Outcome::new("verify-concepts", &artifact))
}

pub fn metrics(store: &ArtifactStore, cfg: &RunConfig) -> CliResult<Outcome> {
    let ctx = ConceptContext::load(store, store.latest(Kind::Catalog)?)?;
    let geometry = ConceptGeometry::build(
        &ctx.catalog,
        &ctx.table,
        &ctx.dump,
        ctx.model.item_embeddings(),
        cfg.metrics.members,
        cfg.metrics.min_confidence,
    )?;
    let reconstruction = match &ctx.sae {
        Some(sae) => {
            let retention = downstream_retention(&ctx.model, &ctx.dataset.split, sae, Partition::Test, &DEFAULT_CUTOFFS)?;
            Some(MetricsReport::reconstruction(sae, &ctx.dump, Some(retention))?)
        }
        None => None,
    };
    let report = MetricsReport {
        reconstruction,
        interpretation: MetricsReport::interpretation(&ctx.catalog, &geometry),
    };
    let staging = store.stage(Kind::Metrics)?;
    report.save(&staging.dir)?;
    let summary: BTreeMap<String, String> = report.csv_rows().into_iter().collect();
    let artifact = store.commit(
        staging,
        record(Kind::Metrics, &[("catalog", &ctx.catalog_artifact)], to_value(&cfg.metrics)?, to_value(&summary)?),
    )?;
    Ok(Outcome::new("metrics", &artifact))
}

pub fn steer(store: &ArtifactStore, cfg: &RunConfig) -> CliResult<Outcome> {
    let ctx = ConceptContext::load(store, store.latest(Kind::Catalog)?)?;
    let sae = ctx.sae.as_ref().ok_or(Kind::Sae.missing())?;
    let latent = match cfg.steer.latent {
        Some(l) => l,
        None => ctx
            .best_latent()
            .ok_or_else(|| CliError::Config("the catalog has no concepts; pass --latent".into()))?,
    };
    let n_users = ctx.dataset.split.num_users;
    let users: Vec<usize> = (0..cfg.steer.users.unwrap_or(n_users).min(n_users)).collect();
    let mut report = steering_report(
        &ctx.model,
        &ctx.dataset.split,
        sae,
        &ctx.table,
        &ctx.dump,
        latent,
        &cfg.steer.factors,
        &users,
        cfg.steer.top_k,
        cfg.steer.max_diffs,
    )?;
    report.description = ctx.catalog.concept(latent).map(|c| c.description.clone());
    let staging = store.stage(Kind::Steering)?;
    std::fs::write(staging.file("steering.json"), serde_json::to_vec_pretty(&report)?)?;
    let summary = json!({
        "latent": report.latent,
        "description": report.description,
        "factors": report.factors,
        "hit_rates": report.hit_rates,
        "users": report.users,
        "concept_items": report.concept_items.len(),
    });
    let artifact = store.commit(
        staging,
        record(Kind::Steering, &[("catalog", &ctx.catalog_artifact)], to_value(&cfg.steer)?, summary),
    )?;
    Ok(Outcome::new("steer", &artifact))
}

pub fn annotations(store: &ArtifactStore) -> CliResult<Outcome> {
    let ctx = ConceptContext::load(store, store.latest(Kind::Catalog)?)?;
    let staging = store.stage(Kind::Annotations)?;
    export_annotations(&ctx.catalog, &ctx.case_context(), &staging.file("annotations.csv"))?;
    let summary = json!({ "rows": ctx.catalog.concepts.len(), "file": "annotations.csv" });
    let artifact = store.commit(
        staging,
        record(Kind::Annotations, &[("catalog", &ctx.catalog_artifact)], json!({}), summary),
    )?;
    Ok(Outcome::new("export-annotations", &artifact))
}

pub fn verify_store(store: &ArtifactStore) -> CliResult<Outcome> {
    let report = store.verify()?;
    if !report.ok() {
        return Err(CliError::Store(format!(
            "{} problem(s): {}",
            report.problems.len(),
            report.problems.join("; ")
        )));
    }
    Ok(Outcome {
        command: "verify",
        artifact: None,
        summary: to_value(&report)?,
    })
}

/// Runs every stage in order.
pub fn run_all(store: &ArtifactStore, cfg: &RunConfig) -> CliResult<Vec<Outcome>> {
    Ok(vec![
        prepare_data(store, cfg)?,
        train_rec(store, cfg)?,
        dump(store)?,
        train_sae(store, cfg)?,
        interpret(store, cfg)?,
        metrics(store, cfg)?,
        steer(store, cfg)?,
        annotations(store)?,
    ])
}
