// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reconstruction quality, ranking retention under reconstruction, concept
//! geometry and confidence bands.

mod geometry;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conceptlab::{BandCounts, Catalog};
use crate::corpus::{Partition, SplitDataset};
use crate::error::{Error, Result};
use crate::recmodels::{evaluate, ActivationDump, EvalMetrics, RecModel};
use crate::sae::{relative_error, SaeModel};

pub use geometry::{
    cosine, inter_similarity, intra_similarity, item_activations, silhouette, ConceptGeometry, ConceptMembers,
    DEFAULT_MEMBERS, GEOMETRY_MIN_CONFIDENCE,
};

/// Mean over records of `‖s − ŝ‖² / d`.
pub fn reconstruction_mse(sae: &SaeModel, dump: &ActivationDump) -> Result<f64> {
    check_width(sae, dump)?;
    if dump.is_empty() {
        return Ok(0.0);
    }
    let d = sae.d() as f64;
    let total: f64 = dump
        .records
        .iter()
        .map(|r| {
            let rec = sae.reconstruct(&r.activation);
            r.activation
                .iter()
                .zip(&rec)
                .map(|(&a, &b)| ((a - b) as f64).powi(2))
                .sum::<f64>()
                / d
        })
        .sum();
    Ok(total / dump.len() as f64)
}

fn check_width(sae: &SaeModel, dump: &ActivationDump) -> Result<()> {
    if dump.d != sae.d() {
        return Err(Error::Shape {
            op: "reconstruction",
            lhs: vec![dump.d],
            rhs: vec![sae.d()],
        });
    }
    Ok(())
}

/// Ranking metrics of the unmodified model and with every probe replaced by
/// its reconstruction, plus the per-metric ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Retention {
    pub original: EvalMetrics,
    pub replaced: EvalMetrics,
    pub ratio: BTreeMap<String, f64>,
}

pub fn downstream_retention(
    model: &RecModel,
    split: &SplitDataset,
    sae: &SaeModel,
    partition: Partition,
    cutoffs: &[usize],
) -> Result<Retention> {
    if sae.d() != model.d() {
        return Err(Error::Shape {
            op: "downstream_retention",
            lhs: vec![model.d()],
            rhs: vec![sae.d()],
        });
    }
    let original = evaluate(model, split, partition, cutoffs, None)?;
    let replace = |s: &[f32]| sae.reconstruct(s);
    let replaced = evaluate(model, split, partition, cutoffs, Some(&replace))?;
    let ratio = original
        .values
        .iter()
        .filter_map(|(k, &v)| {
            let r = replaced.values.get(k)?;
            (v > 0.0).then(|| (k.clone(), r / v))
        })
        .collect();
    Ok(Retention {
        original,
        replaced,
        ratio,
    })
}

pub fn concept_band_counts(catalog: &Catalog) -> BandCounts {
    BandCounts::from_ratios(catalog.concepts.iter().map(|c| (c.correct, c.total)))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionBlock {
    pub records: usize,
    pub mse: f64,
    pub relative_error: f64,
    pub retention: Option<Retention>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InterpretationBlock {
    pub bands: BandCounts,
    pub eligible: usize,
    pub n_latents: usize,
    pub min_confidence: f64,
    pub members_per_concept: usize,
    pub qualifying_concepts: usize,
    pub intra_similarity: Option<f64>,
    pub inter_similarity: Option<f64>,
    pub silhouette: Option<f64>,
    /// How a concept is represented when comparing concepts.
    pub inter_representative: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Absent when latents are raw activation dimensions.
    pub reconstruction: Option<ReconstructionBlock>,
    pub interpretation: InterpretationBlock,
}

impl MetricsReport {
    pub fn reconstruction(sae: &SaeModel, dump: &ActivationDump, retention: Option<Retention>) -> Result<ReconstructionBlock> {
        check_width(sae, dump)?;
        Ok(ReconstructionBlock {
            records: dump.len(),
            mse: reconstruction_mse(sae, dump)?,
            relative_error: relative_error(sae, &dump.matrix()),
            retention,
        })
    }

    pub fn interpretation(catalog: &Catalog, geometry: &ConceptGeometry) -> InterpretationBlock {
        InterpretationBlock {
            bands: concept_band_counts(catalog),
            eligible: catalog.summary.eligible,
            n_latents: catalog.summary.n_latents,
            min_confidence: geometry.min_confidence,
            members_per_concept: geometry.members_per_concept,
            qualifying_concepts: geometry.concepts.len(),
            intra_similarity: intra_similarity(geometry),
            inter_similarity: inter_similarity(geometry),
            silhouette: silhouette(geometry),
            inter_representative: "centroid".into(),
        }
    }

    /// Flat `metric,value` rows; undefined values are left empty.
    pub fn csv_rows(&self) -> Vec<(String, String)> {
        let mut rows = Vec::new();
        let mut push = |k: &str, v: Option<f64>| rows.push((k.to_string(), v.map(|x| x.to_string()).unwrap_or_default()));
        let r = self.reconstruction.as_ref();
        push("reconstruction.records", r.map(|r| r.records as f64));
        push("reconstruction.mse", r.map(|r| r.mse));
        push("reconstruction.relative_error", r.map(|r| r.relative_error));
        if let Some(ret) = r.and_then(|r| r.retention.as_ref()) {
            for (k, v) in &ret.original.values {
                push(&format!("ranking.original.{k}"), Some(*v));
            }
            for (k, v) in &ret.replaced.values {
                push(&format!("ranking.replaced.{k}"), Some(*v));
            }
            for (k, v) in &ret.ratio {
                push(&format!("ranking.retention.{k}"), Some(*v));
            }
        }
        let i = &self.interpretation;
        push("concepts.c_1_0", Some(i.bands.c_1_0 as f64));
        push("concepts.c_ge_0_9", Some(i.bands.c_ge_0_9 as f64));
        push("concepts.c_ge_0_8", Some(i.bands.c_ge_0_8 as f64));
        push("concepts.all", Some(i.bands.all as f64));
        push("concepts.qualifying", Some(i.qualifying_concepts as f64));
        push("geometry.intra_similarity", i.intra_similarity);
        push("geometry.inter_similarity", i.inter_similarity);
        push("geometry.silhouette", i.silhouette);
        rows
    }

    /// Writes `metrics.json` and `metrics.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("metrics.json");
        std::fs::write(&path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(&path, e))?;
        let path = dir.join("metrics.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        w.write_record(["metric", "value"]).map_err(|e| Error::Data(e.to_string()))?;
        for (k, v) in self.csv_rows() {
            w.write_record([k, v]).map_err(|e| Error::Data(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("metrics.json");
        let raw = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_slice(&raw)?)
    }
}
