// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::conceptlab::{ActivationTable, Catalog};
use crate::error::{Error, Result};
use crate::recmodels::ActivationDump;
use crate::tape::Tensor;

pub const DEFAULT_MEMBERS: usize = 5;
pub const GEOMETRY_MIN_CONFIDENCE: f64 = 0.8;

/// Cosine similarity, or 0 when either vector is zero.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Per predicted item, the strongest activation of `latent` among records
/// predicting it; strongest first, ties by item id.
pub fn item_activations(table: &ActivationTable, dump: &ActivationDump, latent: usize) -> Vec<(usize, f32)> {
    let mut best: BTreeMap<usize, f32> = BTreeMap::new();
    for &(r, v) in table.column(latent) {
        let item = dump.records[r as usize].predicted;
        let e = best.entry(item).or_insert(v);
        *e = e.max(v);
    }
    let mut items: Vec<(usize, f32)> = best.into_iter().collect();
    items.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    items
}

/// Member items of one concept, strongest first, with their embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptMembers {
    pub latent: usize,
    pub items: Vec<usize>,
    pub vectors: Vec<Vec<f32>>,
}

impl ConceptMembers {
    pub fn centroid(&self) -> Option<Vec<f32>> {
        let first = self.vectors.first()?;
        let mut c = vec![0.0f64; first.len()];
        for v in &self.vectors {
            for (a, &x) in c.iter_mut().zip(v) {
                *a += x as f64;
            }
        }
        let n = self.vectors.len() as f64;
        Some(c.into_iter().map(|a| (a / n) as f32).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptGeometry {
    pub min_confidence: f64,
    pub members_per_concept: usize,
    pub concepts: Vec<ConceptMembers>,
}

impl ConceptGeometry {
    /// Members of every concept at or above `min_confidence`: its `m` most
    /// activated predicted items, embedded with `item_table` rows.
    pub fn build(
        catalog: &Catalog,
        table: &ActivationTable,
        dump: &ActivationDump,
        item_table: &Tensor,
        m: usize,
        min_confidence: f64,
    ) -> Result<Self> {
        if table.n_records() != dump.len() {
            return Err(Error::invalid("concept geometry", "activation table and dump differ in length"));
        }
        let mut concepts = Vec::new();
        for c in catalog.concepts.iter().filter(|c| c.confidence >= min_confidence - 1e-9) {
            if c.latent >= table.n_latents() {
                return Err(Error::invalid("concept geometry", format!("latent {} out of range", c.latent)));
            }
            let items: Vec<usize> = item_activations(table, dump, c.latent)
                .into_iter()
                .take(m)
                .map(|(i, _)| i)
                .collect();
            let vectors = items
                .iter()
                .map(|&i| {
                    if i >= item_table.rows() {
                        Err(Error::invalid("concept geometry", format!("item {i} has no embedding")))
                    } else {
                        Ok(item_table.row(i).to_vec())
                    }
                })
                .collect::<Result<_>>()?;
            concepts.push(ConceptMembers {
                latent: c.latent,
                items,
                vectors,
            });
        }
        Ok(Self {
            min_confidence,
            members_per_concept: m,
            concepts,
        })
    }

    pub fn from_members(concepts: Vec<ConceptMembers>) -> Self {
        let m = concepts.iter().map(|c| c.vectors.len()).max().unwrap_or(0);
        Self {
            min_confidence: GEOMETRY_MIN_CONFIDENCE,
            members_per_concept: m,
            concepts,
        }
    }
}

/// Mean cosine between the two strongest items of each concept having two.
pub fn intra_similarity(g: &ConceptGeometry) -> Option<f64> {
    let sims: Vec<f64> = g
        .concepts
        .iter()
        .filter(|c| c.vectors.len() >= 2)
        .map(|c| cosine(&c.vectors[0], &c.vectors[1]))
        .collect();
    (!sims.is_empty()).then(|| sims.iter().sum::<f64>() / sims.len() as f64)
}

/// Mean cosine between concept centroids over unordered pairs.
pub fn inter_similarity(g: &ConceptGeometry) -> Option<f64> {
    let centroids: Vec<Vec<f32>> = g.concepts.iter().filter_map(ConceptMembers::centroid).collect();
    if centroids.len() < 2 {
        return None;
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            total += cosine(&centroids[i], &centroids[j]);
            pairs += 1;
        }
    }
    Some(total / pairs as f64)
}

/// Silhouette over member items with cosine distance, clusters being
/// concepts with at least two members.
pub fn silhouette(g: &ConceptGeometry) -> Option<f64> {
    let clusters: Vec<&ConceptMembers> = g.concepts.iter().filter(|c| c.vectors.len() >= 2).collect();
    if clusters.len() < 2 {
        return None;
    }
    let points: Vec<(usize, &[f32])> = clusters
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| c.vectors.iter().map(move |v| (ci, v.as_slice())))
        .collect();
    let n = points.len();
    let mut dist = vec![0.0f64; n * n];
    let mut spread = false;
    for i in 0..n {
        for j in i + 1..n {
            let d = 1.0 - cosine(points[i].1, points[j].1);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
            spread |= d > 1e-12;
        }
    }
    if !spread {
        return None;
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0f64; clusters.len()];
        let mut counts = vec![0usize; clusters.len()];
        for j in 0..n {
            if j != i {
                sums[points[j].0] += dist[i * n + j];
                counts[points[j].0] += 1;
            }
        }
        let own = points[i].0;
        let a = sums[own] / counts[own] as f64;
        let b = (0..clusters.len())
            .filter(|&c| c != own)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        total += if m > 0.0 { (b - a) / m } else { 0.0 };
    }
    Some(total / n as f64)
}
