// SPDX-License-Identifier: MIT OR Apache-2.0

//! Latent interventions: scale one latent of a user's code, decode, and
//! rank items from the edited probe vector.


use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conceptlab::ActivationTable;
use crate::corpus::SplitDataset;
use crate::error::{Error, Result};
use crate::recmodels::{ActivationDump, RecModel};
use crate::sae::SaeModel;

pub const DEFAULT_TOP_K: usize = 10;
pub const DEFAULT_FACTORS: [f32; 3] = [-10.0, 1.0, 10.0];

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteeringRequest {
    pub user: usize,
    pub latent: usize,
    pub factor: f32,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

/// Where the scaled activation came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSource {
    /// The user's own activation of the latent.
    User,
    /// The latent's mean positive activation on the test dump.
    MeanPositive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteeringResult {
    pub user: usize,
    pub latent: usize,
    pub factor: f32,
    /// Ranking from the unmodified probe vector.
    pub original: Vec<usize>,
    /// Ranking from the unedited reconstruction.
    pub reconstructed: Vec<usize>,
    pub steered: Vec<usize>,
    pub activation_before: f32,
    pub activation_after: f32,
    pub reference: f32,
    pub reference_source: ReferenceSource,
}

/// Per-latent mean positive activation on the test dump, the fallback
/// reference for users who do not activate a latent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentStats {
    pub mean_positive: Vec<f32>,
}

impl LatentStats {
    pub fn from_table(table: &ActivationTable) -> Self {
        Self {
            mean_positive: (0..table.n_latents()).map(|j| table.mean_positive(j) as f32).collect(),
        }
    }
}

/// Items predicted for test cases on which a latent fires.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptItemSet {
    pub latent: usize,
    pub items: BTreeSet<usize>,
}

impl ConceptItemSet {
    pub fn from_table(table: &ActivationTable, dump: &ActivationDump, latent: usize) -> Result<Self> {
        if latent >= table.n_latents() {
            return Err(Error::invalid("concept items", format!("latent {latent} out of range")));
        }
        let items = table
            .column(latent)
            .iter()
            .map(|&(r, _)| {
                dump.records
                    .get(r as usize)
                    .map(|rec| rec.predicted)
                    .ok_or_else(|| Error::invalid("concept items", format!("record {r} missing from dump")))
            })
            .collect::<Result<_>>()?;
        Ok(Self { latent, items })
    }
}

/// The probe vector for `user` as dumped for the test partition.
pub fn user_probe(model: &RecModel, split: &SplitDataset, user: usize) -> Result<Vec<f32>> {
    if user >= split.num_users {
        return Err(Error::invalid("steer", format!("unknown user {user}")));
    }
    model.probe(user, split.history(user))
}

pub fn steer(
    model: &RecModel,
    split: &SplitDataset,
    sae: &SaeModel,
    stats: &LatentStats,
    req: &SteeringRequest,
) -> Result<SteeringResult> {
    if !req.factor.is_finite() {
        return Err(Error::invalid("steer", "factor must be finite"));
    }
    if req.latent >= sae.n_latents() || req.latent >= stats.mean_positive.len() {
        return Err(Error::invalid("steer", format!("latent {} out of range", req.latent)));
    }
    if req.top_k == 0 {
        return Err(Error::invalid("steer", "top_k must be positive"));
    }
    if sae.d() != model.d() {
        return Err(Error::Shape {
            op: "steer",
            lhs: vec![model.d()],
            rhs: vec![sae.d()],
        });
    }
    let s = user_probe(model, split, req.user)?;
    let mut z = sae.encode(&s);
    let before = z[req.latent];
    let (reference, reference_source) = if before > 0.0 {
        (before, ReferenceSource::User)
    } else {
        let mean = stats.mean_positive[req.latent];
        if mean <= 0.0 {
            return Err(Error::Latent {
                latent: req.latent,
                reason: "no reference activation".into(),
            });
        }
        (mean, ReferenceSource::MeanPositive)
    };
    let reconstructed = model.top_n(split, req.user, &sae.decode(&z), req.top_k);
    let after = req.factor * reference;
    z[req.latent] = after;
    let steered_probe = sae.decode(&z);
    Ok(SteeringResult {
        user: req.user,
        latent: req.latent,
        factor: req.factor,
        original: model.top_n(split, req.user, &s, req.top_k),
        reconstructed,
        steered: model.top_n(split, req.user, &steered_probe, req.top_k),
        activation_before: before,
        activation_after: after,
        reference,
        reference_source,
    })
}

/// Fraction of `users` whose steered top-`top_k` contains a concept item.
#[allow(clippy::too_many_arguments)]
pub fn steering_hit_rate(
    model: &RecModel,
    split: &SplitDataset,
    sae: &SaeModel,
    stats: &LatentStats,
    concept: &ConceptItemSet,
    factor: f32,
    users: &[usize],
    top_k: usize,
) -> Result<f64> {
    if users.is_empty() {
        return Err(Error::invalid("steering hit rate", "empty user sample"));
    }
    if concept.items.is_empty() {
        return Err(Error::invalid("steering hit rate", format!("latent {} has no concept items", concept.latent)));
    }
    let hits = users
        .par_iter()
        .map(|&user| {
            let r = steer(
                model,
                split,
                sae,
                stats,
                &SteeringRequest {
                    user,
                    latent: concept.latent,
                    factor,
                    top_k,
                },
            )?;
            Ok(r.steered.iter().any(|i| concept.items.contains(i)))
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / users.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserDiff {
    pub user: usize,
    pub factor: f32,
    pub original: Vec<usize>,
    pub steered: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteeringReport {
    pub latent: usize,
    pub description: Option<String>,
    pub factors: Vec<f32>,
    pub hit_rates: Vec<f64>,
    pub users: usize,
    pub concept_items: Vec<usize>,
    pub diffs: Vec<UserDiff>,
    pub population: String,
    pub membership: String,
    pub reference: String,
}

/// Hit@`top_k` for each factor plus up to `max_diffs` per-user rankings
/// that changed.
#[allow(clippy::too_many_arguments)]
pub fn steering_report(
    model: &RecModel,
    split: &SplitDataset,
    sae: &SaeModel,
    table: &ActivationTable,
    dump: &ActivationDump,
    latent: usize,
    factors: &[f32],
    users: &[usize],
    top_k: usize,
    max_diffs: usize,
) -> Result<SteeringReport> {
    let stats = LatentStats::from_table(table);
    let concept = ConceptItemSet::from_table(table, dump, latent)?;
    let mut hit_rates = Vec::with_capacity(factors.len());
    let mut diffs = Vec::new();
    for &factor in factors {
        hit_rates.push(steering_hit_rate(model, split, sae, &stats, &concept, factor, users, top_k)?);
        for &user in users {
            if diffs.len() >= max_diffs {
                break;
            }
            let r = steer(model, split, sae, &stats, &SteeringRequest { user, latent, factor, top_k })?;
            if r.steered != r.original {
                diffs.push(UserDiff {
                    user,
                    factor,
                    original: r.original,
                    steered: r.steered,
                });
            }
        }
    }
    Ok(SteeringReport {
        latent,
        description: None,
        factors: factors.to_vec(),
        hit_rates,
        users: users.len(),
        concept_items: concept.items.into_iter().collect(),
        diffs,
        population: "all users given".into(),
        membership: "predicted items of test cases with level >= 1".into(),
        reference: "own activation when positive, else mean positive test activation".into(),
    })
}
