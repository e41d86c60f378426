// SPDX-License-Identifier: MIT OR Apache-2.0

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{flatten_text, ItemMeta};
use crate::error::{Error, Result};
use crate::hashing::mix_seed;
use crate::recmodels::ActivationDump;
use crate::sae::SaeModel;

/// Maps an activation onto the 0..=10 intensity scale relative to `a_max`.
/// Zero maps to 0 and any positive value to at least 1.
pub fn bin_level(a: f32, a_max: f32) -> Result<u8> {
    if !a.is_finite() || a < 0.0 {
        return Err(Error::invalid("bin_level", format!("activation {a} must be finite and nonnegative")));
    }
    if a == 0.0 {
        return Ok(0);
    }
    if !(a_max.is_finite() && a_max > 0.0) {
        return Err(Error::invalid("bin_level", format!("a_max {a_max} must be positive")));
    }
    let level = (10.0 * a as f64 / a_max as f64).ceil();
    Ok(level.clamp(1.0, 10.0) as u8)
}

/// Latent activations over a dump, stored column-wise with only positive
/// entries kept.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTable {
    n_records: usize,
    columns: Vec<Vec<(u32, f32)>>,
}

impl ActivationTable {
    /// Builds the table from per-record sparse rows `(latent, value)`.
    /// Nonpositive values are dropped.
    pub fn from_sparse_rows(n_latents: usize, rows: &[Vec<(usize, f32)>]) -> Result<Self> {
        let mut columns = vec![Vec::new(); n_latents];
        for (r, row) in rows.iter().enumerate() {
            for &(j, v) in row {
                if j >= n_latents {
                    return Err(Error::invalid("activation table", format!("latent {j} out of range")));
                }
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("activation of latent {j} on record {r}")));
                }
                if v > 0.0 {
                    columns[j].push((r as u32, v));
                }
            }
        }
        Ok(Self {
            n_records: rows.len(),
            columns,
        })
    }

    /// Encodes every record of `dump` through the autoencoder.
    pub fn from_sae(model: &SaeModel, dump: &ActivationDump) -> Result<Self> {
        if dump.d != model.d() {
            return Err(Error::Shape {
                op: "activation table",
                lhs: vec![dump.d],
                rhs: vec![model.d()],
            });
        }
        let rows: Vec<Vec<(usize, f32)>> = dump
            .records
            .par_iter()
            .map(|r| model.encode_sparse(&r.activation))
            .collect();
        Self::from_sparse_rows(model.n_latents(), &rows)
    }

    /// Treats each raw dimension, rectified, as a latent.
    pub fn from_raw(dump: &ActivationDump) -> Result<Self> {
        let rows: Vec<Vec<(usize, f32)>> = dump
            .records
            .iter()
            .map(|r| r.activation.iter().copied().enumerate().filter(|&(_, v)| v > 0.0).collect())
            .collect();
        Self::from_sparse_rows(dump.d, &rows)
    }

    pub fn n_latents(&self) -> usize {
        self.columns.len()
    }

    pub fn n_records(&self) -> usize {
        self.n_records
    }

    /// Positive activations of `latent` as `(record, value)` in record order.
    pub fn column(&self, latent: usize) -> &[(u32, f32)] {
        &self.columns[latent]
    }

    pub fn activation(&self, latent: usize, record: usize) -> f32 {
        let col = &self.columns[latent];
        match col.binary_search_by_key(&(record as u32), |&(r, _)| r) {
            Ok(i) => col[i].1,
            Err(_) => 0.0,
        }
    }

    pub fn firing_count(&self, latent: usize) -> usize {
        self.columns[latent].len()
    }

    pub fn a_max(&self, latent: usize) -> f32 {
        self.columns[latent].iter().fold(0.0, |m, &(_, v)| m.max(v))
    }

    pub fn mean_positive(&self, latent: usize) -> f64 {
        let col = &self.columns[latent];
        if col.is_empty() {
            return 0.0;
        }
        col.iter().map(|&(_, v)| v as f64).sum::<f64>() / col.len() as f64
    }

    /// Counts of records per level 0..=10.
    pub fn level_histogram(&self, latent: usize) -> [usize; 11] {
        let mut hist = [0usize; 11];
        let a_max = self.a_max(latent);
        hist[0] = self.n_records - self.columns[latent].len();
        for &(_, v) in &self.columns[latent] {
            // Values are positive and a_max is their maximum, so binning cannot fail.
            hist[bin_level(v, a_max).unwrap_or(10) as usize] += 1;
        }
        hist
    }
}

/// A case chosen for one latent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseRef {
    pub record: usize,
    pub activation: f32,
    pub level: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentCaseSet {
    pub latent: usize,
    pub construct: Vec<CaseRef>,
    pub verify_pos: Vec<CaseRef>,
    pub verify_neg: Vec<CaseRef>,
    pub a_max: f32,
    pub mean_pos_activation: f64,
}

/// A latent without enough activated or silent cases.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub latent: usize,
    pub activated: usize,
    pub zero: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Selection {
    Eligible(LatentCaseSet),
    Skipped(Skipped),
}

/// Picks the `2n` strongest cases (ties to the lower record), splits them
/// uniformly into construction and verification halves, and draws `n`
/// silent cases. Randomness is keyed on `(seed, latent)`.
pub fn select_cases(table: &ActivationTable, latent: usize, n: usize, seed: u64) -> Result<Selection> {
    if n == 0 {
        return Err(Error::invalid("select_cases", "n must be positive"));
    }
    if latent >= table.n_latents() {
        return Err(Error::invalid("select_cases", format!("latent {latent} out of range")));
    }
    let col = table.column(latent);
    let activated = col.len();
    let zero = table.n_records() - activated;
    if activated < 2 * n || zero < n {
        return Ok(Selection::Skipped(Skipped { latent, activated, zero }));
    }
    let a_max = table.a_max(latent);
    let mut ranked: Vec<(u32, f32)> = col.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(2 * n);

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, latent as u64));
    let mut slots: Vec<usize> = (0..2 * n).collect();
    slots.shuffle(&mut rng);
    let (mut first, mut second) = (slots[..n].to_vec(), slots[n..].to_vec());
    first.sort_unstable();
    second.sort_unstable();
    let pick = |ids: &[usize]| -> Result<Vec<CaseRef>> {
        ids.iter()
            .map(|&i| {
                let (record, activation) = ranked[i];
                Ok(CaseRef {
                    record: record as usize,
                    activation,
                    level: bin_level(activation, a_max)?,
                })
            })
            .collect()
    };
    let construct = pick(&first)?;
    let verify_pos = pick(&second)?;

    let mut silent = Vec::with_capacity(zero);
    let mut next = col.iter().map(|&(r, _)| r as usize).peekable();
    for r in 0..table.n_records() {
        if next.peek() == Some(&r) {
            next.next();
        } else {
            silent.push(r);
        }
    }
    let mut drawn = index::sample(&mut rng, silent.len(), n).into_vec();
    drawn.sort_unstable();
    let verify_neg = drawn
        .into_iter()
        .map(|i| CaseRef {
            record: silent[i],
            activation: 0.0,
            level: 0,
        })
        .collect();

    Ok(Selection::Eligible(LatentCaseSet {
        latent,
        construct,
        verify_pos,
        verify_neg,
        a_max,
        mean_pos_activation: table.mean_positive(latent),
    }))
}

/// A case resolved against item metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub record: usize,
    pub user: usize,
    pub history: Vec<usize>,
    pub history_titles: Vec<String>,
    pub predicted: usize,
    pub predicted_title: String,
    pub predicted_categories: Vec<String>,
    pub activation: f32,
    pub level: u8,
}

/// Read-only view of the records and item metadata cases refer to.
#[derive(Clone, Copy, Debug)]
pub struct CaseContext<'a> {
    pub dump: &'a ActivationDump,
    pub meta: &'a [ItemMeta],
}

impl<'a> CaseContext<'a> {
    pub fn new(dump: &'a ActivationDump, meta: &'a [ItemMeta]) -> Self {
        Self { dump, meta }
    }

    fn title(&self, item: usize) -> String {
        match self.meta.get(item) {
            Some(m) => flatten_text(&m.title),
            None => ItemMeta::placeholder(item).title,
        }
    }

    pub fn resolve(&self, case: &CaseRef) -> Result<Case> {
        let rec = self
            .dump
            .records
            .get(case.record)
            .ok_or_else(|| Error::invalid("resolve case", format!("record {} out of range", case.record)))?;
        let categories = self
            .meta
            .get(rec.predicted)
            .map(|m| m.categories.iter().map(|c| flatten_text(c)).collect())
            .unwrap_or_default();
        Ok(Case {
            record: case.record,
            user: rec.user,
            history: rec.history.clone(),
            history_titles: rec.history.iter().map(|&i| self.title(i)).collect(),
            predicted: rec.predicted,
            predicted_title: self.title(rec.predicted),
            predicted_categories: categories,
            activation: case.activation,
            level: case.level,
        })
    }
}
