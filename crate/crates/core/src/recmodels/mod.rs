// SPDX-License-Identifier: MIT OR Apache-2.0

//! Probeable recommenders.
//!
//! Every model scores an item as `dot(probe(user, history), item_repr[item])`.
//! The probe vector is the user representation right before that dot product;
//! it is what activation dumps record and what the sparse autoencoder
//! reconstructs.

mod bprmf;
mod dump;
mod eval;
mod lightgcn;
mod params;
mod seqattn;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bprmf::train_bprmf;
pub use dump::{
    dump_activations, manifest_path, split_hash, ActivationDump, ActivationRecord, DumpManifest, DUMP_MAGIC, DUMP_VERSION,
};
pub use eval::{evaluate, rank_of_target, EvalMetrics, ProbeMap, DEFAULT_CUTOFFS};
pub use lightgcn::{normalized_adjacency, train_lightgcn};
pub use params::ParamSet;
pub use seqattn::train_seqattn;

use crate::corpus::{batch_bpr_samples, BprTriple, SplitDataset};
use crate::error::{Error, Result};
use crate::hashing::mix_seed;
use crate::tape::{gemm_nt, Adam, AdamConfig, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Bprmf,
    Lightgcn,
    Seqattn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Bprmf => "bprmf",
            ModelKind::Lightgcn => "lightgcn",
            ModelKind::Seqattn => "seqattn",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bprmf" | "bpr" | "mf" => Ok(ModelKind::Bprmf),
            "lightgcn" | "gcn" => Ok(ModelKind::Lightgcn),
            "seqattn" | "sasrec" | "seq" => Ok(ModelKind::Seqattn),
            other => Err(Error::invalid("model kind", format!("unknown model kind {other:?}"))),
        }
    }
}

/// Hyperparameters shared by all three trainers; fields a model does not use
/// are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecConfig {
    pub d: usize,
    pub epochs: usize,
    pub lr: f32,
    pub l2: f32,
    pub batch_size: usize,
    pub seed: u64,
    pub init_std: f32,
    /// LightGCN propagation depth.
    pub layers: usize,
    /// Sequential model window.
    pub max_len: usize,
    pub heads: usize,
    pub blocks: usize,
    pub dropout: f32,
}

impl Default for RecConfig {
    fn default() -> Self {
        Self {
            d: 64,
            epochs: 30,
            lr: 1e-3,
            l2: 1e-6,
            batch_size: 256,
            seed: 0,
            init_std: 0.1,
            layers: 2,
            max_len: crate::corpus::DEFAULT_MAX_HISTORY,
            heads: 1,
            blocks: 1,
            dropout: 0.0,
        }
    }
}

/// Trains a model of the given kind.
pub fn train_model(kind: ModelKind, split: &SplitDataset, cfg: &RecConfig) -> Result<(RecModel, TrainReport)> {
    match kind {
        ModelKind::Bprmf => train_bprmf(split, cfg),
        ModelKind::Lightgcn => train_lightgcn(split, cfg),
        ModelKind::Seqattn => train_seqattn(split, cfg),
    }
}

/// Per-epoch mean training loss.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_loss: Vec<f32>,
}

/// What the probe site produced for one (user, history) case.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeOutput {
    pub s_internal: Vec<f32>,
    pub user: usize,
    pub history: Vec<usize>,
    pub predicted: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelSidecar {
    kind: ModelKind,
    num_users: usize,
    num_items: usize,
    config: RecConfig,
    params: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct RecModel {
    kind: ModelKind,
    num_users: usize,
    num_items: usize,
    config: RecConfig,
    params: ParamSet,
    /// Final user representations (graph and MF models only).
    user_repr: Option<Tensor>,
    /// `[num_items, d]` item vectors used for scoring.
    item_repr: Tensor,
}

impl RecModel {
    pub(crate) fn assemble(
        kind: ModelKind,
        num_users: usize,
        num_items: usize,
        config: RecConfig,
        params: ParamSet,
        graph: Option<std::sync::Arc<crate::tape::CsrMatrix>>,
    ) -> Result<Self> {
        let (user_repr, item_repr) = match kind {
            ModelKind::Bprmf => {
                let (u, i) = bprmf::representations(&params)?;
                (Some(u), i)
            }
            ModelKind::Lightgcn => {
                let g = graph
                    .as_ref()
                    .ok_or_else(|| Error::Data("graph model without adjacency".into()))?;
                let (u, i) = lightgcn::representations(&params, g, num_users, config.layers)?;
                (Some(u), i)
            }
            ModelKind::Seqattn => (None, seqattn::item_table(&params, num_items)?),
        };
        Ok(Self {
            kind,
            num_users,
            num_items,
            config,
            params,
            user_repr,
            item_repr,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn d(&self) -> usize {
        self.config.d
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn config(&self) -> &RecConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Item vectors the probe output is scored against.
    pub fn item_embeddings(&self) -> &Tensor {
        &self.item_repr
    }

    /// Probe-site vector for `user` given the chronological `history`.
    /// History is only consulted by the sequential model.
    pub fn probe(&self, user: usize, history: &[usize]) -> Result<Vec<f32>> {
        match self.kind {
            ModelKind::Bprmf | ModelKind::Lightgcn => {
                let reprs = self.user_repr.as_ref().expect("user representations");
                if user >= self.num_users {
                    return Err(Error::invalid("probe", format!("unknown user {user}")));
                }
                Ok(reprs.row(user).to_vec())
            }
            ModelKind::Seqattn => {
                let mut out = seqattn::final_states(&self.params, &self.config, self.num_items, &[history])?;
                Ok(out.pop().unwrap())
            }
        }
    }

    /// Hidden state at every window position (`[max_len, d]`, left-padded)
    /// for the sequential model.
    pub fn position_states(&self, history: &[usize]) -> Result<Tensor> {
        if self.kind != ModelKind::Seqattn {
            return Err(Error::invalid("position_states", format!("{} has no positions", self.kind)));
        }
        let mut out = seqattn::position_states(&self.params, &self.config, self.num_items, &[history])?;
        Ok(out.pop().unwrap())
    }

    /// Probe vectors for many (user, history) cases; identical to calling
    /// [`RecModel::probe`] one case at a time.
    pub fn probe_batch(&self, cases: &[(usize, &[usize])]) -> Result<Vec<Vec<f32>>> {
        match self.kind {
            ModelKind::Seqattn => {
                let mut out = Vec::with_capacity(cases.len());
                for chunk in cases.chunks(256) {
                    let histories: Vec<&[usize]> = chunk.iter().map(|(_, h)| *h).collect();
                    out.extend(seqattn::final_states(&self.params, &self.config, self.num_items, &histories)?);
                }
                Ok(out)
            }
            _ => cases.iter().map(|(u, h)| self.probe(*u, h)).collect(),
        }
    }

    /// Scores of every item for a probe vector.
    pub fn score_all(&self, probe: &[f32]) -> Vec<f32> {
        gemm_nt(probe, self.item_repr.data(), 1, self.config.d, self.num_items)
    }

    /// Highest-scoring item not in the user's train history; ties go to the
    /// lowest item index.
    pub fn top1(&self, split: &SplitDataset, user: usize, probe: &[f32]) -> Option<usize> {
        let scores = self.score_all(probe);
        argmax_excluding(&scores, |i| split.is_train_item(user, i))
    }

    /// Top-`n` items for a probe, excluding train items, best first.
    pub fn top_n(&self, split: &SplitDataset, user: usize, probe: &[f32], n: usize) -> Vec<usize> {
        let scores = self.score_all(probe);
        top_n_excluding(&scores, n, |i| split.is_train_item(user, i))
    }

    /// Probe output for every user of a partition, evaluated in parallel.
    pub fn probe_partition(&self, split: &SplitDataset) -> Result<Vec<ProbeOutput>> {
        (0..split.num_users)
            .into_par_iter()
            .map(|u| {
                let history = split.history(u).to_vec();
                let s = self.probe(u, &history)?;
                let predicted = self
                    .top1(split, u, &s)
                    .ok_or_else(|| Error::Data(format!("user {u} has no candidate items")))?;
                Ok(ProbeOutput {
                    s_internal: s,
                    user: u,
                    history,
                    predicted,
                })
            })
            .collect()
    }

    /// Writes `model.json` plus one `.rstn` file per parameter into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.params.save(dir)?;
        let sidecar = ModelSidecar {
            kind: self.kind,
            num_users: self.num_users,
            num_items: self.num_items,
            config: self.config.clone(),
            params: self.params.names().to_vec(),
        };
        let path = dir.join("model.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&sidecar)?).map_err(|e| Error::io(&path, e))
    }

    /// Loads a checkpoint. Graph models need the split they were trained on
    /// to rebuild their adjacency.
    pub fn load(dir: &Path, split: &SplitDataset) -> Result<Self> {
        let path = dir.join("model.json");
        let raw = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let sidecar: ModelSidecar = serde_json::from_slice(&raw)?;
        let params = ParamSet::load(dir, &sidecar.params)?;
        let graph = match sidecar.kind {
            ModelKind::Lightgcn => Some(std::sync::Arc::new(normalized_adjacency(split)?)),
            _ => None,
        };
        Self::assemble(
            sidecar.kind,
            sidecar.num_users,
            sidecar.num_items,
            sidecar.config,
            params,
            graph,
        )
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }
}

pub(crate) fn argmax_excluding(scores: &[f32], excluded: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<(usize, f32)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if excluded(i) {
            continue;
        }
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

pub(crate) fn top_n_excluding(scores: &[f32], n: usize, excluded: impl Fn(usize) -> bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&i| !excluded(i)).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

/// Adam loop shared by the trainers. `epoch_batches(epoch)` yields the
/// minibatches of one epoch; `forward` builds the loss for one batch given the
/// parameter variables in [`ParamSet`] order.
pub(crate) fn fit<T>(
    params: &mut ParamSet,
    cfg: &RecConfig,
    mut epoch_batches: impl FnMut(usize) -> Result<Vec<Vec<T>>>,
    mut forward: impl FnMut(&mut Tape, &[Var], &[T]) -> Result<Var>,
) -> Result<TrainReport> {
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        let mut total = 0.0f64;
        let mut count = 0usize;
        for batch in epoch_batches(epoch)? {
            if batch.is_empty() {
                continue;
            }
            let mut tape = Tape::new();
            let vars: Vec<Var> = params.tensors().iter().map(|t| tape.param(t)).collect();
            let loss = forward(&mut tape, &vars, &batch)?;
            let value = tape.value(loss)?.item();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("loss is {value}"),
                });
            }
            let grads = tape.backward(loss)?;
            let grad_refs: Vec<Option<&Tensor>> = vars.iter().map(|v| grads.get(*v)).collect();
            let mut slots: Vec<&mut Tensor> = params.tensors_mut().iter_mut().collect();
            adam.step(&mut slots, &grad_refs).map_err(|e| Error::Diverged {
                epoch,
                reason: e.to_string(),
            })?;
            total += value as f64;
            count += 1;
        }
        report.epoch_loss.push(if count == 0 { 0.0 } else { (total / count as f64) as f32 });
    }
    Ok(report)
}

/// Epoch `epoch` of BPR triples with a per-epoch derived seed.
pub(crate) fn bpr_epoch(split: &SplitDataset, cfg: &RecConfig, epoch: usize) -> Result<Vec<Vec<BprTriple>>> {
    batch_bpr_samples(split, cfg.batch_size, mix_seed(cfg.seed, epoch as u64 + 1))?.collect()
}

/// Shared BPR objective on a tape: `-mean(log σ(pos - neg)) + l2 · Σθ² / B`.
pub(crate) fn bpr_loss(
    tape: &mut Tape,
    users: Var,
    pos: Var,
    neg: Var,
    l2: f32,
) -> Result<Var> {
    let batch = tape.shape(users)?[0] as f32;
    let up = tape.mul(users, pos)?;
    let pos_score = tape.row_sum(up)?;
    let un = tape.mul(users, neg)?;
    let neg_score = tape.row_sum(un)?;
    let diff = tape.sub(pos_score, neg_score)?;
    let ls = tape.log_sigmoid(diff)?;
    let m = tape.mean(ls)?;
    let mut loss = tape.scale(m, -1.0)?;
    if l2 > 0.0 {
        let mut reg = None;
        for v in [users, pos, neg] {
            let sq = tape.mul(v, v)?;
            let s = tape.sum(sq)?;
            reg = Some(match reg {
                None => s,
                Some(r) => tape.add(r, s)?,
            });
        }
        let reg = tape.scale(reg.unwrap(), l2 / batch)?;
        loss = tape.add(loss, reg)?;
    }
    Ok(loss)
}
