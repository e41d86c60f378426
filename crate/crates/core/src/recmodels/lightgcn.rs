// SPDX-License-Identifier: MIT OR Apache-2.0

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::bprmf::check_split;
use super::{bpr_epoch, bpr_loss, fit, ModelKind, ParamSet, RecConfig, RecModel, TrainReport};
use crate::corpus::SplitDataset;
use crate::error::{Error, Result};
use crate::tape::{CsrMatrix, Tape, Tensor, Var};

const EMB: &str = "node_emb";

/// Symmetrically normalized bipartite adjacency `D^-1/2 A D^-1/2` over
/// `num_users + num_items` nodes; users come first. Repeated train events
/// count once.
pub fn normalized_adjacency(split: &SplitDataset) -> Result<CsrMatrix> {
    let n = split.num_users + split.num_items;
    let mut degree = vec![0usize; n];
    for u in 0..split.num_users {
        for &i in split.train_items(u) {
            degree[u] += 1;
            degree[split.num_users + i] += 1;
        }
    }
    if let Some(node) = degree.iter().position(|&d| d == 0) {
        let what = if node < split.num_users {
            format!("user {node}")
        } else {
            format!("item {}", node - split.num_users)
        };
        return Err(Error::Data(format!("{what} has no train interactions")));
    }
    let mut triplets = Vec::with_capacity(2 * split.num_train());
    for u in 0..split.num_users {
        for &i in split.train_items(u) {
            let j = split.num_users + i;
            let w = 1.0 / ((degree[u] * degree[j]) as f32).sqrt();
            triplets.push((u, j, w));
            triplets.push((j, u, w));
        }
    }
    CsrMatrix::from_triplets(n, n, triplets)
}

fn propagate(tape: &mut Tape, adj: &Arc<CsrMatrix>, e0: Var, layers: usize) -> Result<Var> {
    if layers == 0 {
        return Ok(e0);
    }
    let mut acc = e0;
    let mut cur = e0;
    for _ in 0..layers {
        cur = tape.spmm(adj, cur)?;
        acc = tape.add(acc, cur)?;
    }
    tape.scale(acc, 1.0 / (layers + 1) as f32)
}

/// Final (user, item) representations: the layer mean of the propagated
/// node embeddings, split at `num_users`.
pub(super) fn representations(
    params: &ParamSet,
    adj: &Arc<CsrMatrix>,
    num_users: usize,
    layers: usize,
) -> Result<(Tensor, Tensor)> {
    let e0 = params.get(EMB)?;
    let d = e0.cols();
    let mut acc = e0.data().to_vec();
    let mut cur = e0.data().to_vec();
    for _ in 0..layers {
        cur = adj.matmul_dense(&cur, d);
        for (a, c) in acc.iter_mut().zip(&cur) {
            *a += c;
        }
    }
    let inv = 1.0 / (layers + 1) as f32;
    if layers > 0 {
        for a in &mut acc {
            *a *= inv;
        }
    }
    let n = e0.rows();
    let items = acc.split_off(num_users * d);
    Ok((Tensor::matrix(num_users, d, acc)?, Tensor::matrix(n - num_users, d, items)?))
}

/// LightGCN-style propagation over the train graph with a BPR objective.
/// The probe is the final user representation.
pub fn train_lightgcn(split: &SplitDataset, cfg: &RecConfig) -> Result<(RecModel, TrainReport)> {
    check_split("train_lightgcn", split)?;
    let adj = Arc::new(normalized_adjacency(split)?);
    let mut params = init(cfg, split.num_users + split.num_items);
    let offset = split.num_users;
    let report = fit(
        &mut params,
        cfg,
        |epoch| bpr_epoch(split, cfg, epoch),
        |tape, vars, batch| {
            let fin = propagate(tape, &adj, vars[0], cfg.layers)?;
            let users: Vec<usize> = batch.iter().map(|t| t.user).collect();
            let pos: Vec<usize> = batch.iter().map(|t| offset + t.pos).collect();
            let neg: Vec<usize> = batch.iter().map(|t| offset + t.neg).collect();
            let u = tape.gather(fin, &users)?;
            let p = tape.gather(fin, &pos)?;
            let n = tape.gather(fin, &neg)?;
            bpr_loss(tape, u, p, n, cfg.l2)
        },
    )?;
    let model = RecModel::assemble(
        ModelKind::Lightgcn,
        split.num_users,
        split.num_items,
        cfg.clone(),
        params,
        Some(adj),
    )?;
    Ok((model, report))
}

fn init(cfg: &RecConfig, nodes: usize) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ParamSet::new();
    params.insert(EMB, Tensor::randn(&[nodes, cfg.d], cfg.init_std, &mut rng));
    params
}
