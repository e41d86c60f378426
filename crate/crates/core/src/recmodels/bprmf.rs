// SPDX-License-Identifier: MIT OR Apache-2.0

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{bpr_epoch, bpr_loss, fit, ModelKind, ParamSet, RecConfig, RecModel, TrainReport};
use crate::corpus::SplitDataset;
use crate::error::{Error, Result};
use crate::tape::Tensor;

pub(super) const USER: &str = "user_emb";
pub(super) const ITEM: &str = "item_emb";

pub(super) fn check_split(op: &'static str, split: &SplitDataset) -> Result<()> {
    if split.num_users == 0 || split.num_items == 0 || split.num_train() == 0 {
        return Err(Error::invalid(op, "split has no train interactions"));
    }
    Ok(())
}

pub(super) fn init(cfg: &RecConfig, num_users: usize, num_items: usize) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ParamSet::new();
    params.insert(USER, Tensor::randn(&[num_users, cfg.d], cfg.init_std, &mut rng));
    params.insert(ITEM, Tensor::randn(&[num_items, cfg.d], cfg.init_std, &mut rng));
    params
}

pub(super) fn representations(params: &ParamSet) -> Result<(Tensor, Tensor)> {
    Ok((params.get(USER)?.clone(), params.get(ITEM)?.clone()))
}

/// Matrix factorization trained with the pairwise BPR objective. The probe is
/// the user embedding row.
pub fn train_bprmf(split: &SplitDataset, cfg: &RecConfig) -> Result<(RecModel, TrainReport)> {
    check_split("train_bprmf", split)?;
    let mut params = init(cfg, split.num_users, split.num_items);
    let report = fit(
        &mut params,
        cfg,
        |epoch| bpr_epoch(split, cfg, epoch),
        |tape, vars, batch| {
            let users: Vec<usize> = batch.iter().map(|t| t.user).collect();
            let pos: Vec<usize> = batch.iter().map(|t| t.pos).collect();
            let neg: Vec<usize> = batch.iter().map(|t| t.neg).collect();
            let u = tape.gather(vars[0], &users)?;
            let p = tape.gather(vars[1], &pos)?;
            let n = tape.gather(vars[1], &neg)?;
            bpr_loss(tape, u, p, n, cfg.l2)
        },
    )?;
    let model = RecModel::assemble(
        ModelKind::Bprmf,
        split.num_users,
        split.num_items,
        cfg.clone(),
        params,
        None,
    )?;
    Ok((model, report))
}
