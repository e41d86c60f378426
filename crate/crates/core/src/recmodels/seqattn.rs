// SPDX-License-Identifier: MIT OR Apache-2.0

//! Self-attentive next-item model: item plus learned positional embeddings,
//! causal self-attention blocks (attention and a pointwise feed-forward layer,
//! each with a residual connection and post layer norm), and BPR at the last
//! position. Histories are left-padded to a fixed window so the final
//! position is always the most recent item.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::bprmf::check_split;
use super::{bpr_loss, fit, ModelKind, ParamSet, RecConfig, RecModel, TrainReport};
use crate::corpus::SplitDataset;
use crate::error::{Error, Result};
use crate::hashing::mix_seed;
use crate::tape::{Tape, Tensor, Var};

const ITEM: &str = "item_emb";
const POS: &str = "pos_emb";
const LN_EPS: f32 = 1e-6;
const MAX_NEGATIVE_DRAWS: usize = 100;

fn block_names(b: usize, heads: usize) -> Vec<String> {
    let mut names = Vec::new();
    for h in 0..heads {
        for w in ["wq", "wk", "wv", "wo"] {
            names.push(format!("b{b}.{w}{h}"));
        }
    }
    for n in ["ln1.g", "ln1.b", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2", "ln2.g", "ln2.b"] {
        names.push(format!("b{b}.{n}"));
    }
    names
}

fn check_config(cfg: &RecConfig) -> Result<()> {
    if cfg.heads == 0 || !cfg.d.is_multiple_of(cfg.heads) {
        return Err(Error::invalid(
            "train_seqattn",
            format!("d = {} is not divisible by heads = {}", cfg.d, cfg.heads),
        ));
    }
    if cfg.max_len == 0 || cfg.blocks == 0 {
        return Err(Error::invalid("train_seqattn", "max_len and blocks must be at least 1"));
    }
    if !(0.0..1.0).contains(&cfg.dropout) {
        return Err(Error::invalid("train_seqattn", "dropout must be in [0, 1)"));
    }
    Ok(())
}

pub(super) fn init(cfg: &RecConfig, num_items: usize) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.d;
    let dh = d / cfg.heads;
    let w_std = 1.0 / (d as f32).sqrt();
    let mut params = ParamSet::new();
    params.insert(ITEM, Tensor::randn(&[num_items + 1, d], cfg.init_std, &mut rng));
    params.insert(POS, Tensor::randn(&[cfg.max_len, d], cfg.init_std, &mut rng));
    for b in 0..cfg.blocks {
        for name in block_names(b, cfg.heads) {
            let field = name.split_once('.').unwrap().1;
            let t = match field {
                "ln1.g" | "ln2.g" => Tensor::filled(&[d], 1.0),
                "ln1.b" | "ln2.b" | "ffn.b1" | "ffn.b2" => Tensor::zeros(&[d]),
                "ffn.w1" | "ffn.w2" => Tensor::randn(&[d, d], w_std, &mut rng),
                f if f.starts_with("wo") => Tensor::randn(&[dh, d], w_std, &mut rng),
                _ => Tensor::randn(&[d, dh], w_std, &mut rng),
            };
            params.insert(&name, t);
        }
    }
    params
}

/// Rows `0..num_items` of the item table; the extra last row is padding.
pub(super) fn item_table(params: &ParamSet, num_items: usize) -> Result<Tensor> {
    let t = params.get(ITEM)?;
    let d = t.cols();
    Tensor::matrix(num_items, d, t.data()[..num_items * d].to_vec())
}

/// Left-pads (or truncates from the front) each history to `len`.
fn pad(histories: &[&[usize]], len: usize, pad_id: usize) -> Result<(Vec<usize>, Vec<bool>)> {
    let mut ids = Vec::with_capacity(histories.len() * len);
    let mut valid = Vec::with_capacity(histories.len() * len);
    for h in histories {
        if h.is_empty() {
            return Err(Error::invalid("seqattn", "cold user not supported"));
        }
        let h = &h[h.len().saturating_sub(len)..];
        let padding = len - h.len();
        ids.extend(std::iter::repeat_n(pad_id, padding));
        valid.extend(std::iter::repeat_n(false, padding));
        ids.extend_from_slice(h);
        valid.extend(std::iter::repeat_n(true, h.len()));
    }
    Ok((ids, valid))
}

/// `[B, L, L]` mask: query `q` may attend key `k` iff `k <= q` and `k` holds
/// a real item.
fn causal_mask(valid: &[bool], len: usize) -> Vec<bool> {
    let batch = valid.len() / len;
    let mut mask = vec![false; batch * len * len];
    for b in 0..batch {
        for q in 0..len {
            for k in 0..=q {
                mask[(b * len + q) * len + k] = valid[b * len + k];
            }
        }
    }
    mask
}

struct Forward<'a> {
    vars: HashMap<&'a str, Var>,
    cfg: &'a RecConfig,
    num_items: usize,
}

impl Forward<'_> {
    fn var(&self, name: &str) -> Var {
        self.vars[name]
    }

    /// Multi-head attention: the sum over heads of `softmax(q kᵀ/√dh) v · Wo_h`.
    fn attention(&self, tape: &mut Tape, x: Var, block: usize, mask: &[bool], batch: usize) -> Result<Var> {
        let len = self.cfg.max_len;
        let dh = self.cfg.d / self.cfg.heads;
        let mut out: Option<Var> = None;
        for h in 0..self.cfg.heads {
            let w = |n: &str| self.var(&format!("b{block}.{n}{h}"));
            let q = tape.matmul(x, w("wq"))?;
            let k = tape.matmul(x, w("wk"))?;
            let v = tape.matmul(x, w("wv"))?;
            let q = tape.reshape(q, &[batch, len, dh])?;
            let k = tape.reshape(k, &[batch, len, dh])?;
            let v = tape.reshape(v, &[batch, len, dh])?;
            let scores = tape.batch_matmul(q, k, true)?;
            let scores = tape.scale(scores, 1.0 / (dh as f32).sqrt())?;
            let probs = tape.masked_softmax(scores, Some(mask))?;
            let att = tape.batch_matmul(probs, v, false)?;
            let att = tape.reshape(att, &[batch * len, dh])?;
            let proj = tape.matmul(att, w("wo"))?;
            out = Some(match out {
                None => proj,
                Some(acc) => tape.add(acc, proj)?,
            });
        }
        Ok(out.unwrap())
    }

    fn dropout(&self, tape: &mut Tape, x: Var, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        let p = self.cfg.dropout;
        let Some(rng) = rng else { return Ok(x) };
        if p == 0.0 {
            return Ok(x);
        }
        let shape = tape.shape(x)?.to_vec();
        let n: usize = shape.iter().product();
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f32> = (0..n).map(|_| if rng.random::<f32>() < p { 0.0 } else { keep }).collect();
        let m = tape.constant(Tensor::new(shape, mask)?);
        tape.mul(x, m)
    }

    /// Hidden states for every position, `[B·L, d]`.
    fn encode(&self, tape: &mut Tape, histories: &[&[usize]], mut rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        let len = self.cfg.max_len;
        let batch = histories.len();
        let (ids, valid) = pad(histories, len, self.num_items)?;
        let mask = causal_mask(&valid, len);
        let items = tape.gather(self.var(ITEM), &ids)?;
        let positions: Vec<usize> = (0..batch).flat_map(|_| 0..len).collect();
        let pos = tape.gather(self.var(POS), &positions)?;
        let mut x = tape.add(items, pos)?;
        x = self.dropout(tape, x, rng.as_deref_mut())?;
        for b in 0..self.cfg.blocks {
            let p = |n: &str| self.var(&format!("b{b}.{n}"));
            let att = self.attention(tape, x, b, &mask, batch)?;
            let att = self.dropout(tape, att, rng.as_deref_mut())?;
            let res = tape.add(x, att)?;
            let h = tape.layer_norm(res, p("ln1.g"), p("ln1.b"), LN_EPS)?;
            let f = tape.matmul(h, p("ffn.w1"))?;
            let f = tape.add_row(f, p("ffn.b1"))?;
            let f = tape.relu(f)?;
            let f = tape.matmul(f, p("ffn.w2"))?;
            let f = tape.add_row(f, p("ffn.b2"))?;
            let f = self.dropout(tape, f, rng.as_deref_mut())?;
            let res = tape.add(h, f)?;
            x = tape.layer_norm(res, p("ln2.g"), p("ln2.b"), LN_EPS)?;
        }
        Ok(x)
    }

    fn last_positions(&self, tape: &mut Tape, states: Var, batch: usize) -> Result<Var> {
        let len = self.cfg.max_len;
        let rows: Vec<usize> = (0..batch).map(|b| b * len + len - 1).collect();
        tape.gather(states, &rows)
    }
}

fn frozen<'a>(tape: &mut Tape, params: &'a ParamSet, cfg: &'a RecConfig, num_items: usize) -> Forward<'a> {
    let vars = params
        .names()
        .iter()
        .zip(params.tensors())
        .map(|(n, t)| (n.as_str(), tape.constant(t.clone())))
        .collect();
    Forward { vars, cfg, num_items }
}

/// Hidden state at every window position for each history, `[L, d]` each.
pub(super) fn position_states(
    params: &ParamSet,
    cfg: &RecConfig,
    num_items: usize,
    histories: &[&[usize]],
) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    let fwd = frozen(&mut tape, params, cfg, num_items);
    let states = fwd.encode(&mut tape, histories, None)?;
    let data = tape.value(states)?.data();
    let block = cfg.max_len * cfg.d;
    data.chunks(block)
        .map(|c| Tensor::matrix(cfg.max_len, cfg.d, c.to_vec()))
        .collect()
}

/// Final-position hidden state for each history.
pub(super) fn final_states(
    params: &ParamSet,
    cfg: &RecConfig,
    num_items: usize,
    histories: &[&[usize]],
) -> Result<Vec<Vec<f32>>> {
    let mut tape = Tape::new();
    let fwd = frozen(&mut tape, params, cfg, num_items);
    let states = fwd.encode(&mut tape, histories, None)?;
    let last = fwd.last_positions(&mut tape, states, histories.len())?;
    Ok(tape.value(last)?.data().chunks(cfg.d).map(<[f32]>::to_vec).collect())
}

#[derive(Clone, Copy)]
struct Example {
    user: usize,
    /// End (exclusive) of the prefix within the user's train sequence.
    end: usize,
    neg: usize,
}

fn epoch_examples(split: &SplitDataset, cfg: &RecConfig, epoch: usize) -> Result<Vec<Vec<Example>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64 + 1));
    let mut examples = Vec::new();
    for (u, seq) in split.train.iter().enumerate() {
        for end in 1..seq.len() {
            examples.push((u, end));
        }
    }
    examples.shuffle(&mut rng);
    let mut out = Vec::with_capacity(examples.len());
    for (user, end) in examples {
        let neg = (0..MAX_NEGATIVE_DRAWS)
            .map(|_| rng.random_range(0..split.num_items))
            .find(|&c| !split.is_train_item(user, c))
            .ok_or_else(|| Error::Data(format!("no negative found for user {user}")))?;
        out.push(Example { user, end, neg });
    }
    Ok(out.chunks(cfg.batch_size.max(1)).map(<[Example]>::to_vec).collect())
}

/// Trains on every (prefix, next item) pair of the train sequences with a
/// sampled negative. The probe is the final-position hidden state.
pub fn train_seqattn(split: &SplitDataset, cfg: &RecConfig) -> Result<(RecModel, TrainReport)> {
    check_split("train_seqattn", split)?;
    check_config(cfg)?;
    let mut params = init(cfg, split.num_items);
    let names: Vec<String> = params.names().to_vec();
    let mut drop_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0xD809));
    let report = fit(
        &mut params,
        cfg,
        |epoch| epoch_examples(split, cfg, epoch),
        |tape, vars, batch| {
            let fwd = Forward {
                vars: names.iter().map(String::as_str).zip(vars.iter().copied()).collect(),
                cfg,
                num_items: split.num_items,
            };
            let len = cfg.max_len;
            let histories: Vec<&[usize]> = batch
                .iter()
                .map(|e| {
                    let seq = &split.train[e.user];
                    &seq[e.end.saturating_sub(len)..e.end]
                })
                .collect();
            let states = fwd.encode(tape, &histories, Some(&mut drop_rng))?;
            let last = fwd.last_positions(tape, states, batch.len())?;
            let pos: Vec<usize> = batch.iter().map(|e| split.train[e.user][e.end]).collect();
            let neg: Vec<usize> = batch.iter().map(|e| e.neg).collect();
            let p = tape.gather(fwd.var(ITEM), &pos)?;
            let n = tape.gather(fwd.var(ITEM), &neg)?;
            bpr_loss(tape, last, p, n, cfg.l2)
        },
    )?;
    let model = RecModel::assemble(
        ModelKind::Seqattn,
        split.num_users,
        split.num_items,
        cfg.clone(),
        params,
        None,
    )?;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::cyclic_markov;
    use crate::corpus::{leave_one_out_split, Partition};

    fn small_cfg() -> RecConfig {
        RecConfig {
            d: 8,
            max_len: 5,
            heads: 2,
            seed: 3,
            ..RecConfig::default()
        }
    }

    #[test]
    fn single_item_attention_is_its_value() {
        let cfg = small_cfg();
        let params = init(&cfg, 6);
        let mut tape = Tape::new();
        let fwd = frozen(&mut tape, &params, &cfg, 6);
        let (ids, valid) = pad(&[&[4]], cfg.max_len, 6).unwrap();
        let mask = causal_mask(&valid, cfg.max_len);
        let items = tape.gather(fwd.var(ITEM), &ids).unwrap();
        let positions: Vec<usize> = (0..cfg.max_len).collect();
        let pos = tape.gather(fwd.var(POS), &positions).unwrap();
        let x = tape.add(items, pos).unwrap();
        let att = fwd.attention(&mut tape, x, 0, &mask, 1).unwrap();
        let got = tape.value(att).unwrap().row(cfg.max_len - 1).to_vec();

        let last = tape.value(x).unwrap().row(cfg.max_len - 1).to_vec();
        let dh = cfg.d / cfg.heads;
        let mut expected = vec![0.0f32; cfg.d];
        for h in 0..cfg.heads {
            let wv = params.get(&format!("b0.wv{h}")).unwrap();
            let wo = params.get(&format!("b0.wo{h}")).unwrap();
            let v: Vec<f32> = (0..dh)
                .map(|j| (0..cfg.d).map(|i| last[i] * wv.data()[i * dh + j]).sum())
                .collect();
            for (c, e) in expected.iter_mut().enumerate() {
                *e += (0..dh).map(|j| v[j] * wo.data()[j * cfg.d + c]).sum::<f32>();
            }
        }
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-5, "{got:?} vs {expected:?}");
        }
    }

    #[test]
    fn future_items_do_not_change_earlier_states() {
        let cfg = small_cfg();
        let params = init(&cfg, 6);
        let a = position_states(&params, &cfg, 6, &[&[0, 1, 2, 3]]).unwrap();
        let b = position_states(&params, &cfg, 6, &[&[0, 1, 2, 5]]).unwrap();
        let len = cfg.max_len;
        for p in 0..len - 1 {
            assert_eq!(a[0].row(p), b[0].row(p), "position {p}");
        }
        assert_ne!(a[0].row(len - 1), b[0].row(len - 1));
    }

    #[test]
    fn batched_states_match_single_states() {
        let cfg = small_cfg();
        let params = init(&cfg, 6);
        let hs: [&[usize]; 3] = [&[1], &[2, 3, 4], &[0, 1, 2, 3, 4, 5, 1]];
        let batched = final_states(&params, &cfg, 6, &hs).unwrap();
        for (h, b) in hs.iter().zip(&batched) {
            let single = final_states(&params, &cfg, 6, &[h]).unwrap();
            for (x, y) in single[0].iter().zip(b) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn empty_history_is_cold_user() {
        let cfg = small_cfg();
        let params = init(&cfg, 6);
        let err = final_states(&params, &cfg, 6, &[&[]]).unwrap_err();
        assert!(err.to_string().contains("cold user not supported"));
    }

    #[test]
    fn bad_head_count_is_rejected() {
        let split = SplitDataset::from_parts(1, 4, 5, vec![vec![0, 1]], vec![2], vec![3]);
        let cfg = RecConfig { heads: 3, ..small_cfg() };
        assert!(train_seqattn(&split, &cfg).is_err());
    }

    #[test]
    fn learns_a_cyclic_successor() {
        let data = cyclic_markov(8, 64, 8, 11);
        let split = leave_one_out_split(&data.interactions).unwrap();
        let cfg = RecConfig {
            d: 16,
            epochs: 20,
            lr: 0.01,
            batch_size: 32,
            max_len: 6,
            seed: 2,
            ..RecConfig::default()
        };
        let (model, _) = train_seqattn(&split, &cfg).unwrap();
        let mut hits = 0;
        for u in 0..split.num_users {
            let probe = model.probe(u, split.history(u)).unwrap();
            if model.top1(&split, u, &probe) == split.target(Partition::Dev, u) {
                hits += 1;
            }
        }
        assert!(hits as f32 / split.num_users as f32 > 0.9, "{hits}/{}", split.num_users);
    }
}
