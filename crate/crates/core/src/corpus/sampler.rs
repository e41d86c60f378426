// SPDX-License-Identifier: MIT OR Apache-2.0

use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SplitDataset;
use crate::error::{Error, Result};

const MAX_NEGATIVE_DRAWS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BprTriple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

/// One epoch of BPR triples: every train (user, item) event once, in shuffled
/// order, each paired with a negative drawn uniformly from items the user has
/// no train interaction with.
pub struct BprBatches<'a> {
    split: &'a SplitDataset,
    order: Vec<(usize, usize)>,
    cursor: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

pub fn batch_bpr_samples(split: &SplitDataset, batch_size: usize, seed: u64) -> Result<BprBatches<'_>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_bpr_samples", "batch_size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<(usize, usize)> = split
        .train
        .iter()
        .enumerate()
        .flat_map(|(u, items)| items.iter().map(move |&i| (u, i)))
        .collect();
    order.shuffle(&mut rng);
    Ok(BprBatches {
        split,
        order,
        cursor: 0,
        batch_size,
        rng,
    })
}

impl BprBatches<'_> {
    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    fn negative(&mut self, user: usize) -> Result<usize> {
        for _ in 0..MAX_NEGATIVE_DRAWS {
            let cand = self.rng.random_range(0..self.split.num_items);
            if !self.split.is_train_item(user, cand) {
                return Ok(cand);
            }
        }
        Err(Error::Data(format!(
            "no negative found for user {user} after {MAX_NEGATIVE_DRAWS} draws"
        )))
    }
}

impl Iterator for BprBatches<'_> {
    type Item = Result<Vec<BprTriple>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let mut batch = Vec::with_capacity(end - self.cursor);
        for idx in self.cursor..end {
            let (user, pos) = self.order[idx];
            match self.negative(user) {
                Ok(neg) => batch.push(BprTriple { user, pos, neg }),
                Err(e) => {
                    self.cursor = self.order.len();
                    return Some(Err(e));
                }
            }
        }
        self.cursor = end;
        Some(Ok(batch))
    }
}

/// Runs one epoch of [`batch_bpr_samples`] on a producer thread and hands the
/// batches over a bounded channel.
pub fn stream_bpr_batches(
    split: Arc<SplitDataset>,
    batch_size: usize,
    seed: u64,
    capacity: usize,
) -> Receiver<Result<Vec<BprTriple>>> {
    let (tx, rx) = sync_channel(capacity.max(1));
    std::thread::spawn(move || {
        let batches = match batch_bpr_samples(&split, batch_size, seed) {
            Ok(b) => b,
            Err(e) => {
                let _ = tx.send(Err(e));
                return;
            }
        };
        for b in batches {
            if tx.send(b).is_err() {
                return;
            }
        }
    });
    rx
}
