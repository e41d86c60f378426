// SPDX-License-Identifier: MIT OR Apache-2.0

use super::Interaction;
use crate::error::{Error, Result};

/// Result of k-core filtering. `users[new] = old` and `items[new] = old`.
#[derive(Clone, Debug, PartialEq)]
pub struct KCore {
    pub interactions: Vec<Interaction>,
    pub users: Vec<usize>,
    pub items: Vec<usize>,
}

/// Repeatedly drops users and items with fewer than `k` events until every
/// remaining user and item has at least `k`, then re-indexes both densely
/// (ascending old index). Event order is preserved.
pub fn k_core_filter(interactions: &[Interaction], k: usize) -> Result<KCore> {
    if k == 0 {
        return Err(Error::invalid("k_core_filter", "k must be at least 1"));
    }
    let num_users = interactions.iter().map(|e| e.user + 1).max().unwrap_or(0);
    let num_items = interactions.iter().map(|e| e.item + 1).max().unwrap_or(0);
    let mut alive = vec![true; interactions.len()];
    loop {
        let mut user_deg = vec![0usize; num_users];
        let mut item_deg = vec![0usize; num_items];
        for (e, _) in interactions.iter().zip(&alive).filter(|(_, a)| **a) {
            user_deg[e.user] += 1;
            item_deg[e.item] += 1;
        }
        let mut changed = false;
        for (e, a) in interactions.iter().zip(alive.iter_mut()) {
            if *a && (user_deg[e.user] < k || item_deg[e.item] < k) {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut user_new = vec![usize::MAX; num_users];
    let mut item_new = vec![usize::MAX; num_items];
    for (e, _) in interactions.iter().zip(&alive).filter(|(_, a)| **a) {
        user_new[e.user] = 0;
        item_new[e.item] = 0;
    }
    let users = assign_dense(&mut user_new);
    let items = assign_dense(&mut item_new);
    let kept: Vec<Interaction> = interactions
        .iter()
        .zip(&alive)
        .filter(|(_, a)| **a)
        .map(|(e, _)| Interaction {
            user: user_new[e.user],
            item: item_new[e.item],
            timestamp: e.timestamp,
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::Data("k-core eliminated all data".into()));
    }
    Ok(KCore {
        interactions: kept,
        users,
        items,
    })
}

fn assign_dense(marks: &mut [usize]) -> Vec<usize> {
    let mut origin = Vec::new();
    for (old, slot) in marks.iter_mut().enumerate() {
        if *slot != usize::MAX {
            *slot = origin.len();
            origin.push(old);
        }
    }
    origin
}
