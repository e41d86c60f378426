// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::Interaction;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_HISTORY: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Dev,
    Test,
}

impl Partition {
    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Dev => "dev",
            Partition::Test => "test",
        }
    }
}

impl std::fmt::Display for Partition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "dev" | "valid" => Ok(Partition::Dev),
            "test" => Ok(Partition::Test),
            other => Err(Error::invalid("partition", format!("unknown partition {other:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    num_users: usize,
    num_items: usize,
    max_history_len: usize,
    train: Vec<Vec<usize>>,
    dev: Vec<usize>,
    test: Vec<usize>,
}

/// Leave-one-out split: per user, chronological train items plus one dev and
/// one test item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "SplitFile", into = "SplitFile")]
pub struct SplitDataset {
    pub num_users: usize,
    pub num_items: usize,
    pub max_history_len: usize,
    pub train: Vec<Vec<usize>>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
    train_sorted: Vec<Vec<usize>>,
}

impl From<SplitFile> for SplitDataset {
    fn from(f: SplitFile) -> Self {
        SplitDataset::from_parts(f.num_users, f.num_items, f.max_history_len, f.train, f.dev, f.test)
    }
}

impl From<SplitDataset> for SplitFile {
    fn from(s: SplitDataset) -> Self {
        SplitFile {
            num_users: s.num_users,
            num_items: s.num_items,
            max_history_len: s.max_history_len,
            train: s.train,
            dev: s.dev,
            test: s.test,
        }
    }
}

impl SplitDataset {
    pub fn from_parts(
        num_users: usize,
        num_items: usize,
        max_history_len: usize,
        train: Vec<Vec<usize>>,
        dev: Vec<usize>,
        test: Vec<usize>,
    ) -> Self {
        let train_sorted = train
            .iter()
            .map(|seq| {
                let mut s = seq.clone();
                s.sort_unstable();
                s.dedup();
                s
            })
            .collect();
        Self {
            num_users,
            num_items,
            max_history_len,
            train,
            dev,
            test,
            train_sorted,
        }
    }

    pub fn num_train(&self) -> usize {
        self.train.iter().map(Vec::len).sum()
    }

    /// Distinct train items of `user`, ascending.
    pub fn train_items(&self, user: usize) -> &[usize] {
        &self.train_sorted[user]
    }

    pub fn is_train_item(&self, user: usize, item: usize) -> bool {
        self.train_sorted[user].binary_search(&item).is_ok()
    }

    /// The most recent `max_history_len` train items of `user`.
    pub fn history(&self, user: usize) -> &[usize] {
        let seq = &self.train[user];
        &seq[seq.len().saturating_sub(self.max_history_len)..]
    }

    /// Held-out item for `user` in the dev or test partition.
    pub fn target(&self, partition: Partition, user: usize) -> Option<usize> {
        match partition {
            Partition::Dev => self.dev.get(user).copied(),
            Partition::Test => self.test.get(user).copied(),
            Partition::Train => None,
        }
    }

    pub fn with_max_history(mut self, max_history_len: usize) -> Self {
        self.max_history_len = max_history_len.max(1);
        self
    }
}

/// Sorts each user's events by timestamp (stable, so ties keep file order)
/// and holds out the last event for test and the second-to-last for dev.
pub fn leave_one_out_split(interactions: &[Interaction]) -> Result<SplitDataset> {
    let num_users = interactions.iter().map(|e| e.user + 1).max().unwrap_or(0);
    let num_items = interactions.iter().map(|e| e.item + 1).max().unwrap_or(0);
    let mut per_user: Vec<Vec<(i64, usize)>> = vec![Vec::new(); num_users];
    for e in interactions {
        per_user[e.user].push((e.timestamp, e.item));
    }
    let mut train = Vec::with_capacity(num_users);
    let mut dev = Vec::with_capacity(num_users);
    let mut test = Vec::with_capacity(num_users);
    for (user, mut events) in per_user.into_iter().enumerate() {
        if events.len() < 3 {
            return Err(Error::Data(format!(
                "user {user} has {} interaction(s); leave-one-out needs at least 3",
                events.len()
            )));
        }
        events.sort_by_key(|(t, _)| *t);
        let mut items: Vec<usize> = events.into_iter().map(|(_, i)| i).collect();
        test.push(items.pop().unwrap());
        dev.push(items.pop().unwrap());
        train.push(items);
    }
    Ok(SplitDataset::from_parts(
        num_users,
        num_items,
        DEFAULT_MAX_HISTORY,
        train,
        dev,
        test,
    ))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn five_events_split_three_one_one() {
        let events: Vec<_> = [(10, 0), (20, 1), (30, 2), (40, 3), (50, 4)]
            .iter()
            .map(|&(t, i)| Interaction::new(0, i, t))
            .collect();
        let s = leave_one_out_split(&events).unwrap();
        assert_eq!(s.train[0], vec![0, 1, 2]);
        assert_eq!(s.dev[0], 3);
        assert_eq!(s.test[0], 4);
    }

    #[test]
    fn equal_final_timestamps_follow_file_order() {
        let events = vec![
            Interaction::new(0, 5, 9),
            Interaction::new(0, 1, 1),
            Interaction::new(0, 7, 9),
            Interaction::new(0, 2, 2),
        ];
        // Stable-sort oracle over (timestamp, file position).
        let mut oracle: Vec<(i64, usize, usize)> =
            events.iter().enumerate().map(|(pos, e)| (e.timestamp, pos, e.item)).collect();
        oracle.sort();
        let s = leave_one_out_split(&events).unwrap();
        assert_eq!(s.test[0], oracle[3].2);
        assert_eq!(s.dev[0], oracle[2].2);
        assert_eq!(s.test[0], 7);
    }

    #[test]
    fn three_events_leave_one_train_item() {
        let events: Vec<_> = (0..3).map(|i| Interaction::new(0, i, i as i64)).collect();
        let s = leave_one_out_split(&events).unwrap();
        assert_eq!(s.train[0].len(), 1);
    }

    #[test]
    fn too_short_history_is_rejected() {
        let events = vec![Interaction::new(0, 0, 0), Interaction::new(0, 1, 1)];
        assert!(leave_one_out_split(&events).is_err());
    }

    #[test]
    fn history_truncates_to_most_recent() {
        let events: Vec<_> = (0..30).map(|i| Interaction::new(0, i, i as i64)).collect();
        let s = leave_one_out_split(&events).unwrap();
        assert_eq!(s.history(0).len(), DEFAULT_MAX_HISTORY);
        assert_eq!(*s.history(0).last().unwrap(), 27);
    }

    #[test]
    fn json_roundtrip_rebuilds_lookup() {
        let events: Vec<_> = (0..4).map(|i| Interaction::new(0, 3 - i, i as i64)).collect();
        let s = leave_one_out_split(&events).unwrap();
        let back: SplitDataset = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        assert!(back.is_train_item(0, 2));
        assert!(!back.is_train_item(0, 0));
    }

    proptest! {
        #[test]
        fn partitions_cover_the_multiset(raw in proptest::collection::vec((0usize..5, 0usize..9, 0i64..20), 0..80)) {
            let mut events: Vec<Interaction> = raw.into_iter().map(|(u, i, t)| Interaction::new(u, i, t)).collect();
            // Guarantee every user has at least three events.
            for u in 0..5 {
                for j in 0..3 {
                    events.push(Interaction::new(u, j, 100 + j as i64));
                }
            }
            let s = leave_one_out_split(&events).unwrap();
            for u in 0..5 {
                let mut want: Vec<usize> = events.iter().filter(|e| e.user == u).map(|e| e.item).collect();
                let mut got = s.train[u].clone();
                got.push(s.dev[u]);
                got.push(s.test[u]);
                want.sort();
                got.sort();
                prop_assert_eq!(got, want);
            }
        }
    }
}
