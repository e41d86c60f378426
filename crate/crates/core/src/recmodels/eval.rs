// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::RecModel;
use crate::corpus::{Partition, SplitDataset};
use crate::error::{Error, Result};

pub const DEFAULT_CUTOFFS: [usize; 2] = [10, 20];

/// Hit rate and NDCG keyed as `HR@k` / `NDCG@k`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub partition: Option<Partition>,
    pub users: usize,
    pub values: BTreeMap<String, f64>,
}

impl EvalMetrics {
    pub fn hr(&self, k: usize) -> Option<f64> {
        self.values.get(&format!("HR@{k}")).copied()
    }

    pub fn ndcg(&self, k: usize) -> Option<f64> {
        self.values.get(&format!("NDCG@{k}")).copied()
    }

    /// Metrics from 1-based ranks.
    pub fn from_ranks(ranks: &[usize], cutoffs: &[usize]) -> Self {
        let mut values = BTreeMap::new();
        let n = ranks.len().max(1) as f64;
        for &k in cutoffs {
            let hits = ranks.iter().filter(|&&r| r <= k).count() as f64;
            let gain: f64 = ranks
                .iter()
                .filter(|&&r| r <= k)
                .map(|&r| 1.0 / ((r + 1) as f64).log2())
                .sum();
            values.insert(format!("HR@{k}"), hits / n);
            values.insert(format!("NDCG@{k}"), gain / n);
        }
        Self {
            partition: None,
            users: ranks.len(),
            values,
        }
    }
}

/// 1-based rank of `target` among candidates not `excluded`. The target is
/// always a candidate; items scoring equal to it rank ahead when their index
/// is lower.
pub fn rank_of_target(scores: &[f32], target: usize, excluded: impl Fn(usize) -> bool) -> usize {
    let t = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| j != target && !excluded(j) && (s > t || (s == t && j < target)))
        .count()
}

/// Maps a probe vector to the one actually scored.
pub type ProbeMap<'a> = dyn Fn(&[f32]) -> Vec<f32> + Sync + 'a;

/// Test-all evaluation of a held-out partition. With `replace_probe`, each
/// probe vector is passed through it before scoring.
pub fn evaluate(
    model: &RecModel,
    split: &SplitDataset,
    partition: Partition,
    cutoffs: &[usize],
    replace_probe: Option<&ProbeMap<'_>>,
) -> Result<EvalMetrics> {
    if partition == Partition::Train {
        return Err(Error::invalid("evaluate", "the train partition has no held-out item"));
    }
    let ranks: Vec<usize> = (0..split.num_users)
        .into_par_iter()
        .map(|u| {
            let target = split
                .target(partition, u)
                .ok_or_else(|| Error::Data(format!("user {u} has no {partition} item")))?;
            let mut probe = model.probe(u, split.history(u))?;
            if let Some(f) = replace_probe {
                probe = f(&probe);
                if probe.len() != model.d() {
                    return Err(Error::Shape {
                        op: "replace_probe",
                        lhs: vec![model.d()],
                        rhs: vec![probe.len()],
                    });
                }
            }
            let scores = model.score_all(&probe);
            Ok(rank_of_target(&scores, target, |j| split.is_train_item(u, j)))
        })
        .collect::<Result<_>>()?;
    let mut metrics = EvalMetrics::from_ranks(&ranks, cutoffs);
    metrics.partition = Some(partition);
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rank_one_has_unit_gain() {
        let m = EvalMetrics::from_ranks(&[1], &[10]);
        assert_eq!(m.ndcg(10), Some(1.0));
        assert_eq!(m.hr(10), Some(1.0));
    }

    #[test]
    fn rank_eleven_hits_only_at_twenty() {
        let m = EvalMetrics::from_ranks(&[11], &[10, 20]);
        assert_eq!(m.hr(10), Some(0.0));
        assert_eq!(m.hr(20), Some(1.0));
        assert!((m.ndcg(20).unwrap() - 1.0 / 12f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn ties_rank_lower_indices_first() {
        let scores = [0.5, 0.5, 0.5, 0.9];
        assert_eq!(rank_of_target(&scores, 1, |_| false), 3);
        assert_eq!(rank_of_target(&scores, 1, |j| j == 3), 2);
        assert_eq!(rank_of_target(&scores, 0, |j| j == 3), 1);
        // A target that is also a train item stays a candidate.
        assert_eq!(rank_of_target(&scores, 3, |_| true), 1);
    }

    proptest! {
        #[test]
        fn rank_matches_sorting(scores in prop::collection::vec(-3i32..3, 2..30), pick in 0usize..30) {
            let scores: Vec<f32> = scores.into_iter().map(|s| s as f32).collect();
            let target = pick % scores.len();
            let mut order: Vec<usize> = (0..scores.len()).filter(|&j| j % 3 != 1 || j == target).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            let expected = order.iter().position(|&j| j == target).unwrap() + 1;
            prop_assert_eq!(rank_of_target(&scores, target, |j| j % 3 == 1), expected);
        }
    }
}
