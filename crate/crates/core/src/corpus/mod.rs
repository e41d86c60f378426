// SPDX-License-Identifier: MIT OR Apache-2.0

//! Interaction logs: loading, k-core filtering, leave-one-out splitting and
//! BPR triple sampling.

mod filter;
mod load;
mod prepared;
mod sampler;
mod split;
pub mod synthetic;

use serde::{Deserialize, Serialize};

pub use filter::{k_core_filter, KCore};
pub use load::{
    flatten_text, load_interactions, load_item_meta, write_item_meta, IdMap, InputFormat, LoadedInteractions,
    MIN_POSITIVE_RATING,
};
pub use prepared::PreparedDataset;
pub use sampler::{batch_bpr_samples, stream_bpr_batches, BprBatches, BprTriple};
pub use split::{leave_one_out_split, Partition, SplitDataset, DEFAULT_MAX_HISTORY};

/// One positive (user, item, timestamp) event with dense indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub timestamp: i64,
}

impl Interaction {
    pub fn new(user: usize, item: usize, timestamp: i64) -> Self {
        Self { user, item, timestamp }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemMeta {
    pub item: usize,
    pub title: String,
    pub categories: Vec<String>,
}

impl ItemMeta {
    pub fn placeholder(item: usize) -> Self {
        Self {
            item,
            title: format!("item {item}"),
            categories: Vec::new(),
        }
    }
}

/// Machine-readable description of a prepared dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub num_users: usize,
    pub num_items: usize,
    pub num_interactions: usize,
    pub num_train: usize,
    pub seed: u64,
    pub k_core: usize,
    pub min_rating: f64,
    pub max_history_len: usize,
    pub user_map: String,
    pub item_map: String,
    pub source: String,
}
