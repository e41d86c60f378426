// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::Path;

use super::{
    k_core_filter, leave_one_out_split, load_item_meta, write_item_meta, DatasetManifest, IdMap, ItemMeta,
    LoadedInteractions, SplitDataset, MIN_POSITIVE_RATING,
};
use crate::error::{Error, Result};

const SPLIT: &str = "split.json";
const ITEMS: &str = "items.csv";
const USER_MAP: &str = "users.txt";
const ITEM_MAP: &str = "items.txt";
const MANIFEST: &str = "manifest.json";

/// A filtered, split dataset with its id maps and item metadata.
#[derive(Clone, Debug)]
pub struct PreparedDataset {
    pub split: SplitDataset,
    pub meta: Vec<ItemMeta>,
    pub users: IdMap,
    pub items: IdMap,
    pub manifest: DatasetManifest,
}

impl PreparedDataset {
    /// k-core filters `loaded`, re-indexes ids and metadata, and splits.
    /// `meta` is indexed by the loaded (pre-filter) item index.
    pub fn build(
        loaded: &LoadedInteractions,
        meta: Option<&[ItemMeta]>,
        k_core: usize,
        max_history_len: usize,
        seed: u64,
        source: &str,
    ) -> Result<Self> {
        let core = k_core_filter(&loaded.interactions, k_core)?;
        if core.interactions.is_empty() {
            return Err(Error::Data("k-core eliminated all data".into()));
        }
        let users = loaded.users.restrict(&core.users)?;
        let items = loaded.items.restrict(&core.items)?;
        let meta = core
            .items
            .iter()
            .enumerate()
            .map(|(new, &old)| {
                let mut m = meta
                    .and_then(|all| all.get(old).cloned())
                    .unwrap_or_else(|| ItemMeta::placeholder(new));
                m.item = new;
                if m.title.starts_with("item ") && m.categories.is_empty() {
                    m.title = format!("item {new}");
                }
                m
            })
            .collect();
        let split = leave_one_out_split(&core.interactions)?.with_max_history(max_history_len);
        let manifest = DatasetManifest {
            num_users: split.num_users,
            num_items: split.num_items,
            num_interactions: core.interactions.len(),
            num_train: split.num_train(),
            seed,
            k_core,
            min_rating: MIN_POSITIVE_RATING,
            max_history_len: split.max_history_len,
            user_map: USER_MAP.into(),
            item_map: ITEM_MAP.into(),
            source: source.into(),
        };
        Ok(Self {
            split,
            meta,
            users,
            items,
            manifest,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(SPLIT);
        std::fs::write(&path, serde_json::to_vec(&self.split)?).map_err(|e| Error::io(&path, e))?;
        write_item_meta(&dir.join(ITEMS), &self.meta, &self.items)?;
        self.users.save(&dir.join(USER_MAP))?;
        self.items.save(&dir.join(ITEM_MAP))?;
        let path = dir.join(MANIFEST);
        std::fs::write(&path, serde_json::to_vec_pretty(&self.manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<Vec<u8>> {
            let path = dir.join(name);
            std::fs::read(&path).map_err(|e| Error::io(&path, e))
        };
        let split: SplitDataset = serde_json::from_slice(&read(SPLIT)?)?;
        let manifest: DatasetManifest = serde_json::from_slice(&read(MANIFEST)?)?;
        let users = IdMap::load(&dir.join(USER_MAP))?;
        let items = IdMap::load(&dir.join(ITEM_MAP))?;
        if users.len() != split.num_users || items.len() != split.num_items {
            return Err(Error::Data(format!("{}: id maps do not match the split", dir.display())));
        }
        let meta = load_item_meta(&dir.join(ITEMS), &items)?;
        Ok(Self {
            split,
            meta,
            users,
            items,
            manifest,
        })
    }
}
