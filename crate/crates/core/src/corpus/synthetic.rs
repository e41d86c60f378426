// SPDX-License-Identifier: MIT OR Apache-2.0

//! Planted-structure datasets for tests, demos and the bundled pipeline.
//!
//! - [`genre_dataset`]: users prefer one genre; items carry genre titles and
//!   categories, so concepts recovered from latents have a known answer.
//! - [`cyclic_markov`]: every user walks `i → i+1 (mod n)`.
//! - [`two_block`]: two disjoint user/item communities.

use std::io::Write;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{IdMap, Interaction, ItemMeta, LoadedInteractions};
use crate::error::{Error, Result};

const GENRES: [&str; 12] = [
    "Horror", "Comedy", "Jazz", "Baking", "Hiking", "Poetry", "Racing", "Gardening", "Chess", "Coffee",
    "Surfing", "Opera",
];
const NOUNS: [&str; 8] = ["Tales", "Collection", "Classics", "Essentials", "Anthology", "Favorites", "Guide", "Mix"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenreConfig {
    pub num_users: usize,
    pub num_genres: usize,
    pub items_per_genre: usize,
    pub min_events: usize,
    pub max_events: usize,
    /// Probability that an event comes from the user's home genre.
    pub home_affinity: f64,
    pub seed: u64,
}

impl Default for GenreConfig {
    fn default() -> Self {
        Self {
            num_users: 400,
            num_genres: 6,
            items_per_genre: 25,
            min_events: 12,
            max_events: 30,
            home_affinity: 0.9,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub interactions: Vec<Interaction>,
    pub meta: Vec<ItemMeta>,
    pub user_group: Vec<usize>,
    pub item_group: Vec<usize>,
}

impl SyntheticDataset {
    pub fn num_users(&self) -> usize {
        self.user_group.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_group.len()
    }

    /// Raw IDs are `u<index>` / `i<index>`.
    pub fn to_loaded(&self) -> LoadedInteractions {
        let users = IdMap::from_raw((0..self.num_users()).map(|u| format!("u{u}")).collect()).unwrap();
        let items = IdMap::from_raw((0..self.num_items()).map(|i| format!("i{i}")).collect()).unwrap();
        LoadedInteractions {
            interactions: self.interactions.clone(),
            users,
            items,
        }
    }

    /// Writes `interactions.csv` and `items.csv` in the loader's input layout.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("interactions.csv");
        let mut out = String::from("user,item,timestamp\n");
        for e in &self.interactions {
            out.push_str(&format!("u{},i{},{}\n", e.user, e.item, e.timestamp));
        }
        let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(&path, e))?;
        let loaded = self.to_loaded();
        super::write_item_meta(&dir.join("items.csv"), &self.meta, &loaded.items)
    }
}

/// Users each have a home genre and draw most events from it. Timestamps are
/// strictly increasing per user.
pub fn genre_dataset(cfg: &GenreConfig) -> Result<SyntheticDataset> {
    if cfg.num_genres == 0 || cfg.num_genres > GENRES.len() {
        return Err(Error::invalid(
            "genre_dataset",
            format!("num_genres must be in 1..={}", GENRES.len()),
        ));
    }
    if cfg.items_per_genre == 0 || cfg.min_events < 3 || cfg.max_events < cfg.min_events {
        return Err(Error::invalid("genre_dataset", "invalid item or event counts"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let num_items = cfg.num_genres * cfg.items_per_genre;
    let item_group: Vec<usize> = (0..num_items).map(|i| i / cfg.items_per_genre).collect();
    let meta = (0..num_items)
        .map(|i| {
            let g = item_group[i];
            let local = i % cfg.items_per_genre;
            let noun = NOUNS[local % NOUNS.len()];
            ItemMeta {
                item: i,
                title: format!("{} {} Vol. {}", GENRES[g], noun, local + 1),
                categories: vec![GENRES[g].to_string(), noun.to_string()],
            }
        })
        .collect();

    let mut interactions = Vec::new();
    let mut user_group = Vec::with_capacity(cfg.num_users);
    for u in 0..cfg.num_users {
        let home = u % cfg.num_genres;
        user_group.push(home);
        let n = rng.random_range(cfg.min_events..=cfg.max_events);
        let mut t = rng.random_range(0..1_000i64);
        for _ in 0..n {
            let g = if rng.random_bool(cfg.home_affinity) {
                home
            } else {
                rng.random_range(0..cfg.num_genres)
            };
            // Within a genre, lower-numbered items are more popular.
            let a = rng.random_range(0..cfg.items_per_genre);
            let b = rng.random_range(0..cfg.items_per_genre);
            let item = g * cfg.items_per_genre + a.min(b);
            t += rng.random_range(1..100i64);
            interactions.push(Interaction::new(u, item, t));
        }
    }
    Ok(SyntheticDataset {
        interactions,
        meta,
        user_group,
        item_group,
    })
}

/// Each user starts at a random item and walks `i → i+1 (mod num_items)` for
/// `length` events.
pub fn cyclic_markov(num_items: usize, num_users: usize, length: usize, seed: u64) -> SyntheticDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut interactions = Vec::with_capacity(num_users * length);
    for u in 0..num_users {
        let start = rng.random_range(0..num_items);
        for step in 0..length {
            interactions.push(Interaction::new(u, (start + step) % num_items, step as i64));
        }
    }
    SyntheticDataset {
        interactions,
        meta: (0..num_items).map(ItemMeta::placeholder).collect(),
        user_group: vec![0; num_users],
        item_group: vec![0; num_items],
    }
}

/// Users `< num_users/2` interact only with items `< num_items/2`, the rest
/// only with the upper half. Each user has `events` distinct items.
pub fn two_block(num_users: usize, num_items: usize, events: usize, seed: u64) -> SyntheticDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half_items = num_items / 2;
    let mut interactions = Vec::new();
    let mut user_group = Vec::with_capacity(num_users);
    for u in 0..num_users {
        let block = usize::from(u >= num_users / 2);
        user_group.push(block);
        let pool: Vec<usize> = if block == 0 {
            (0..half_items).collect()
        } else {
            (half_items..num_items).collect()
        };
        let chosen: Vec<usize> = pool.choose_multiple(&mut rng, events.min(pool.len())).copied().collect();
        for (t, item) in chosen.into_iter().enumerate() {
            interactions.push(Interaction::new(u, item, t as i64));
        }
    }
    SyntheticDataset {
        interactions,
        meta: (0..num_items).map(ItemMeta::placeholder).collect(),
        user_group,
        item_group: (0..num_items).map(|i| usize::from(i >= half_items)).collect(),
    }
}
